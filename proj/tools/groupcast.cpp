// groupcast: synthetic data, training, forecasting, group detection and
// evaluation from the command line.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <unistd.h>
#include <vector>

#include "groupcast/data_model.hpp"
#include "groupcast/error.hpp"
#include "groupcast/gan.hpp"
#include "groupcast/grouping.hpp"
#include "groupcast/metrics.hpp"
#include "groupcast/parallel.hpp"
#include "groupcast/report.hpp"
#include "groupcast/svg.hpp"
#include "groupcast/synth.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace groupcast;

namespace {

constexpr const char* kConfigEnv = "GROUPCAST_CONFIG";

/// Writes through a temporary sibling and renames, so a failed run never
/// leaves a half-written file behind.
void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  const fs::path tmp = path.string() + ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    body(out);
    out.flush();
    if (!out) {
      fs::remove(tmp);
      throw Error("write failed for " + path.string());
    }
  }
  fs::rename(tmp, path);
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

// ---------------------------------------------------------------------------
// Config files: a flat JSON object whose keys are long flag names. Values are
// injected as arguments ahead of the real ones; keys given on the command
// line are skipped so flags win.

std::string config_path(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return argv[i + 1];
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  if (const char* env = std::getenv(kConfigEnv)) return env;
  return {};
}

std::set<std::string> flags_given(int argc, char** argv) {
  std::set<std::string> out;
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    if (a.rfind("--", 0) != 0) continue;
    a = a.substr(2);
    out.insert(a.substr(0, a.find('=')));
  }
  return out;
}

std::vector<std::string> config_arguments(const json& cfg, const CLI::App& sub,
                                          const std::set<std::string>& given) {
  if (!cfg.is_object()) throw ValidationError("config file must hold a JSON object");
  std::vector<std::string> args;
  for (const auto& [key, value] : cfg.items()) {
    const CLI::Option* opt = nullptr;
    try {
      opt = sub.get_option("--" + key);
    } catch (const CLI::OptionNotFound&) {
      throw ValidationError("unknown config key '" + key + "' for command " + sub.get_name());
    }
    if (key == "config" || given.count(key)) continue;
    auto scalar = [&](const json& v) {
      if (v.is_string()) return v.get<std::string>();
      if (v.is_number_integer()) return std::to_string(v.get<long long>());
      if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
      if (v.is_number_float()) return detail::format_number(v.get<double>());
      throw ValidationError("config key '" + key + "' has an unsupported value");
    };
    if (opt->get_type_size() == 0) {
      if (!value.is_boolean()) throw ValidationError("config key '" + key + "' must be true/false");
      if (value.get<bool>()) args.push_back("--" + key);
      continue;
    }
    args.push_back("--" + key);
    if (value.is_array()) {
      for (const auto& v : value) args.push_back(scalar(v));
    } else {
      args.push_back(scalar(value));
    }
  }
  return args;
}

void log_resolved(const CLI::App& sub) {
  json j = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string name = opt->get_lnames().front();
    if (name == "help") continue;
    if (opt->get_type_size() == 0) {
      j[name] = opt->count() > 0;
    } else if (opt->count() > 0) {
      const auto& r = opt->results();
      j[name] = r.size() == 1 ? json(r.front()) : json(r);
    } else {
      j[name] = opt->get_default_str();
    }
  }
  std::cerr << "groupcast " << sub.get_name() << ": resolved config " << j.dump() << "\n";
}

// ---------------------------------------------------------------------------
// Corpus directories: scene_XXXX.tsv (+ .groups) and splits.tsv.

struct LoadedScene {
  std::string name;
  Scene scene;
};

std::vector<LoadedScene> load_split(const fs::path& dir, const std::string& split) {
  std::vector<std::string> names;
  const fs::path splits = dir / "splits.tsv";
  if (fs::exists(splits)) {
    auto in = detail::open_input(splits.string());
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
      ++no;
      if (detail::is_blank_or_comment(line)) continue;
      const auto tok = detail::split_ws(line);
      if (tok.size() != 2) throw ParseError(splits.string(), no, "expected 'scene split'");
      if (tok[1] == split) names.emplace_back(tok[0]);
    }
  } else if (split == "train") {
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().extension() == ".tsv") names.push_back(e.path().stem().string());
    }
    std::sort(names.begin(), names.end());
  }
  std::vector<LoadedScene> out;
  for (const auto& n : names) {
    const fs::path labels = dir / (n + ".groups");
    out.push_back({n, load_scene((dir / (n + ".tsv")).string(),
                                 fs::exists(labels) ? std::optional<std::string>(labels.string())
                                                    : std::nullopt)});
  }
  return out;
}

std::vector<Window> windows_of(const std::vector<LoadedScene>& scenes, const WindowParams& p) {
  std::vector<Window> out;
  for (const auto& s : scenes) {
    auto w = make_windows(s.scene, p);
    out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  SynthConfig config;
  std::string out;
  std::size_t scenes = 100;
  std::size_t threads = default_thread_count();
};

void add_synth(CLI::App& app, SynthOptions& o) {
  auto& c = o.config;
  app.add_option("--out", o.out, "Output directory for the corpus")->required();
  app.add_option("--scenes", o.scenes, "Number of scenes (>= 3)");
  app.add_option("--seed", c.seed, "Random seed");
  app.add_option("--min-groups", c.min_groups, "Fewest groups per scene");
  app.add_option("--max-groups", c.max_groups, "Most groups per scene");
  app.add_option("--min-group-size", c.min_group_size, "Smallest group");
  app.add_option("--max-group-size", c.max_group_size, "Largest group");
  app.add_option("--min-pedestrians", c.min_pedestrians, "Fewest pedestrians per scene");
  app.add_option("--max-pedestrians", c.max_pedestrians, "Most pedestrians per scene");
  app.add_option("--scene-extent", c.scene_extent, "Side of the start area (m)");
  app.add_option("--min-speed", c.min_speed, "Slowest group speed (m/s)");
  app.add_option("--max-speed", c.max_speed, "Fastest group speed (m/s)");
  app.add_option("--noise-sigma", c.noise_sigma, "Per-step positional jitter (m)");
  app.add_option("--cohesion", c.cohesion_strength, "Pull toward the group centroid (1/s)");
  app.add_option("--repulsion", c.repulsion_strength, "Pairwise repulsion strength (m/s)");
  app.add_option("--repulsion-radius", c.repulsion_radius, "Repulsion range (m)");
  app.add_option("--member-spacing", c.member_spacing, "Start distance from group centre (m)");
  app.add_option("--min-heading-separation", c.min_heading_separation_deg,
                 "Smallest angle between group headings (degrees)");
  app.add_option("--min-group-separation", c.min_group_separation,
                 "Smallest distance between group start centres (m)");
  app.add_option("--frames", c.frames, "Frames per scene");
  app.add_option("--frame-rate", c.frame_rate, "Frames per second");
  app.add_option("--threads", o.threads, "Worker threads");
}

int run_synth(const SynthOptions& o) {
  validate(o.config);
  const Corpus corpus = generate_corpus(o.config, o.scenes, o.threads);
  const fs::path out(o.out);
  if (fs::exists(out) && !fs::is_directory(out)) throw Error(o.out + " exists and is not a directory");
  const fs::path staging = out.string() + ".partial" + std::to_string(::getpid());
  fs::remove_all(staging);
  try {
    fs::create_directories(staging);
    for (const auto& s : corpus.scenes) {
      write_file(staging / (s.name + ".tsv"), [&](std::ostream& os) { write_annotations(s.scene, os); });
      write_file(staging / (s.name + ".groups"),
                 [&](std::ostream& os) { write_partition(*s.scene.group_labels, os); });
    }
    write_file(staging / "splits.tsv", [&](std::ostream& os) {
      std::map<std::string, std::string> split;
      for (const auto& n : corpus.train) split[n] = "train";
      for (const auto& n : corpus.validation) split[n] = "validation";
      for (const auto& n : corpus.test) split[n] = "test";
      for (const auto& [n, s] : split) os << n << '\t' << s << '\n';
    });
    if (!fs::exists(out)) {
      fs::rename(staging, out);
    } else {
      for (const auto& e : fs::directory_iterator(staging)) {
        fs::rename(e.path(), out / e.path().filename());
      }
      fs::remove_all(staging);
    }
  } catch (const fs::filesystem_error& e) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    throw Error(std::string("cannot write corpus: ") + e.what());
  } catch (...) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    throw;
  }
  std::cerr << "wrote " << corpus.scenes.size() << " scenes (" << corpus.train.size() << " train, "
            << corpus.validation.size() << " validation, " << corpus.test.size() << " test) to "
            << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  TrainConfig train;
  ModelConfig model;
  std::string mode = "gd-gan";
  std::string data;
  std::string out = "model.ckpt";
  std::string log = "train_log.csv";
  std::string resume;
  std::size_t stride = 0;
};

void add_model_options(CLI::App& app, ModelConfig& m) {
  app.add_option("--hidden", m.encoder.hidden_size, "Encoder hidden size");
  app.add_option("--attention-size", m.encoder.attention_size, "Attention scoring layer width");
  app.add_option("--generator-hidden", m.generator_hidden, "Generator hidden size");
  app.add_option("--discriminator-hidden", m.discriminator_hidden, "Discriminator hidden size");
  app.add_option("--z-dim", m.z_dim, "Noise dimension");
  app.add_option("--t-obs", m.t_obs, "Observed frames per window");
  app.add_option("--t-pred", m.t_pred, "Observed plus predicted frames per window");
}

void add_train(CLI::App& app, TrainOptions& o) {
  app.add_option("--data", o.data, "Corpus directory (scene TSVs and splits.tsv)")->required();
  app.add_option("--out", o.out, "Checkpoint path");
  app.add_option("--log", o.log, "Training log CSV path");
  app.add_option("--resume", o.resume, "Continue from this checkpoint");
  app.add_option("--epochs", o.train.epochs, "Total generator epochs");
  app.add_option("--lambda", o.train.lambda, "Sparsity weight");
  app.add_option("--l2-weight", o.train.l2_weight,
                 "Weight of the supervised reconstruction term in adversarial modes");
  app.add_option("--lr", o.train.learning_rate, "Adam learning rate");
  app.add_option("--batch", o.train.batch_size, "Mini-batch size");
  app.add_option("--mode", o.mode, "gd-gan, no-gan, unconditional-gan or no-l1")
      ->check(CLI::IsMember({"gd-gan", "no-gan", "unconditional-gan", "no-l1"}));
  app.add_option("--seed", o.train.seed, "Random seed");
  app.add_option("--clip", o.train.clip_norm, "Global gradient-norm clip");
  app.add_option("--stride", o.stride, "Window stride in frames (default t-obs)");
  app.add_option("--threads", o.train.threads, "Worker threads");
  add_model_options(app, o.model);
}

int run_train(TrainOptions o) {
  o.train.mode = parse_train_mode(o.mode);
  TrainState state;
  if (!o.resume.empty()) {
    const auto ck = nn::Checkpoint::load(o.resume);
    state = train_state_from_checkpoint(ck);
    const TrainConfig stored = train_config_from_checkpoint(ck);
    const std::size_t epochs = o.train.epochs, threads = o.train.threads;
    o.train = stored;
    o.train.epochs = epochs;
    o.train.threads = threads;
    o.model = state.model.config;
    std::cerr << "resuming from " << o.resume << " after epoch " << state.epochs_done()
              << " (stored mode " << to_string(o.train.mode) << ", seed " << o.train.seed << ")\n";
  } else {
    validate(o.train);
    validate(o.model);
    state = init_train_state(o.model, o.train);
  }
  const WindowParams wp{o.model.t_obs, o.model.t_pred, o.stride ? o.stride : o.model.t_obs};
  const auto train_windows = windows_of(load_split(o.data, "train"), wp);
  const auto val_windows = windows_of(load_split(o.data, "validation"), wp);
  if (train_windows.empty()) throw ValidationError("no training windows in " + o.data);
  std::cerr << train_windows.size() << " training windows, " << val_windows.size()
            << " validation windows\n";

  auto save = [&] {
    write_file(o.out, [&](std::ostream& os) { to_checkpoint(state, o.train).write(os); });
    write_file(o.log, [&](std::ostream& os) { write_training_log(state.history, os); });
  };
  train_epochs(state, train_windows, val_windows, o.train, [&](const EpochRecord& r) {
    std::cerr << "epoch " << r.epoch << " loss_D " << r.loss_d << " loss_G " << r.loss_g
              << " sparsity " << r.sparsity << " val_ADE " << r.val_ade << "\n";
    save();
  });
  save();
  std::cerr << "best epoch " << state.best_epoch << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// predict

struct PredictOptions {
  std::string checkpoint;
  std::string scene;
  std::string out = "predictions.tsv";
  std::string svg;
  std::uint64_t seed = 1;
  std::size_t stride = 0;
  std::size_t threads = default_thread_count();
};

void add_predict(CLI::App& app, PredictOptions& o) {
  app.add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required();
  app.add_option("--scene", o.scene, "Scene annotation TSV")->required();
  app.add_option("--out", o.out, "Predictions TSV path");
  app.add_option("--svg", o.svg, "Optional SVG plot path");
  app.add_option("--seed", o.seed, "Noise seed");
  app.add_option("--stride", o.stride, "Window stride in frames (default t-obs)");
  app.add_option("--threads", o.threads, "Worker threads");
}

int run_predict(const PredictOptions& o) {
  const Model model = model_from_checkpoint(nn::Checkpoint::load(o.checkpoint));
  const Scene scene = load_scene(o.scene);
  const auto& c = model.config;
  const auto windows = make_windows(scene, {c.t_obs, c.t_pred, o.stride ? o.stride : c.t_obs});
  if (windows.empty()) throw ValidationError("scene has no complete window of " + std::to_string(c.t_pred) + " frames");
  const FrameIndex step = frame_step(scene);
  std::vector<GenerateResult> results(windows.size());
  parallel_for(windows.size(), o.threads, [&](std::size_t i) {
    results[i] = generate(windows[i], model, window_noise(o.seed, i, c));
  });
  std::vector<PredictionRow> rows;
  std::vector<svg::ForecastTrack> tracks;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    const auto& pos = results[i].trajectory.positions;
    for (std::size_t k = 0; k < pos.size(); ++k) {
      rows.push_back({w.start_frame + static_cast<FrameIndex>(c.t_obs + k) * step, w.ped_id, pos[k],
                      w.start_frame});
    }
    tracks.push_back({w.ped_id, w.start_frame, w.observed, w.future, pos});
  }
  write_file(o.out, [&](std::ostream& os) { write_predictions(rows, os); });
  if (!o.svg.empty()) write_file(o.svg, [&](std::ostream& os) { svg::write_forecast_svg(tracks, os); });
  std::cerr << "wrote " << windows.size() << " forecasts to " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// group

struct GroupOptions {
  std::string checkpoint;
  std::string scene;
  std::string out = "groups.txt";
  std::string eta;
  std::string svg;
  TsneConfig tsne;
  DbscanConfig dbscan;
  std::size_t threads = default_thread_count();
};

void add_group(CLI::App& app, GroupOptions& o) {
  app.add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required();
  app.add_option("--scene", o.scene, "Scene annotation TSV")->required();
  app.add_option("--out", o.out, "Partition output path");
  app.add_option("--eta", o.eta, "Optional CSV of 2-D embeddings");
  app.add_option("--svg", o.svg, "Optional SVG plot path");
  app.add_option("--seed", o.tsne.seed, "t-SNE seed");
  app.add_option("--perplexity", o.tsne.perplexity, "t-SNE perplexity upper bound");
  app.add_option("--tsne-iterations", o.tsne.iterations, "t-SNE iterations");
  app.add_option("--tsne-learning-rate", o.tsne.learning_rate, "t-SNE learning rate");
  app.add_option("--exaggeration", o.tsne.early_exaggeration, "Early exaggeration factor");
  app.add_option("--exaggeration-iterations", o.tsne.early_exaggeration_iters,
                 "Iterations with early exaggeration");
  app.add_option("--epsilon", o.dbscan.epsilon, "DBSCAN radius in the unit-RMS embedding");
  app.add_option("--min-pts", o.dbscan.min_pts, "DBSCAN minimum neighbourhood size");
  app.add_option("--threads", o.threads, "Worker threads");
}

int run_group(const GroupOptions& o) {
  if (!(o.dbscan.epsilon > 0)) throw ValidationError("epsilon must be positive");
  if (o.dbscan.min_pts < 1) throw ValidationError("min-pts must be >= 1");
  if (!(o.tsne.perplexity > 0) || o.tsne.iterations < 1) {
    throw ValidationError("perplexity must be positive and tsne-iterations >= 1");
  }
  const Model model = model_from_checkpoint(nn::Checkpoint::load(o.checkpoint));
  const Scene scene = load_scene(o.scene);
  if (scene.trajectories.empty()) throw ValidationError("scene has no pedestrians");
  const auto g = detect_groups(scene, model, o.tsne, o.dbscan, o.threads);
  write_file(o.out, [&](std::ostream& os) { write_partition(g.partition, os); });
  if (!o.eta.empty()) {
    write_file(o.eta, [&](std::ostream& os) {
      os << "ped_id,eta_x,eta_y,cluster\n";
      for (std::size_t i = 0; i < g.ped_ids.size(); ++i) {
        os << g.ped_ids[i] << ',' << detail::format_number(g.eta(static_cast<Eigen::Index>(i), 0))
           << ',' << detail::format_number(g.eta(static_cast<Eigen::Index>(i), 1)) << ','
           << g.labels[i] << '\n';
      }
    });
  }
  if (!o.svg.empty()) {
    write_file(o.svg, [&](std::ostream& os) { svg::write_group_svg(scene, g.partition, os); });
  }
  if (!g.excluded.empty()) {
    std::cerr << g.excluded.size() << " pedestrian(s) without a complete window kept as singletons\n";
  }
  std::cerr << "found " << g.partition.groups().size() << " groups among " << g.partition.size()
            << " pedestrians\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::vector<std::string> predictions;
  std::vector<std::string> partitions;
  std::vector<std::string> truth;
  std::string out = "metrics.csv";
};

void add_eval(CLI::App& app, EvalOptions& o) {
  auto* p = app.add_option("--predictions", o.predictions, "Prediction TSV files");
  auto* g = app.add_option("--partitions", o.partitions, "Predicted partition files");
  p->excludes(g);
  app.add_option("--truth", o.truth,
                 "Ground truth, paired by position: scene TSVs for predictions, partition files "
                 "for partitions")
      ->required();
  app.add_option("--out", o.out, "Metrics CSV path");
}

int run_eval(const EvalOptions& o) {
  const auto& inputs = o.predictions.empty() ? o.partitions : o.predictions;
  if (inputs.empty()) throw ValidationError("give --predictions or --partitions");
  if (inputs.size() != o.truth.size()) {
    throw ValidationError("need one --truth file per input (" + std::to_string(inputs.size()) +
                          " inputs, " + std::to_string(o.truth.size()) + " truth files)");
  }
  if (!o.predictions.empty()) {
    std::vector<std::tuple<std::string, ForecastScore>> scores;
    TrajectoryError pooled;
    std::size_t windows = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const auto s = score_predictions(load_predictions(inputs[i]), load_annotations(o.truth[i]));
      scores.emplace_back(stem_of(inputs[i]), s);
      pooled.ade += s.mean.ade * static_cast<double>(s.windows);
      pooled.fde += s.mean.fde * static_cast<double>(s.windows);
      windows += s.windows;
    }
    write_file(o.out, [&](std::ostream& os) {
      os << "scene_id,windows,ade,fde\n";
      for (const auto& [id, s] : scores) {
        os << id << ',' << s.windows << ',' << detail::format_number(s.mean.ade) << ','
           << detail::format_number(s.mean.fde) << '\n';
      }
      const double n = static_cast<double>(std::max<std::size_t>(1, windows));
      os << "pooled," << windows << ',' << detail::format_number(pooled.ade / n) << ','
         << detail::format_number(pooled.fde / n) << '\n';
    });
  } else {
    std::vector<std::tuple<std::string, Partition, Partition>> scenes;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      Partition predicted = load_partition(inputs[i]);
      Partition truth = load_partition(o.truth[i]);
      if (predicted.members() != truth.members()) {
        throw ValidationError(inputs[i] + " and " + o.truth[i] + " cover different pedestrians");
      }
      scenes.emplace_back(stem_of(inputs[i]), std::move(predicted), std::move(truth));
    }
    const auto rows = group_score_rows(scenes);
    write_file(o.out, [&](std::ostream& os) { write_scores(rows, os); });
  }
  std::cerr << "wrote " << o.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory forecasting and group detection for pedestrian crowds"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  std::string config_file;
  app.add_option("--config", config_file,
                 std::string("JSON config file of flag values (default: $") + kConfigEnv + ")");

  SynthOptions synth;
  TrainOptions train;
  PredictOptions predict;
  GroupOptions group;
  EvalOptions eval;
  std::map<std::string, CLI::App*> subs;
  subs["synth"] = app.add_subcommand("synth", "Generate a synthetic corpus with group labels");
  subs["train"] = app.add_subcommand("train", "Train the forecaster on a corpus");
  subs["predict"] = app.add_subcommand("predict", "Forecast every window of a scene");
  subs["group"] = app.add_subcommand("group", "Detect groups in a scene");
  subs["eval"] = app.add_subcommand("eval", "Score predictions or partitions against ground truth");
  add_synth(*subs["synth"], synth);
  add_train(*subs["train"], train);
  add_predict(*subs["predict"], predict);
  add_group(*subs["group"], group);
  add_eval(*subs["eval"], eval);
  for (auto& [name, sub] : subs) {
    sub->add_option("--config", config_file, "JSON config file of flag values");
  }

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    const std::string cfg_path = config_path(argc, argv);
    if (!cfg_path.empty()) {
      std::string cmd;
      std::size_t pos = 0;
      for (; pos < args.size(); ++pos) {
        if (subs.count(args[pos])) {
          cmd = args[pos];
          break;
        }
      }
      if (!cmd.empty()) {
        std::ifstream in(cfg_path);
        if (!in) throw Error("cannot open config file " + cfg_path);
        json cfg;
        try {
          cfg = json::parse(in);
        } catch (const json::parse_error& e) {
          throw ValidationError("config file " + cfg_path + ": " + e.what());
        }
        const auto extra = config_arguments(cfg, *subs[cmd], flags_given(argc, argv));
        args.insert(args.begin() + static_cast<std::ptrdiff_t>(pos) + 1, extra.begin(), extra.end());
      }
    }
    std::reverse(args.begin(), args.end());
    try {
      app.parse(args);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e);
      return code == 0 ? 0 : 1;
    }
    for (auto& [name, sub] : subs) {
      if (!sub->parsed()) continue;
      log_resolved(*sub);
      if (name == "synth") return run_synth(synth);
      if (name == "train") return run_train(train);
      if (name == "predict") return run_predict(predict);
      if (name == "group") return run_group(group);
      if (name == "eval") return run_eval(eval);
    }
    return 1;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ContractViolation& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
