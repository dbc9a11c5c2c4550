#include <gtest/gtest.h>

#include <cmath>
#include <regex>
#include <sstream>

#include "groupcast/report.hpp"
#include "groupcast/svg.hpp"

using namespace groupcast;

TEST(Predictions, RoundTripIsExact) {
  const std::vector<PredictionRow> rows{{15, 3, {0.1, -2.0 / 3.0}, 0}, {16, 3, {1e-17, 12345.678}, 0}};
  std::stringstream buf;
  write_predictions(rows, buf);
  EXPECT_EQ(parse_predictions(buf), rows);
}

TEST(Predictions, MalformedRowsReportLine) {
  std::istringstream in("# frame\tped_id\tx\ty\twindow_start\n1 2 3 4 0\n1 2 3\n");
  try {
    parse_predictions(in);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Predictions, ScoredPerWindow) {
  Scene truth;
  truth.trajectories.push_back({1, {{0, {0, 0}}, {1, {1, 0}}, {2, {2, 0}}, {3, {3, 0}}}});
  // Two windows of the same pedestrian: one exact, one off by 2 at both steps.
  const std::vector<PredictionRow> rows{
      {2, 1, {2, 0}, 0}, {3, 1, {3, 0}, 0}, {2, 1, {2, 2}, 1}, {3, 1, {3, -2}, 1}};
  const auto s = score_predictions(rows, truth);
  EXPECT_EQ(s.windows, 2u);
  EXPECT_DOUBLE_EQ(s.mean.ade, 1.0);
  EXPECT_DOUBLE_EQ(s.mean.fde, 1.0);
  const std::vector<PredictionRow> missing{{9, 1, {0, 0}, 0}};
  EXPECT_THROW(score_predictions(missing, truth), ValidationError);
}

TEST(TrainingLog, HeaderAndNan) {
  std::vector<EpochRecord> h(2);
  h[0] = {1, std::numeric_limits<double>::quiet_NaN(), 0.5, 0.25, 2.0};
  h[1] = {2, 0.75, 0.125, 0.25, std::numeric_limits<double>::quiet_NaN()};
  std::ostringstream out;
  write_training_log(h, out);
  EXPECT_EQ(out.str(), "epoch,loss_D,loss_G,sparsity,val_ADE\n1,nan,0.5,0.25,2\n2,0.75,0.125,0.25,nan\n");
}

TEST(Scores, RowsIncludePooledAndSceneMean) {
  const Partition truth = Partition::from_groups({{1, 2}, {3}});
  const Partition all_one = Partition::from_groups({{1, 2, 3}});
  const auto rows = group_score_rows({{"a", truth, truth}, {"b", all_one, truth}});
  ASSERT_EQ(rows.size(), 8u);
  EXPECT_EQ(rows[0].scene_id, "a");
  EXPECT_EQ(rows[2].scene_id, "pooled");
  EXPECT_EQ(rows[3].scene_id, "scene_mean");
  EXPECT_EQ(rows[0].metric, "pairwise");
  EXPECT_EQ(rows[4].metric, "group_mitre");
  // Pairwise: a has 1/1 links, b predicts 3 with 1 correct.
  EXPECT_DOUBLE_EQ(rows[1].precision, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(rows[2].precision, 2.0 / 4.0);
  EXPECT_DOUBLE_EQ(rows[3].precision, (1.0 + 1.0 / 3.0) / 2.0);
  std::ostringstream out;
  write_scores(rows, out);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "scene_id,metric,precision,recall");
  EXPECT_NE(out.str().find("a,pairwise,1,1\n"), std::string::npos);
}

TEST(Svg, ForecastHasOneGroupPerTrack) {
  const std::vector<svg::ForecastTrack> tracks{
      {1, 0, {{0, 0}, {1, 0}}, {{2, 0}}, {{2, 0.5}}},
      {2, 3, {{0, 1}, {1, 1}}, {{2, 1}}, {{2, 1.5}}}};
  std::ostringstream out;
  svg::write_forecast_svg(tracks, out);
  const std::string s = out.str();
  EXPECT_EQ(s.rfind("<svg", 0), 0u);
  EXPECT_NE(s.find("</svg>"), std::string::npos);
  const std::regex g("<g class=\"pedestrian\"");
  EXPECT_EQ(std::distance(std::sregex_iterator(s.begin(), s.end(), g), std::sregex_iterator()), 2);
  EXPECT_NE(s.find("data-ped=\"2\" data-start=\"3\""), std::string::npos);
}

TEST(Svg, GroupPlotColoursByGroup) {
  Scene scene;
  for (PedId p = 1; p <= 3; ++p) {
    scene.trajectories.push_back({p, {{0, {0, static_cast<double>(p)}}, {1, {1, static_cast<double>(p)}}}});
  }
  std::ostringstream out;
  svg::write_group_svg(scene, Partition::from_groups({{1, 3}, {2}}), out);
  const std::string s = out.str();
  const std::regex g("<g class=\"group\"");
  EXPECT_EQ(std::distance(std::sregex_iterator(s.begin(), s.end(), g), std::sregex_iterator()), 2);
  EXPECT_NE(s.find(svg::palette()[0]), std::string::npos);
  EXPECT_NE(s.find(svg::palette()[1]), std::string::npos);
}
