#pragma once

// Checkpoint container. All integers little-endian, doubles as IEEE-754
// binary64 little-endian:
//
//   magic    8 bytes  "GCASTCK\0"
//   version  u32      (currently 1)
//   count    u32      number of entries
//   entries, sorted by name:
//     name_len u32, name bytes (UTF-8)
//     kind     u8     1 = tensor, 2 = text
//     tensor:  rank u32, dims u64[rank], count u64, values f64[count]
//     text:    length u64, bytes
//
// Doubles are copied bit-for-bit, so save/load round trips are exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include "groupcast/error.hpp"
#include "groupcast/nn/tensor.hpp"

namespace groupcast::nn {

class Checkpoint {
 public:
  static constexpr char kMagic[8] = {'G', 'C', 'A', 'S', 'T', 'C', 'K', '\0'};
  static constexpr std::uint32_t kVersion = 1;

  void put(const std::string& name, Tensor t) { tensors_[name] = std::move(t); }
  void put_text(const std::string& name, std::string text) { texts_[name] = std::move(text); }

  bool has(const std::string& name) const { return tensors_.count(name) != 0; }
  bool has_text(const std::string& name) const { return texts_.count(name) != 0; }

  const Tensor& get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw Error("checkpoint has no tensor '" + name + "'");
    return it->second;
  }
  const std::string& text(const std::string& name) const {
    auto it = texts_.find(name);
    if (it == texts_.end()) throw Error("checkpoint has no text entry '" + name + "'");
    return it->second;
  }

  const std::map<std::string, Tensor>& tensors() const { return tensors_; }
  const std::map<std::string, std::string>& texts() const { return texts_; }

  void write(std::ostream& out) const {
    out.write(kMagic, sizeof(kMagic));
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(tensors_.size() + texts_.size()));
    // Merge both maps in name order so the byte stream is canonical.
    auto ti = tensors_.begin();
    auto si = texts_.begin();
    while (ti != tensors_.end() || si != texts_.end()) {
      const bool take_tensor =
          si == texts_.end() || (ti != tensors_.end() && ti->first < si->first);
      if (take_tensor) {
        put_name(out, ti->first);
        out.put(1);
        const Tensor& t = ti->second;
        put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        for (std::size_t d : t.shape) put_u64(out, d);
        put_u64(out, t.values.size());
        for (double v : t.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
        ++ti;
      } else {
        put_name(out, si->first);
        out.put(2);
        put_u64(out, si->second.size());
        out.write(si->second.data(), static_cast<std::streamsize>(si->second.size()));
        ++si;
      }
    }
    if (!out) throw Error("checkpoint write failed");
  }

  static Checkpoint read(std::istream& in) {
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
      throw Error("not a checkpoint file (bad magic)");
    }
    const std::uint32_t version = get_u32(in);
    if (version != kVersion) {
      throw Error("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ck;
    const std::uint32_t count = get_u32(in);
    for (std::uint32_t e = 0; e < count; ++e) {
      const std::uint32_t name_len = get_u32(in);
      std::string name(name_len, '\0');
      in.read(name.data(), name_len);
      const int kind = in.get();
      if (!in) throw Error("truncated checkpoint");
      if (kind == 1) {
        const std::uint32_t rank = get_u32(in);
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(get_u64(in));
        const std::uint64_t n = get_u64(in);
        if (n != Tensor::count(shape)) throw Error("checkpoint tensor '" + name + "' has bad size");
        std::vector<double> values(n);
        for (auto& v : values) v = std::bit_cast<double>(get_u64(in));
        ck.tensors_[name] = Tensor(std::move(shape), std::move(values));
      } else if (kind == 2) {
        const std::uint64_t n = get_u64(in);
        std::string text(n, '\0');
        in.read(text.data(), static_cast<std::streamsize>(n));
        ck.texts_[name] = std::move(text);
      } else {
        throw Error("checkpoint entry '" + name + "' has unknown kind");
      }
      if (!in) throw Error("truncated checkpoint");
    }
    return ck;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    write(out);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    return read(in);
  }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;

 private:
  static void put_u32(std::ostream& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  static void put_u64(std::ostream& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  static void put_name(std::ostream& out, const std::string& name) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
  }
  static std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw Error("truncated checkpoint");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  static std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw Error("truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  std::map<std::string, Tensor> tensors_;
  std::map<std::string, std::string> texts_;
};

}  // namespace groupcast::nn
