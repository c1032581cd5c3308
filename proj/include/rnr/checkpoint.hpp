#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "rnr/config.hpp"
#include "rnr/model.hpp"

namespace rnr {

// Checkpoint file: little-endian, 32-bit float payload.
//   magic "RNRCKPT\0" | u32 version | u64 fingerprint | u32 config_len |
//   config text | u32 n_entries | entries | u64 payload_count | floats
// Entry: u16 name_len | name | u8 dtype(0=f32) | u8 rank | i32 extents[rank]
//        | u64 offset | u64 count
namespace ckpt_detail {

constexpr char kMagic[8] = {'R', 'N', 'R', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("checkpoint " + path + ": truncated file");
  return v;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const ParamStore<float>& params, const TrainConfig& cfg,
                            const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint: " + path);
  using namespace ckpt_detail;
  f.write(kMagic, 8);
  put<std::uint32_t>(f, kVersion);
  put<std::uint64_t>(f, cfg.fingerprint());
  const std::string text = cfg.canonical_text();
  put<std::uint32_t>(f, static_cast<std::uint32_t>(text.size()));
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  put<std::uint32_t>(f, static_cast<std::uint32_t>(params.count()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : params.all()) {
    put<std::uint16_t>(f, static_cast<std::uint16_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(f, 0);  // f32
    put<std::uint8_t>(f, static_cast<std::uint8_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) put<std::int32_t>(f, t.extent(d));
    put<std::uint64_t>(f, offset);
    put<std::uint64_t>(f, t.size());
    offset += t.size();
  }
  put<std::uint64_t>(f, offset);
  for (const auto& [name, t] : params.all())
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!f) throw IoError("short write to checkpoint: " + path);
}

struct Checkpoint {
  TrainConfig config;
  std::uint64_t fingerprint = 0;
  std::map<std::string, std::pair<Shape, std::vector<float>>> tensors;
};

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  using namespace ckpt_detail;
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw FormatError("checkpoint " + path + ": bad magic");
  const auto version = get<std::uint32_t>(f, path);
  if (version != kVersion)
    throw VersionError("checkpoint " + path + ": format version " + std::to_string(version) +
                       ", expected " + std::to_string(kVersion));
  Checkpoint c;
  c.fingerprint = get<std::uint64_t>(f, path);
  const auto text_len = get<std::uint32_t>(f, path);
  std::string text(text_len, '\0');
  f.read(text.data(), text_len);
  if (!f) throw FormatError("checkpoint " + path + ": truncated config text");
  c.config = TrainConfig::parse_text(text);
  if (c.config.fingerprint() != c.fingerprint)
    throw FormatError("checkpoint " + path + ": fingerprint does not match embedded config");

  const auto n = get<std::uint32_t>(f, path);
  struct Dir {
    std::string name;
    Shape shape;
    std::uint64_t offset, count;
  };
  std::vector<Dir> dir;
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto name_len = get<std::uint16_t>(f, path);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const auto dtype = get<std::uint8_t>(f, path);
    if (dtype != 0) throw FormatError("checkpoint " + path + ": unsupported dtype");
    const auto rank = get<std::uint8_t>(f, path);
    Shape shape;
    for (int d = 0; d < rank; ++d) shape.push_back(get<std::int32_t>(f, path));
    const auto offset = get<std::uint64_t>(f, path);
    const auto count = get<std::uint64_t>(f, path);
    dir.push_back({std::move(name), std::move(shape), offset, count});
  }
  const auto payload = get<std::uint64_t>(f, path);
  std::vector<float> data(payload);
  f.read(reinterpret_cast<char*>(data.data()),
         static_cast<std::streamsize>(payload * sizeof(float)));
  if (!f) throw FormatError("checkpoint " + path + ": truncated payload");
  for (auto& d : dir) {
    if (d.offset + d.count > payload)
      throw FormatError("checkpoint " + path + ": directory entry out of bounds");
    c.tensors[d.name] = {d.shape,
                         std::vector<float>(data.begin() + static_cast<std::ptrdiff_t>(d.offset),
                                            data.begin() + static_cast<std::ptrdiff_t>(d.offset + d.count))};
  }
  return c;
}

// Fingerprint guard: loading into a run configured differently is an error.
inline void verify_fingerprint(const Checkpoint& c, const TrainConfig& expected) {
  if (c.fingerprint != expected.fingerprint())
    throw VersionError("checkpoint fingerprint mismatch: checkpoint was trained with a different "
                       "configuration (e.g. different channels/image size)");
}

// Rebuilds the model from the embedded config and restores every parameter.
inline GroundingModel<float> load_model_checkpoint(const std::string& path,
                                                   const TrainConfig* expected = nullptr) {
  Checkpoint c = read_checkpoint(path);
  if (expected) verify_fingerprint(c, *expected);
  auto emb = c.tensors.find("text.embedding");
  if (emb == c.tensors.end())
    throw FormatError("checkpoint " + path + ": missing text.embedding tensor");
  const int vocab_size = emb->second.first.at(0);
  GroundingModel<float> model = make_model<float>(c.config, vocab_size);
  if (model.params.count() != c.tensors.size())
    throw FormatError("checkpoint " + path + ": parameter set mismatch");
  for (auto& [name, t] : model.params.all()) {
    auto it = c.tensors.find(name);
    if (it == c.tensors.end())
      throw FormatError("checkpoint " + path + ": missing tensor " + name);
    if (it->second.first != t.shape())
      throw FormatError("checkpoint " + path + ": shape mismatch for " + name);
    std::copy(it->second.second.begin(), it->second.second.end(), t.data());
  }
  return model;
}

}  // namespace rnr
