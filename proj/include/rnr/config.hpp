#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rnr/common.hpp"

namespace rnr {

// Training/run configuration. The desk preset is the runnable default; the
// full preset records the reference hyperparameters for a full-size run and
// is kept for documentation and shape checks.
struct TrainConfig {
  std::string model = "tbm";  // baseline | tbm
  int image_size = 64;
  int channels = 32;    // C, shared visual/linguistic width
  int max_tokens = 12;  // T
  int embed_dim = 32;
  int grid = 8;  // feature map H = W after alignment
  int batch_size = 16;
  int epochs = 30;
  double lr0 = 1e-3;
  double weight_decay = 5e-4;
  double decay_power = 0.5;
  std::uint64_t seed = 42;
  int encoder_layers = 2;
  int encoder_heads = 4;
  double clip_norm = 1.0;  // 0 disables
  bool share_level_encoders = false;
  std::string data_dir = "data";

  static TrainConfig desk() { return TrainConfig{}; }

  static TrainConfig full_scale() {
    TrainConfig c;
    c.image_size = 448;
    c.channels = 512;
    c.max_tokens = 40;
    c.embed_dim = 300;
    c.grid = 14;
    c.batch_size = 64;
    c.epochs = 40;
    c.lr0 = 1e-4;
    c.weight_decay = 5e-4;
    return c;
  }

  void validate() const {
    if (model != "baseline" && model != "tbm")
      throw ConfigError("model must be 'baseline' or 'tbm', got '" + model + "'");
    if (image_size < 8 || channels < 4 || max_tokens < 1 || embed_dim < 1 || grid < 2)
      throw ConfigError("config: dimensions out of range");
    if (grid > image_size) throw ConfigError("config: grid larger than image");
    if (batch_size < 1 || epochs < 1) throw ConfigError("config: batch_size/epochs must be >= 1");
    if (channels % encoder_heads != 0)
      throw ConfigError("config: channels " + std::to_string(channels) +
                        " not divisible by encoder_heads " + std::to_string(encoder_heads));
  }

  // Canonical key/value text; also the fingerprint input. Keys in fixed order.
  std::string canonical_text() const {
    auto num = [](double v) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      return std::string(buf);
    };
    std::ostringstream os;
    os << "model = " << model << "\n"
       << "image_size = " << image_size << "\n"
       << "channels = " << channels << "\n"
       << "max_tokens = " << max_tokens << "\n"
       << "embed_dim = " << embed_dim << "\n"
       << "grid = " << grid << "\n"
       << "batch_size = " << batch_size << "\n"
       << "epochs = " << epochs << "\n"
       << "lr0 = " << num(lr0) << "\n"
       << "weight_decay = " << num(weight_decay) << "\n"
       << "decay_power = " << num(decay_power) << "\n"
       << "seed = " << seed << "\n"
       << "encoder_layers = " << encoder_layers << "\n"
       << "encoder_heads = " << encoder_heads << "\n"
       << "clip_norm = " << num(clip_norm) << "\n"
       << "share_level_encoders = " << (share_level_encoders ? "true" : "false") << "\n"
       << "data_dir = " << data_dir << "\n";
    return os.str();
  }

  void set(const std::string& key, const std::string& value) {
    auto to_i = [&](const std::string& v) { return std::stoi(v); };
    auto to_d = [&](const std::string& v) { return std::stod(v); };
    if (key == "model") model = value;
    else if (key == "image_size") image_size = to_i(value);
    else if (key == "channels") channels = to_i(value);
    else if (key == "max_tokens") max_tokens = to_i(value);
    else if (key == "embed_dim") embed_dim = to_i(value);
    else if (key == "grid") grid = to_i(value);
    else if (key == "batch_size") batch_size = to_i(value);
    else if (key == "epochs") epochs = to_i(value);
    else if (key == "lr0") lr0 = to_d(value);
    else if (key == "weight_decay") weight_decay = to_d(value);
    else if (key == "decay_power") decay_power = to_d(value);
    else if (key == "seed") seed = std::stoull(value);
    else if (key == "encoder_layers") encoder_layers = to_i(value);
    else if (key == "encoder_heads") encoder_heads = to_i(value);
    else if (key == "clip_norm") clip_norm = to_d(value);
    else if (key == "share_level_encoders") share_level_encoders = (value == "true" || value == "1");
    else if (key == "data_dir") data_dir = value;
    else if (key == "preset") {
      if (value == "desk") *this = desk();
      else if (value == "full") *this = full_scale();
      else throw ConfigError("unknown preset '" + value + "'");
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }

  static TrainConfig parse_text(const std::string& text) {
    TrainConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (!key.empty()) c.set(key, value);
    }
    return c;
  }

  static TrainConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_text(buf.str());
  }

  std::uint64_t fingerprint() const {
    // FNV-1a over the canonical text
    const std::string text = canonical_text();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : text) {
      h ^= ch;
      h *= 0x100000001b3ull;
    }
    return h;
  }
};

}  // namespace rnr
