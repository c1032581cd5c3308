#pragma once

#include <array>
#include <string>
#include <vector>

#include "rnr/config.hpp"
#include "rnr/layers.hpp"

namespace rnr {

// Hierarchical visual features: three levels aligned to a common C x H x W.
template <typename T>
struct VisualFeatures {
  std::array<Tensor<T>, 3> levels;
};

// Per-word linguistic features; rows at positions >= valid_len are PAD states
// and must be excluded by masks downstream.
template <typename T>
struct LinguisticFeatures {
  Tensor<T> word_features;  // [T, C]
  int valid_len = 0;
};

// ---------------------------------------------------------------------------
// Small convolutional backbone trained from scratch. Strided stem and stages
// give three taps at decreasing resolution (the last stage is dilated,
// stride 1); per-level 3x3 convs align every tap to channels x grid x grid.
// ---------------------------------------------------------------------------
template <typename T>
struct VisualEncoder {
  int image_size = 0;
  int grid = 0;
  Conv2d<T> stem, stage_a, stage_b, stage_c;
  std::array<Conv2d<T>, 3> align;

  VisualFeatures<T> operator()(const Tensor<T>& image) const {
    if (image.rank() != 3 || image.extent(0) != 3 || image.extent(1) != image_size ||
        image.extent(2) != image_size)
      throw ConfigError("encode_visual: expected image [3," + std::to_string(image_size) + "," +
                        std::to_string(image_size) + "], got " + shape_str(image.shape()));
    Tensor<T> s = relu(stem(image));
    Tensor<T> a = relu(stage_a(s));  // tap for V2
    Tensor<T> b = relu(stage_b(a));  // tap for V3
    Tensor<T> c = relu(stage_c(b));  // tap for V4 (dilated, stride 1)
    VisualFeatures<T> out;
    const std::array<const Tensor<T>*, 3> taps{&a, &b, &c};
    for (int i = 0; i < 3; ++i) {
      Tensor<T> v = relu(align[static_cast<std::size_t>(i)](*taps[static_cast<std::size_t>(i)]));
      if (v.extent(1) != grid || v.extent(2) != grid) v = bilinear_resize(v, grid, grid);
      out.levels[static_cast<std::size_t>(i)] = std::move(v);
    }
    return out;
  }
};

template <typename T>
VisualEncoder<T> make_visual_encoder(ParamStore<T>& ps, const TrainConfig& cfg, Xoshiro256& rng) {
  const int C = cfg.channels;
  const int c4 = std::max(4, C / 4), c2 = std::max(4, C / 2);
  VisualEncoder<T> enc;
  enc.image_size = cfg.image_size;
  enc.grid = cfg.grid;
  enc.stem = make_conv2d(ps, "backbone.stem", 3, c4, 3, rng, 2);
  enc.stage_a = make_conv2d(ps, "backbone.stage_a", c4, c2, 3, rng, 2);
  enc.stage_b = make_conv2d(ps, "backbone.stage_b", c2, C, 3, rng, 2);
  enc.stage_c = make_conv2d(ps, "backbone.stage_c", C, C, 3, rng, 1, 2);
  // tap A sits at image/4; stride the align conv when that is exactly 2x grid
  const int tap_a = cfg.image_size / 4;
  enc.align[0] = make_conv2d(ps, "backbone.align2", c2, C, 3, rng, tap_a == 2 * cfg.grid ? 2 : 1);
  enc.align[1] = make_conv2d(ps, "backbone.align3", C, C, 3, rng);
  enc.align[2] = make_conv2d(ps, "backbone.align4", C, C, 3, rng);
  return enc;
}

// ---------------------------------------------------------------------------
// Text encoder: learned embedding lookup followed by a single-layer LSTM.
// Inputs shorter than max_tokens are padded with the PAD id; PAD states are
// computed but flagged invalid via valid_len.
// ---------------------------------------------------------------------------
template <typename T>
struct TextEncoder {
  Tensor<T> embedding_table;  // [V, E]
  Lstm<T> lstm;
  int max_tokens = 0;
  int pad_id = 1;

  LinguisticFeatures<T> operator()(const std::vector<int>& token_ids) const {
    if (token_ids.empty()) throw ContractError("encode_text: empty command");
    if (static_cast<int>(token_ids.size()) > max_tokens)
      throw ContractError("encode_text: command longer than T=" + std::to_string(max_tokens));
    std::vector<int> padded = token_ids;
    padded.resize(static_cast<std::size_t>(max_tokens), pad_id);
    Tensor<T> emb = embedding(embedding_table, padded);  // [T, E]
    return LinguisticFeatures<T>{lstm(emb), static_cast<int>(token_ids.size())};
  }
};

template <typename T>
TextEncoder<T> make_text_encoder(ParamStore<T>& ps, const TrainConfig& cfg, int vocab_size,
                                 Xoshiro256& rng) {
  Tensor<T> table({vocab_size, cfg.embed_dim});
  init_normal(table, 0.02, rng);
  TextEncoder<T> enc{ps.add("text.embedding", std::move(table)),
                     make_lstm(ps, "text.lstm", cfg.embed_dim, cfg.channels, rng), cfg.max_tokens,
                     1};
  return enc;
}

}  // namespace rnr
