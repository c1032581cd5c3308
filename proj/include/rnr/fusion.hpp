#pragma once

#include <string>
#include <vector>

#include "rnr/encoders.hpp"
#include "rnr/layers.hpp"

namespace rnr {

// Per-level fused multimodal features, each C x H x W.
template <typename T>
struct FusedFeature {
  std::array<Tensor<T>, 3> levels;
};

// Mean of the first valid_len word feature rows -> [C].
template <typename T>
Tensor<T> average_valid_words(const Tensor<T>& word_features, int valid_len) {
  return mean_axis0(slice(word_features, 0, 0, valid_len));
}

// ---------------------------------------------------------------------------
// Baseline fusion: tile the averaged command feature over the spatial grid,
// concatenate channelwise (C_v + C_l channels) and reduce back to C by a
// per-level 1x1 convolution.
// ---------------------------------------------------------------------------
template <typename T>
struct BaselineFusion {
  std::array<Conv2d<T>, 3> reduce;  // 1x1, 2C -> C

  FusedFeature<T> operator()(const VisualFeatures<T>& V, const LinguisticFeatures<T>& L) const {
    Tensor<T> l_avg = average_valid_words(L.word_features, L.valid_len);
    FusedFeature<T> out;
    for (int i = 0; i < 3; ++i) {
      const Tensor<T>& v = V.levels[static_cast<std::size_t>(i)];
      Tensor<T> tiled = broadcast_spatial(l_avg, v.extent(1), v.extent(2));
      Tensor<T> m = concat<T>({v, tiled}, 0);  // [(C_v+C_l), H, W]
      out.levels[static_cast<std::size_t>(i)] = reduce[static_cast<std::size_t>(i)](m);
    }
    return out;
  }
};

template <typename T>
BaselineFusion<T> make_baseline_fusion(ParamStore<T>& ps, const TrainConfig& cfg, Xoshiro256& rng) {
  BaselineFusion<T> f;
  for (int i = 0; i < 3; ++i)
    f.reduce[static_cast<std::size_t>(i)] = make_conv2d(
        ps, "fusion.reduce" + std::to_string(i + 2), 2 * cfg.channels, cfg.channels, 1, rng);
  return f;
}

// ---------------------------------------------------------------------------
// Transformer fusion: per level, flatten the visual grid to HW tokens, append
// the T word tokens, add learned positional embeddings (separate grid/word
// tables), and run transformer encoder layers with a key-padding mask hiding
// PAD word tokens. The output splits back into attended visual features
// (HW x C) and attended linguistic features (T x C); the latter is averaged
// over valid positions, tiled, concatenated channelwise (2C) and reduced to C
// by a 1x1 convolution.
// ---------------------------------------------------------------------------
template <typename T>
struct TbmFusion {
  struct Level {
    Tensor<T> grid_pos;  // [HW, C]
    Tensor<T> word_pos;  // [T, C]
    std::vector<TransformerEncoderLayer<T>> layers;
    Conv2d<T> reduce;  // 1x1, 2C -> C
  };
  std::array<Level, 3> levels;
  int max_tokens = 0;

  FusedFeature<T> operator()(const VisualFeatures<T>& V, const LinguisticFeatures<T>& L) const {
    FusedFeature<T> out;
    for (int i = 0; i < 3; ++i) {
      const Level& lev = levels[static_cast<std::size_t>(i)];
      const Tensor<T>& v = V.levels[static_cast<std::size_t>(i)];
      const int C = v.extent(0), H = v.extent(1), W = v.extent(2);
      const int HW = H * W;
      if (L.word_features.extent(1) != C)
        throw ConfigError("fuse_tbm: C_v=" + std::to_string(C) +
                          " != C_l=" + std::to_string(L.word_features.extent(1)));

      Tensor<T> vis_tokens = transpose2d(reshape(v, {C, HW}));            // [HW, C]
      Tensor<T> tokens = concat<T>({vis_tokens, L.word_features}, 0);     // [HW+T, C]
      Tensor<T> pos = concat<T>({lev.grid_pos, lev.word_pos}, 0);
      Tensor<T> x = add(tokens, pos);

      KeyPaddingMask mask(static_cast<std::size_t>(HW + max_tokens), 0);
      for (int t = L.valid_len; t < max_tokens; ++t) mask[static_cast<std::size_t>(HW + t)] = 1;
      for (const auto& layer : lev.layers) x = layer(x, mask);

      Tensor<T> xv = slice(x, 0, 0, HW);          // [HW, C]
      Tensor<T> xl = slice(x, 0, HW, max_tokens); // [T, C]
      Tensor<T> xv_chw = reshape(transpose2d(xv), {C, H, W});
      Tensor<T> l_avg = average_valid_words(xl, L.valid_len);
      Tensor<T> tiled = broadcast_spatial(l_avg, H, W);
      Tensor<T> cat = concat<T>({xv_chw, tiled}, 0);  // [2C, H, W]
      out.levels[static_cast<std::size_t>(i)] = lev.reduce(cat);
    }
    return out;
  }
};

template <typename T>
TbmFusion<T> make_tbm_fusion(ParamStore<T>& ps, const TrainConfig& cfg, Xoshiro256& rng) {
  TbmFusion<T> f;
  f.max_tokens = cfg.max_tokens;
  const int HW = cfg.grid * cfg.grid;
  for (int i = 0; i < 3; ++i) {
    auto& lev = f.levels[static_cast<std::size_t>(i)];
    const std::string base = "fusion.level" + std::to_string(i + 2);
    if (cfg.share_level_encoders && i > 0) {
      lev = f.levels[0];  // aliases the same parameters
      continue;
    }
    Tensor<T> gp({HW, cfg.channels});
    Tensor<T> wp({cfg.max_tokens, cfg.channels});
    init_normal(gp, 0.02, rng);
    init_normal(wp, 0.02, rng);
    lev.grid_pos = ps.add(base + ".grid_pos", std::move(gp));
    lev.word_pos = ps.add(base + ".word_pos", std::move(wp));
    for (int l = 0; l < cfg.encoder_layers; ++l)
      lev.layers.push_back(
          make_encoder_layer(ps, base + ".enc" + std::to_string(l), cfg.channels,
                             cfg.encoder_heads, rng));
    lev.reduce = make_conv2d(ps, base + ".reduce", 2 * cfg.channels, cfg.channels, 1, rng);
  }
  return f;
}

}  // namespace rnr
