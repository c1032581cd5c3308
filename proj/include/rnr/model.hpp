#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rnr/decoder.hpp"
#include "rnr/encoders.hpp"
#include "rnr/fusion.hpp"

namespace rnr {

// Full grounding model: encoders -> fusion (baseline or tbm) -> mask decoder.
// All layer structs alias tensors owned by `params`, so optimizer updates and
// checkpoint loads are visible everywhere.
template <typename T>
struct GroundingModel {
  TrainConfig cfg;
  int vocab_size = 0;
  ParamStore<T> params;
  VisualEncoder<T> visual;
  TextEncoder<T> text;
  BaselineFusion<T> baseline_fusion;
  TbmFusion<T> tbm_fusion;
  MaskDecoder<T> decoder;

  bool is_tbm() const { return cfg.model == "tbm"; }

  FusedFeature<T> fuse(const VisualFeatures<T>& V, const LinguisticFeatures<T>& L) const {
    return is_tbm() ? tbm_fusion(V, L) : baseline_fusion(V, L);
  }

  Tensor<T> forward_logits(const Tensor<T>& image, const std::vector<int>& token_ids) const {
    VisualFeatures<T> V = visual(image);
    LinguisticFeatures<T> L = text(token_ids);
    return decoder.logits(fuse(V, L));
  }

  PredictedMask<T> predict(const Tensor<T>& image, const std::vector<int>& token_ids) const {
    Tensor<T> z = forward_logits(image, token_ids);
    return PredictedMask<T>{z, sigmoid(z)};
  }
};

// Parameter creation order is fixed; the init RNG stream is a pure function
// of the config seed, so identical configs build identical models.
template <typename T>
GroundingModel<T> make_model(const TrainConfig& cfg, int vocab_size) {
  cfg.validate();
  GroundingModel<T> m;
  m.cfg = cfg;
  m.vocab_size = vocab_size;
  Xoshiro256 rng(mix_seed(cfg.seed, 0x1217));
  m.visual = make_visual_encoder(m.params, cfg, rng);
  m.text = make_text_encoder(m.params, cfg, vocab_size, rng);
  if (cfg.model == "tbm")
    m.tbm_fusion = make_tbm_fusion(m.params, cfg, rng);
  else
    m.baseline_fusion = make_baseline_fusion(m.params, cfg, rng);
  m.decoder = make_mask_decoder(m.params, cfg, rng);
  return m;
}

}  // namespace rnr
