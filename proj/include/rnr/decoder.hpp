#pragma once

#include "rnr/fusion.hpp"
#include "rnr/layers.hpp"

namespace rnr {

// Full-resolution soft segmentation mask.
template <typename T>
struct PredictedMask {
  Tensor<T> logits;         // [H_img, W_img]
  Tensor<T> probabilities;  // sigmoid(logits)
};

// ---------------------------------------------------------------------------
// Mask decoder: stack the per-level fused features channelwise (3C), pass
// through ASPP, two 3x3 convs and a 1-channel 1x1 conv, then one bilinear
// upsampling step to image resolution.
// ---------------------------------------------------------------------------
template <typename T>
struct MaskDecoder {
  Aspp<T> aspp;
  Conv2d<T> conv1, conv2;  // 3x3, C -> C
  Conv2d<T> head;          // 1x1, C -> 1
  int image_size = 0;

  Tensor<T> logits(const FusedFeature<T>& fused) const {
    Tensor<T> stacked = concat<T>({fused.levels[0], fused.levels[1], fused.levels[2]}, 0);
    Tensor<T> x = aspp(stacked);
    x = relu(conv1(x));
    x = relu(conv2(x));
    x = head(x);  // [1, H, W]
    x = bilinear_resize(x, image_size, image_size);
    return reshape(x, {image_size, image_size});
  }

  PredictedMask<T> operator()(const FusedFeature<T>& fused) const {
    Tensor<T> z = logits(fused);
    return PredictedMask<T>{z, sigmoid(z)};
  }
};

template <typename T>
MaskDecoder<T> make_mask_decoder(ParamStore<T>& ps, const TrainConfig& cfg, Xoshiro256& rng) {
  const int C = cfg.channels;
  return MaskDecoder<T>{make_aspp(ps, "decoder.aspp", 3 * C, C, rng),
                        make_conv2d(ps, "decoder.conv1", C, C, 3, rng),
                        make_conv2d(ps, "decoder.conv2", C, C, 3, rng),
                        make_conv2d(ps, "decoder.head", C, 1, 1, rng), cfg.image_size};
}

}  // namespace rnr
