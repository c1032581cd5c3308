#pragma once

#include <string>
#include <vector>

#include "rnr/params.hpp"
#include "rnr/tensor.hpp"

namespace rnr {

// Key-padding mask: one flag per key position, true = masked (PAD). Masked
// keys receive a large negative logit and so zero attention weight.
using KeyPaddingMask = std::vector<char>;

template <typename T>
struct Linear {
  Tensor<T> w;  // [in, out]
  Tensor<T> b;  // [out]

  Tensor<T> operator()(const Tensor<T>& x) const { return add_row_vector(matmul(x, w), b); }
};

template <typename T>
Linear<T> make_linear(ParamStore<T>& ps, const std::string& name, int in, int out,
                      Xoshiro256& rng) {
  Tensor<T> w({in, out});
  Tensor<T> b({out});
  init_uniform_fanin(w, in, rng);
  // nonzero bias init keeps dead-input pre-activations off the relu kink
  init_uniform_fanin(b, in, rng);
  Linear<T> l{ps.add(name + ".weight", std::move(w)), ps.add(name + ".bias", std::move(b))};
  return l;
}

// 2D convolution layer over [C,H,W].
template <typename T>
struct Conv2d {
  Tensor<T> w;  // [Cout,Cin,k,k]
  Tensor<T> b;  // [Cout]
  int stride = 1;
  int dilation = 1;

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, w, b, stride, dilation); }
};

template <typename T>
Conv2d<T> make_conv2d(ParamStore<T>& ps, const std::string& name, int cin, int cout, int k,
                      Xoshiro256& rng, int stride = 1, int dilation = 1) {
  Tensor<T> w({cout, cin, k, k});
  Tensor<T> b({cout});
  init_uniform_fanin(w, cin * k * k, rng);
  init_uniform_fanin(b, cin * k * k, rng);
  return Conv2d<T>{ps.add(name + ".weight", std::move(w)), ps.add(name + ".bias", std::move(b)),
                   stride, dilation};
}

// ---------------------------------------------------------------------------
// Multi-head scaled dot-product attention over [len, C] sequences.
// ---------------------------------------------------------------------------
template <typename T>
struct MultiHeadAttention {
  Linear<T> q_proj, k_proj, v_proj, o_proj;
  int heads = 1;

  // attn_out, when given, receives the stacked per-head weights
  // [heads*len_q, len_k] for inspection.
  Tensor<T> operator()(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                       const KeyPaddingMask& mask = {}, Tensor<T>* attn_out = nullptr) const {
    const int C = q.extent(1);
    const int dh = C / heads;
    const int len_k = k.extent(0);
    if (!mask.empty() && static_cast<int>(mask.size()) != len_k)
      throw ContractError("attention: mask length " + std::to_string(mask.size()) +
                          " != key length " + std::to_string(len_k));
    Tensor<T> qp = q_proj(q), kp = k_proj(k), vp = v_proj(v);

    Tensor<T> mask_bias;
    if (!mask.empty()) {
      mask_bias = Tensor<T>({len_k});
      for (int i = 0; i < len_k; ++i) mask_bias.data()[i] = mask[static_cast<std::size_t>(i)] ? T(-1e9) : T(0);
    }

    std::vector<Tensor<T>> head_outs, head_attns;
    const T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    for (int h = 0; h < heads; ++h) {
      Tensor<T> qh = slice(qp, 1, h * dh, dh);
      Tensor<T> kh = slice(kp, 1, h * dh, dh);
      Tensor<T> vh = slice(vp, 1, h * dh, dh);
      Tensor<T> scores = scale(matmul(qh, transpose2d(kh)), inv_sqrt_dh);
      if (!mask.empty()) scores = add_row_vector(scores, mask_bias);
      Tensor<T> attn = softmax(scores, 1);
      if (attn_out) head_attns.push_back(attn);
      head_outs.push_back(matmul(attn, vh));
    }
    if (attn_out) *attn_out = concat(head_attns, 0);
    return o_proj(concat(head_outs, 1));
  }
};

template <typename T>
MultiHeadAttention<T> make_attention(ParamStore<T>& ps, const std::string& name, int C, int heads,
                                     Xoshiro256& rng) {
  if (heads < 1 || C % heads != 0)
    throw ConfigError("attention: model dim " + std::to_string(C) + " not divisible by " +
                      std::to_string(heads) + " heads");
  return MultiHeadAttention<T>{make_linear(ps, name + ".q_proj", C, C, rng),
                               make_linear(ps, name + ".k_proj", C, C, rng),
                               make_linear(ps, name + ".v_proj", C, C, rng),
                               make_linear(ps, name + ".o_proj", C, C, rng), heads};
}

// ---------------------------------------------------------------------------
// Transformer encoder layer, post-norm order:
//   x -> x + attn(x) -> norm -> (+ffn) -> norm
// FFN hidden width is 4C with ReLU.
// ---------------------------------------------------------------------------
template <typename T>
struct TransformerEncoderLayer {
  MultiHeadAttention<T> attn;
  Tensor<T> norm1_g, norm1_b, norm2_g, norm2_b;
  Linear<T> fc1, fc2;

  Tensor<T> operator()(const Tensor<T>& x, const KeyPaddingMask& mask = {}) const {
    Tensor<T> a = attn(x, x, x, mask);
    Tensor<T> x1 = layer_norm(add(x, a), norm1_g, norm1_b);
    Tensor<T> f = fc2(relu(fc1(x1)));
    return layer_norm(add(x1, f), norm2_g, norm2_b);
  }
};

template <typename T>
TransformerEncoderLayer<T> make_encoder_layer(ParamStore<T>& ps, const std::string& name, int C,
                                              int heads, Xoshiro256& rng) {
  TransformerEncoderLayer<T> l{
      make_attention(ps, name + ".attn", C, heads, rng),
      ps.add(name + ".norm1.gamma", Tensor<T>({C}, T(1))),
      ps.add(name + ".norm1.beta", Tensor<T>({C})),
      ps.add(name + ".norm2.gamma", Tensor<T>({C}, T(1))),
      ps.add(name + ".norm2.beta", Tensor<T>({C})),
      make_linear(ps, name + ".ffn.fc1", C, 4 * C, rng),
      make_linear(ps, name + ".ffn.fc2", 4 * C, C, rng)};
  return l;
}

// ---------------------------------------------------------------------------
// Single-layer unidirectional LSTM over [T,E]; returns all hidden states
// [T,H]. Gate order in the packed weights is i, f, g, o.
// ---------------------------------------------------------------------------
template <typename T>
struct Lstm {
  Tensor<T> w_ih;  // [E, 4H]
  Tensor<T> w_hh;  // [H, 4H]
  Tensor<T> bias;  // [4H]
  int hidden = 0;

  Tensor<T> operator()(const Tensor<T>& x) const {
    if (x.rank() != 2 || x.extent(0) < 1)
      throw ContractError("lstm: input must be [T,E] with T >= 1");
    const int steps = x.extent(0);
    const int H = hidden;
    Tensor<T> h({1, H});
    Tensor<T> c({1, H});
    std::vector<Tensor<T>> outs;
    outs.reserve(static_cast<std::size_t>(steps));
    for (int t = 0; t < steps; ++t) {
      Tensor<T> xt = slice(x, 0, t, 1);  // [1,E]
      Tensor<T> z = add_row_vector(add(matmul(xt, w_ih), matmul(h, w_hh)), bias);  // [1,4H]
      Tensor<T> ig = sigmoid(slice(z, 1, 0, H));
      Tensor<T> fg = sigmoid(slice(z, 1, H, H));
      Tensor<T> gg = tanh_op(slice(z, 1, 2 * H, H));
      Tensor<T> og = sigmoid(slice(z, 1, 3 * H, H));
      c = add(mul(fg, c), mul(ig, gg));
      h = mul(og, tanh_op(c));
      outs.push_back(h);
    }
    return concat(outs, 0);  // [T,H]
  }
};

template <typename T>
Lstm<T> make_lstm(ParamStore<T>& ps, const std::string& name, int E, int H, Xoshiro256& rng) {
  Tensor<T> w_ih({E, 4 * H});
  Tensor<T> w_hh({H, 4 * H});
  init_uniform_fanin(w_ih, E, rng);
  init_uniform_fanin(w_hh, H, rng);
  Tensor<T> bias({4 * H});
  for (int j = H; j < 2 * H; ++j) bias.data()[j] = T(1);  // forget-gate bias
  return Lstm<T>{ps.add(name + ".w_ih", std::move(w_ih)), ps.add(name + ".w_hh", std::move(w_hh)),
                 ps.add(name + ".bias", std::move(bias)), H};
}

// ---------------------------------------------------------------------------
// Atrous spatial pyramid pooling: parallel 1x1, two dilated 3x3 (d=2,4) and a
// global-pool branch, concatenated and fused back to C channels by 1x1 conv.
// ---------------------------------------------------------------------------
template <typename T>
struct Aspp {
  Conv2d<T> branch1x1;
  Conv2d<T> branch_d2;
  Conv2d<T> branch_d4;
  Conv2d<T> pool_proj;  // 1x1 applied to the pooled vector
  Conv2d<T> fuse;       // 1x1 over 4C

  Tensor<T> operator()(const Tensor<T>& x) const {
    const int H = x.extent(1), W = x.extent(2);
    Tensor<T> b1 = relu(branch1x1(x));
    Tensor<T> b2 = relu(branch_d2(x));
    Tensor<T> b3 = relu(branch_d4(x));
    Tensor<T> pooled = broadcast_spatial(spatial_mean(x), 1, 1);  // [C,1,1]
    Tensor<T> b4v = relu(pool_proj(pooled));                      // [Cout,1,1]
    Tensor<T> b4 = broadcast_spatial(reshape(b4v, {b4v.extent(0)}), H, W);
    Tensor<T> cat = concat<T>({b1, b2, b3, b4}, 0);
    return relu(fuse(cat));
  }
};

template <typename T>
Aspp<T> make_aspp(ParamStore<T>& ps, const std::string& name, int cin, int cout, Xoshiro256& rng) {
  return Aspp<T>{make_conv2d(ps, name + ".branch1x1", cin, cout, 1, rng),
                 make_conv2d(ps, name + ".branch_d2", cin, cout, 3, rng, 1, 2),
                 make_conv2d(ps, name + ".branch_d4", cin, cout, 3, rng, 1, 4),
                 make_conv2d(ps, name + ".pool_proj", cin, cout, 1, rng),
                 make_conv2d(ps, name + ".fuse", 4 * cout, cout, 1, rng)};
}

}  // namespace rnr
