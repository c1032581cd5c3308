#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "rnr/gradcheck.hpp"
#include "rnr/model.hpp"

namespace rnr {

// The full gradient verification suite: every differentiable primitive plus
// the composite chains (attention, encoder layer, LSTM, ASPP, and both model
// forwards at tiny dims), all in 64-bit mode against central differences.
struct GradSuiteItem {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

struct GradSuiteResult {
  std::vector<GradSuiteItem> items;
  bool pass = true;
  double worst = 0.0;
  double seconds = 0.0;
};

namespace gradsuite_detail {

inline TrainConfig tiny_config(const std::string& model) {
  TrainConfig cfg;
  cfg.model = model;
  cfg.image_size = 8;
  cfg.channels = 4;
  cfg.max_tokens = 3;
  cfg.embed_dim = 4;
  cfg.grid = 2;
  cfg.encoder_layers = 1;
  cfg.encoder_heads = 2;
  return cfg;
}

template <typename Rng>
Tensor<double> rand_t(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace gradsuite_detail

inline GradSuiteResult run_gradient_suite(double tol = 1e-4) {
  using gradsuite_detail::rand_t;
  using TD = Tensor<double>;
  const auto t0 = std::chrono::steady_clock::now();
  GradSuiteResult res;

  auto push = [&](const std::string& name, const GradCheckResult& r) {
    res.items.push_back({name, r.max_rel_err, r.pass});
    if (!r.pass) res.pass = false;
    res.worst = std::max(res.worst, r.max_rel_err);
  };

  Xoshiro256 rng(20240901);

  {  // primitives
    TD a = rand_t({3, 4}, rng), b = rand_t({4, 2}, rng);
    push("matmul", grad_check(
                       [](const std::vector<TD>& in) { return sum_all(matmul(in[0], in[1])); },
                       {a, b}, 1e-4, tol));
  }
  {
    TD x = rand_t({2, 5, 5}, rng), w = rand_t({3, 2, 3, 3}, rng), bias = rand_t({3}, rng);
    push("conv2d", grad_check(
                       [](const std::vector<TD>& in) {
                         return mean_all(conv2d(in[0], in[1], in[2], 1, 1));
                       },
                       {x, w, bias}, 1e-4, tol));
    push("conv2d_stride2_dil2", grad_check(
                                    [](const std::vector<TD>& in) {
                                      return mean_all(conv2d(in[0], in[1], in[2], 2, 2));
                                    },
                                    {x, w, bias}, 1e-4, tol));
  }
  {
    TD x = rand_t({5}, rng), wgt = rand_t({5}, rng);
    push("softmax", grad_check(
                        [](const std::vector<TD>& in) {
                          return sum_all(mul(softmax(in[0], 0), in[1]));
                        },
                        {x, wgt}, 1e-4, tol));
  }
  {
    TD x = rand_t({1, 2, 2}, rng), wgt = rand_t({1, 5, 3}, rng);
    push("bilinear_resize", grad_check(
                                [](const std::vector<TD>& in) {
                                  return sum_all(mul(bilinear_resize(in[0], 5, 3), in[1]));
                                },
                                {x, wgt}, 1e-4, tol));
  }
  {
    TD z = rand_t({3, 3}, rng, -2, 2);
    TD g({3, 3});
    for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = rng.next_double() < 0.4 ? 1.0 : 0.0;
    push("bce_with_logits", grad_check(
                                [&](const std::vector<TD>& in) {
                                  return bce_with_logits(in[0], g);
                                },
                                {z}, 1e-4, tol));
  }
  {  // elementwise and shape primitives in one chain
    TD a = rand_t({3, 4}, rng, 0.15, 1.0), b = rand_t({3, 4}, rng, 0.15, 1.0);
    TD bias = rand_t({4}, rng), gamma = rand_t({4}, rng, 0.5, 1.5), beta = rand_t({4}, rng);
    push("elementwise_chain",
         grad_check(
             [](const std::vector<TD>& in) {
               TD x = add_row_vector(mul(relu(in[0]), sigmoid(in[1])), in[2]);
               x = layer_norm(tanh_op(x), in[3], in[4]);
               TD y = concat<double>({slice(x, 1, 0, 2), slice(x, 1, 2, 2)}, 1);
               y = transpose2d(reshape(transpose2d(y), {4, 3}));
               return add(mean_all(scale(y, 1.7)), sum_all(mean_axis0(y)));
             },
             {a, b, bias, gamma, beta}, 1e-4, tol));
  }
  {
    TD table = rand_t({6, 3}, rng);
    const std::vector<int> ids{2, 5, 2};
    push("embedding", grad_check(
                          [&](const std::vector<TD>& in) {
                            TD e = embedding(in[0], ids);
                            return sum_all(mul(e, e));
                          },
                          {table}, 1e-4, tol));
  }
  {
    TD x = rand_t({2, 3, 3}, rng);
    push("spatial_mean_broadcast",
         grad_check(
             [](const std::vector<TD>& in) {
               return sum_all(mul(broadcast_spatial(spatial_mean(in[0]), 3, 3), in[0]));
             },
             {x}, 1e-4, tol));
  }

  auto check_params = [&](const std::string& name, ParamStore<double>& ps, std::vector<TD> extra,
                          const std::function<TD(const std::vector<TD>&)>& f) {
    std::vector<TD> inputs = std::move(extra);
    for (auto& [pname, t] : ps.all()) inputs.push_back(t);
    push(name, grad_check(f, inputs, 1e-4, tol));
  };

  {  // attention layer
    ParamStore<double> ps;
    auto mha = make_attention(ps, "attn", 4, 2, rng);
    TD x = rand_t({3, 4}, rng), wgt = rand_t({3, 4}, rng);
    KeyPaddingMask mask(3, 0);
    mask[2] = 1;
    check_params("attention_layer", ps, {x}, [&](const std::vector<TD>& in) {
      return sum_all(mul(mha(in[0], in[0], in[0], mask), wgt));
    });
  }
  {  // encoder layer
    ParamStore<double> ps;
    auto layer = make_encoder_layer(ps, "enc", 4, 2, rng);
    TD x = rand_t({5, 4}, rng), wgt = rand_t({5, 4}, rng);
    check_params("encoder_layer", ps, {x}, [&](const std::vector<TD>& in) {
      return sum_all(mul(layer(in[0]), wgt));
    });
  }
  {  // lstm over 3 steps
    ParamStore<double> ps;
    auto lstm = make_lstm(ps, "lstm", 4, 4, rng);
    TD x = rand_t({3, 4}, rng), wgt = rand_t({3, 4}, rng);
    check_params("lstm", ps, {x}, [&](const std::vector<TD>& in) {
      return sum_all(mul(lstm(in[0]), wgt));
    });
  }
  {  // aspp
    ParamStore<double> ps;
    auto aspp = make_aspp(ps, "aspp", 6, 3, rng);
    TD x = rand_t({6, 4, 4}, rng, 0.2, 1.0), wgt = rand_t({3, 4, 4}, rng);
    check_params("aspp", ps, {x}, [&](const std::vector<TD>& in) {
      return sum_all(mul(aspp(in[0]), wgt));
    });
  }

  for (const char* kind : {"baseline", "tbm"}) {  // full models, all parameters
    auto model = make_model<double>(gradsuite_detail::tiny_config(kind), 8);
    TD img = rand_t({3, 8, 8}, rng, 0.05, 0.95);
    TD gt({8, 8});
    for (std::size_t i = 0; i < gt.size(); ++i) gt.data()[i] = rng.next_double() < 0.3 ? 1.0 : 0.0;
    const std::vector<int> ids{4, 2, 6};
    check_params(std::string("full_") + kind + "_forward", model.params, {img},
                 [&](const std::vector<TD>& in) {
                   return bce_with_logits(model.forward_logits(in[0], ids), gt);
                 });
  }

  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace rnr
