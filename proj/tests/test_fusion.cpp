#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "rnr/gradcheck.hpp"
#include "rnr/model.hpp"
#include "test_util.hpp"

using rnr::LinguisticFeatures;
using rnr::Tensor;
using rnr::TrainConfig;
using test_util::rand_tensor;

namespace {

TrainConfig tiny_config(const std::string& model) {
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

}  // namespace

TEST_CASE("averaging identical word features returns that vector") {
  Tensor<double> wf({6, 4});
  for (int t = 0; t < 6; ++t)
    for (int j = 0; j < 4; ++j) wf.data()[t * 4 + j] = 0.5 * j - 1.0;
  Tensor<double> avg = rnr::average_valid_words(wf, 4);
  for (int j = 0; j < 4; ++j) CHECK(avg.data()[j] == Catch::Approx(0.5 * j - 1.0));
}

TEST_CASE("averaging step is permutation-invariant over valid rows") {
  rnr::Xoshiro256 rng(21);
  Tensor<double> wf = rand_tensor<double>({5, 8}, rng);
  Tensor<double> avg1 = rnr::average_valid_words(wf, 5);
  Tensor<double> shuffled({5, 8});
  const std::vector<int> perm{4, 2, 0, 1, 3};
  for (int t = 0; t < 5; ++t)
    for (int j = 0; j < 8; ++j) shuffled.data()[t * 8 + j] = wf.data()[perm[t] * 8 + j];
  Tensor<double> avg2 = rnr::average_valid_words(shuffled, 5);
  for (int j = 0; j < 8; ++j) CHECK(avg1.data()[j] == Catch::Approx(avg2.data()[j]).margin(1e-12));
}

TEST_CASE("baseline fusion shapes: M_i has 2C channels, X_final has C") {
  auto model = rnr::make_model<float>(TrainConfig::desk(), 16);
  TrainConfig cfg = TrainConfig::desk();
  cfg.model = "baseline";
  auto bl = rnr::make_model<float>(cfg, 16);
  // reduce convs consume C_v + C_l = 64 channels
  for (int i = 0; i < 3; ++i) {
    const auto& w = bl.baseline_fusion.reduce[i].w;
    CHECK(w.shape() == rnr::Shape{32, 64, 1, 1});
  }
  rnr::Xoshiro256 rng(23);
  Tensor<float> img = rand_tensor<float>({3, 64, 64}, rng, 0.0, 1.0);
  auto V = bl.visual(img);
  auto L = bl.text({3, 5, 2, 4});
  auto F = bl.baseline_fusion(V, L);
  for (const auto& lvl : F.levels) CHECK(lvl.shape() == rnr::Shape{32, 8, 8});
}

TEST_CASE("tbm token count at desk scale is HW + T = 76") {
  auto model = rnr::make_model<float>(TrainConfig::desk(), 16);
  for (int i = 0; i < 3; ++i) {
    const auto& lev = model.tbm_fusion.levels[i];
    CHECK(lev.grid_pos.extent(0) + lev.word_pos.extent(0) == 76);
  }
}

TEST_CASE("tbm fusion output shape is C x H x W per level") {
  auto model = rnr::make_model<float>(TrainConfig::desk(), 16);
  rnr::Xoshiro256 rng(25);
  Tensor<float> img = rand_tensor<float>({3, 64, 64}, rng, 0.0, 1.0);
  auto V = model.visual(img);
  auto L = model.text({3, 5, 2, 4, 8});
  auto F = model.tbm_fusion(V, L);
  for (const auto& lvl : F.levels) CHECK(lvl.shape() == rnr::Shape{32, 8, 8});
}

TEST_CASE("tbm fusion ignores PAD word states: mask plus valid-only averaging") {
  auto model = rnr::make_model<float>(tiny_config("tbm"), 8);
  rnr::Xoshiro256 rng(27);
  Tensor<float> img = rand_tensor<float>({3, 8, 8}, rng, 0.0, 1.0);
  auto V = model.visual(img);
  auto L = model.text({4, 2});  // valid_len 2 of T=3

  auto F1 = model.tbm_fusion(V, L);
  // corrupt the PAD row of the word features; output must not move
  LinguisticFeatures<float> L2{L.word_features.clone(), L.valid_len};
  for (int j = 0; j < 4; ++j) L2.word_features.data()[2 * 4 + j] = 77.0f;
  auto F2 = model.tbm_fusion(V, L2);
  for (int l = 0; l < 3; ++l)
    for (std::size_t i = 0; i < F1.levels[l].size(); ++i)
      CHECK(F1.levels[l].data()[i] ==
            Catch::Approx(F2.levels[l].data()[i]).margin(1e-5));
}

TEST_CASE("tbm fusion rejects C mismatch") {
  auto model = rnr::make_model<float>(tiny_config("tbm"), 8);
  rnr::VisualFeatures<float> V;
  for (int i = 0; i < 3; ++i) V.levels[i] = Tensor<float>({4, 2, 2});
  LinguisticFeatures<float> L{Tensor<float>({3, 6}), 2};  // C_l = 6 != 4
  CHECK_THROWS_AS(model.tbm_fusion(V, L), rnr::ConfigError);
}

TEST_CASE("full tbm forward gradchecks end-to-end at tiny dims") {
  auto model = rnr::make_model<double>(tiny_config("tbm"), 8);
  rnr::Xoshiro256 rng(29);
  Tensor<double> img = rand_tensor<double>({3, 8, 8}, rng, 0.05, 0.95);
  Tensor<double> gt = test_util::binary_tensor<double>({8, 8}, rng, 0.3);
  const std::vector<int> ids{4, 2, 6};

  // check the image input plus a slice of parameters end to end; the full
  // parameter sweep runs in the acceptance suite
  std::vector<Tensor<double>> inputs{img};
  inputs.push_back(model.params.at("fusion.level2.enc0.attn.q_proj.weight"));
  inputs.push_back(model.params.at("decoder.aspp.branch_d2.weight"));
  inputs.push_back(model.params.at("text.embedding"));
  auto f = [&](const std::vector<Tensor<double>>& in) {
    return rnr::bce_with_logits(model.forward_logits(in[0], ids), gt);
  };
  auto res = rnr::grad_check(f, inputs);
  INFO(res.summary());
  CHECK(res.pass);
}

TEST_CASE("full baseline forward gradchecks end-to-end at tiny dims") {
  auto model = rnr::make_model<double>(tiny_config("baseline"), 8);
  rnr::Xoshiro256 rng(31);
  Tensor<double> img = rand_tensor<double>({3, 8, 8}, rng, 0.05, 0.95);
  Tensor<double> gt = test_util::binary_tensor<double>({8, 8}, rng, 0.3);
  const std::vector<int> ids{4, 2};

  std::vector<Tensor<double>> inputs{img};
  inputs.push_back(model.params.at("fusion.reduce3.weight"));
  inputs.push_back(model.params.at("text.lstm.w_hh"));
  auto f = [&](const std::vector<Tensor<double>>& in) {
    return rnr::bce_with_logits(model.forward_logits(in[0], ids), gt);
  };
  auto res = rnr::grad_check(f, inputs);
  INFO(res.summary());
  CHECK(res.pass);
}
