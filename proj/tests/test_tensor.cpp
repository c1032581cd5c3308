#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "rnr/gradcheck.hpp"
#include "rnr/random.hpp"
#include "rnr/tensor.hpp"
#include "test_util.hpp"

using rnr::Tape;
using rnr::TapeScope;
using rnr::Tensor;
using test_util::rand_tensor;

using D = double;
using TD = Tensor<double>;

TEST_CASE("matmul identity and hand arithmetic") {
  TD a = TD::from({2, 2}, {1, 2, 3, 4});
  TD eye = TD::from({2, 2}, {1, 0, 0, 1});
  TD r = rnr::matmul(a, eye);
  for (int i = 0; i < 4; ++i) CHECK(r.data()[i] == a.data()[i]);

  TD b = TD::from({2, 1}, {5, 6});
  TD p = rnr::matmul(a, b);
  CHECK(p.data()[0] == 17.0);
  CHECK(p.data()[1] == 39.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  TD a = TD::from({2, 3}, {1, 2, 3, 4, 5, 6});
  TD b = TD::from({2, 2}, {1, 2, 3, 4});
  try {
    rnr::matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const rnr::ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[2,2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradcheck vs finite differences") {
  rnr::Xoshiro256 rng(11);
  TD a = rand_tensor<D>({3, 4}, rng);
  TD b = rand_tensor<D>({4, 2}, rng);
  auto f = [](const std::vector<TD>& in) { return rnr::sum_all(rnr::matmul(in[0], in[1])); };
  auto res = rnr::grad_check(f, {a, b});
  INFO(res.summary());
  CHECK(res.pass);
}

TEST_CASE("conv2d identity 1x1") {
  rnr::Xoshiro256 rng(5);
  TD x = rand_tensor<D>({2, 4, 4}, rng);
  TD w = TD::from({2, 2, 1, 1}, {1, 0, 0, 1});
  TD bias({2});
  TD y = rnr::conv2d(x, w, bias);
  REQUIRE(y.shape() == rnr::Shape{2, 4, 4});
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d all-ones 3x3 on constant image") {
  TD x({1, 5, 5}, 5.0);
  TD w({1, 1, 3, 3}, 1.0);
  TD bias({1});
  TD y = rnr::conv2d(x, w, bias);
  // interior pixel sees all 9 taps
  CHECK(y.data()[2 * 5 + 2] == 45.0);
  // corner pixel only sees the 4 in-bounds taps (zero padding)
  CHECK(y.data()[0] == 20.0);
}

TEST_CASE("conv2d channel mismatch error") {
  TD x({3, 4, 4});
  TD w({2, 2, 3, 3});
  TD bias({2});
  CHECK_THROWS_AS(rnr::conv2d(x, w, bias), rnr::ShapeError);
}

TEST_CASE("conv2d gradcheck x, w, bias") {
  rnr::Xoshiro256 rng(7);
  TD x = rand_tensor<D>({1, 4, 4}, rng);
  TD w = rand_tensor<D>({2, 1, 3, 3}, rng);
  TD bias = rand_tensor<D>({2}, rng);
  auto f = [](const std::vector<TD>& in) {
    return rnr::mean_all(rnr::conv2d(in[0], in[1], in[2]));
  };
  auto res = rnr::grad_check(f, {x, w, bias});
  INFO(res.summary());
  CHECK(res.pass);
}

TEST_CASE("conv2d stride and dilation gradcheck") {
  rnr::Xoshiro256 rng(8);
  TD x = rand_tensor<D>({2, 5, 5}, rng);
  TD w = rand_tensor<D>({3, 2, 3, 3}, rng);
  TD bias = rand_tensor<D>({3}, rng);
  SECTION("stride 2") {
    auto f = [](const std::vector<TD>& in) {
      return rnr::mean_all(rnr::conv2d(in[0], in[1], in[2], 2, 1));
    };
    auto res = rnr::grad_check(f, {x, w, bias});
    INFO(res.summary());
    CHECK(res.pass);
  }
  SECTION("dilation 2") {
    auto f = [](const std::vector<TD>& in) {
      return rnr::mean_all(rnr::conv2d(in[0], in[1], in[2], 1, 2));
    };
    auto res = rnr::grad_check(f, {x, w, bias});
    INFO(res.summary());
    CHECK(res.pass);
  }
}

TEST_CASE("softmax basics") {
  TD x = TD::from({2}, {0, 0});
  TD y = rnr::softmax(x, 0);
  CHECK(y.data()[0] == Catch::Approx(0.5));
  CHECK(y.data()[1] == Catch::Approx(0.5));

  // shift invariance
  rnr::Xoshiro256 rng(3);
  TD a = rand_tensor<D>({5}, rng);
  TD b = a.clone();
  for (std::size_t i = 0; i < b.size(); ++i) b.data()[i] += 3.7;
  TD ya = rnr::softmax(a, 0);
  TD yb = rnr::softmax(b, 0);
  for (std::size_t i = 0; i < ya.size(); ++i)
    CHECK(ya.data()[i] == Catch::Approx(yb.data()[i]).margin(1e-12));
}

TEST_CASE("softmax slices sum to one and lie in [0,1]") {
  rnr::Xoshiro256 rng(9);
  TD x = rand_tensor<D>({4, 6}, rng, -30.0, 30.0);
  for (int axis : {0, 1}) {
    TD y = rnr::softmax(x, axis);
    const int L = x.extent(axis);
    const int other = x.extent(1 - axis);
    for (int o = 0; o < other; ++o) {
      double s = 0;
      for (int l = 0; l < L; ++l) {
        double v = axis == 0 ? y.data()[l * other + o] : y.data()[o * L + l];
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("softmax gradcheck") {
  rnr::Xoshiro256 rng(13);
  TD x = rand_tensor<D>({5}, rng);
  TD wgt = rand_tensor<D>({5}, rng);  // random projection to scalar
  auto f = [&](const std::vector<TD>& in) {
    return rnr::sum_all(rnr::mul(rnr::softmax(in[0], 0), in[1]));
  };
  auto res = rnr::grad_check(f, {x, wgt});
  INFO(res.summary());
  CHECK(res.pass);
}

TEST_CASE("bilinear_resize constant preservation is exact") {
  TD x({3, 2, 2}, 0.37);
  TD y = rnr::bilinear_resize(x, 7, 5);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.data()[i] == 0.37);
}

TEST_CASE("bilinear_resize 1d linear interpolation values") {
  TD x = TD::from({1, 1, 2}, {0, 1});
  TD y = rnr::bilinear_resize(x, 1, 4);
  REQUIRE(y.size() == 4);
  CHECK(y.data()[0] == Catch::Approx(0.0));
  CHECK(y.data()[1] == Catch::Approx(0.25));
  CHECK(y.data()[2] == Catch::Approx(0.75));
  CHECK(y.data()[3] == Catch::Approx(1.0));
}

TEST_CASE("bilinear_resize gradcheck") {
  rnr::Xoshiro256 rng(17);
  TD x = rand_tensor<D>({1, 2, 2}, rng);
  TD wgt = rand_tensor<D>({1, 4, 4}, rng);
  auto f = [](const std::vector<TD>& in) {
    return rnr::sum_all(rnr::mul(rnr::bilinear_resize(in[0], 4, 4), in[1]));
  };
  auto res = rnr::grad_check(f, {x, wgt});
  INFO(res.summary());
  CHECK(res.pass);
}

TEST_CASE("bce_with_logits at zero logits equals ln 2") {
  rnr::Xoshiro256 rng(19);
  TD z({3, 3});
  TD g = test_util::binary_tensor<D>({3, 3}, rng);
  CHECK(rnr::bce_with_logits(z, g).item() == Catch::Approx(std::log(2.0)));
}

TEST_CASE("bce_with_logits gradient is (sigmoid(z)-g)/N") {
  rnr::Xoshiro256 rng(23);
  TD z = rand_tensor<D>({4}, rng, -3.0, 3.0);
  TD g = test_util::binary_tensor<D>({4}, rng, 0.5);
  z.set_requires_grad(true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    TD loss = rnr::bce_with_logits(z, g);
    tape.backward(loss);
  }
  auto gz = tape.grad_of(z);
  for (int i = 0; i < 4; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-z.data()[i]));
    CHECK(gz[i] == Catch::Approx((s - g.data()[i]) / 4.0).margin(1e-12));
  }
}

TEST_CASE("bce_with_logits shape mismatch") {
  TD z({2, 2});
  TD g({4});
  CHECK_THROWS_AS(rnr::bce_with_logits(z, g), rnr::ShapeError);
}

TEST_CASE("bce_with_logits gradcheck") {
  rnr::Xoshiro256 rng(29);
  TD z = rand_tensor<D>({3, 3}, rng, -2.0, 2.0);
  TD g = test_util::binary_tensor<D>({3, 3}, rng, 0.4);
  auto f = [&](const std::vector<TD>& in) { return rnr::bce_with_logits(in[0], g); };
  auto res = rnr::grad_check(f, {z});
  INFO(res.summary());
  CHECK(res.pass);
}

TEST_CASE("backward: d sum(x^2)/dx = 2x") {
  rnr::Xoshiro256 rng(31);
  TD x = rand_tensor<D>({6}, rng);
  x.set_requires_grad(true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    TD loss = rnr::sum_all(rnr::mul(x, x));
    tape.backward(loss);
  }
  auto gx = tape.grad_of(x);
  for (int i = 0; i < 6; ++i) CHECK(gx[i] == Catch::Approx(2.0 * x.data()[i]).margin(1e-12));
}

TEST_CASE("backward: gradient accumulates across two consumers") {
  TD x = TD::from({2}, {3.0, -1.0});
  x.set_requires_grad(true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    TD a = rnr::scale(x, 2.0);
    TD b = rnr::scale(x, 5.0);
    TD loss = rnr::sum_all(rnr::add(a, b));
    tape.backward(loss);
  }
  auto gx = tape.grad_of(x);
  CHECK(gx[0] == 7.0);
  CHECK(gx[1] == 7.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  TD x = TD::from({2}, {1.0, 2.0});
  x.set_requires_grad(true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  TD y = rnr::mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), rnr::ContractError);
}

TEST_CASE("gradients of unused parameters are zero") {
  TD x = TD::from({2}, {1.0, 2.0});
  TD unused = TD::from({3}, {1.0, 1.0, 1.0});
  x.set_requires_grad(true);
  unused.set_requires_grad(true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    TD loss = rnr::sum_all(x);
    tape.backward(loss);
  }
  auto gu = tape.grad_of(unused);
  REQUIRE(gu.size() == 3);
  for (double v : gu) CHECK(v == 0.0);
}

TEST_CASE("grad_check on f = sum reports zero error") {
  rnr::Xoshiro256 rng(37);
  TD x = rand_tensor<D>({4}, rng);
  auto f = [](const std::vector<TD>& in) { return rnr::sum_all(in[0]); };
  auto res = rnr::grad_check(f, {x});
  CHECK(res.pass);
  CHECK(res.max_rel_err < 1e-10);
}

TEST_CASE("grad_check passes on bce(conv2d) chain") {
  rnr::Xoshiro256 rng(41);
  TD x = rand_tensor<D>({1, 4, 4}, rng);
  TD w = rand_tensor<D>({1, 1, 3, 3}, rng);
  TD bias = rand_tensor<D>({1}, rng);
  TD g = test_util::binary_tensor<D>({1, 4, 4}, rng, 0.4);
  auto f = [&](const std::vector<TD>& in) {
    return rnr::bce_with_logits(rnr::conv2d(in[0], in[1], in[2]), g);
  };
  auto res = rnr::grad_check(f, {x, w, bias});
  INFO(res.summary());
  CHECK(res.pass);
}

TEST_CASE("grad_check catches a corrupted backward rule") {
  // A deliberately wrong op: forward x^2, backward claims d/dx = 3x.
  auto broken_square = [](const TD& a) {
    rnr::detail::OpRec<double> rec{&a};
    TD out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * a.data()[i];
    if (rec.active()) {
      const int ia = rec.ids[0];
      const std::size_t n = a.size();
      rec.record("broken_square", out, [ia, n, sa = a.storage(), on = rec.out_id()](Tape<double>& tp) {
        if (ia < 0) return;
        const auto& g = tp.grad(on);
        auto& ga = tp.grad(ia);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * 3.0 * (*sa)[i];
      });
    }
    return out;
  };
  rnr::Xoshiro256 rng(43);
  TD x = rand_tensor<D>({3}, rng, 0.5, 1.5);
  auto f = [&](const std::vector<TD>& in) { return rnr::sum_all(broken_square(in[0])); };
  auto res = rnr::grad_check(f, {x});
  CHECK_FALSE(res.pass);
}

TEST_CASE("elementwise primitives gradcheck individually") {
  rnr::Xoshiro256 rng(47);
  TD wgt = rand_tensor<D>({3, 4}, rng);
  auto project = [&](TD t) { return rnr::sum_all(rnr::mul(std::move(t), wgt)); };

  auto check = [&](const char* name, auto make) {
    TD x = rand_tensor<D>({3, 4}, rng, 0.1, 1.0);  // positive, away from relu kink
    auto f = [&](const std::vector<TD>& in) { return project(make(in[0])); };
    auto res = rnr::grad_check(f, {x});
    INFO(name << ": " << res.summary());
    CHECK(res.pass);
  };

  check("relu", [](const TD& t) { return rnr::relu(t); });
  check("tanh", [](const TD& t) { return rnr::tanh_op(t); });
  check("sigmoid", [](const TD& t) { return rnr::sigmoid(t); });
  check("scale", [](const TD& t) { return rnr::scale(t, -2.5); });
  check("transpose", [](const TD& t) { return rnr::transpose2d(rnr::transpose2d(t)); });
  check("reshape", [](const TD& t) { return rnr::reshape(rnr::reshape(t, {12}), {3, 4}); });

  {
    rnr::Xoshiro256 r2(48);
    TD a = rand_tensor<D>({3, 4}, r2);
    TD b = rand_tensor<D>({3, 4}, r2);
    auto f = [&](const std::vector<TD>& in) {
      return project(rnr::add(rnr::mul(in[0], in[1]), rnr::sub(in[0], in[1])));
    };
    auto res = rnr::grad_check(f, {a, b});
    INFO("add/mul/sub: " << res.summary());
    CHECK(res.pass);
  }
  {
    rnr::Xoshiro256 r2(49);
    TD x = rand_tensor<D>({3, 4}, r2);
    TD b = rand_tensor<D>({4}, r2);
    auto f = [&](const std::vector<TD>& in) { return project(rnr::add_row_vector(in[0], in[1])); };
    auto res = rnr::grad_check(f, {x, b});
    INFO("add_row_vector: " << res.summary());
    CHECK(res.pass);
  }
  {
    rnr::Xoshiro256 r2(50);
    TD x = rand_tensor<D>({4, 3}, r2);
    auto f = [&](const std::vector<TD>& in) {
      TD m = rnr::mean_axis0(in[0]);           // [3]
      TD s = rnr::mean_all(in[0]);             // [1]
      return rnr::add(rnr::sum_all(m), s);
    };
    auto res = rnr::grad_check(f, {x});
    INFO("mean ops: " << res.summary());
    CHECK(res.pass);
  }
  {
    rnr::Xoshiro256 r2(51);
    TD a = rand_tensor<D>({2, 3}, r2);
    TD b = rand_tensor<D>({2, 3}, r2);
    TD c = rand_tensor<D>({2, 3}, r2);
    auto f = [&](const std::vector<TD>& in) {
      TD cat = rnr::concat<double>({in[0], in[1], in[2]}, 1);  // [2,9]
      TD sl = rnr::slice(cat, 1, 2, 5);                        // crosses part boundary
      return rnr::sum_all(rnr::mul(sl, sl));
    };
    auto res = rnr::grad_check(f, {a, b, c});
    INFO("concat/slice: " << res.summary());
    CHECK(res.pass);
  }
  {
    rnr::Xoshiro256 r2(52);
    TD table = rand_tensor<D>({5, 3}, r2);
    std::vector<int> ids{1, 4, 1, 0};
    auto f = [&](const std::vector<TD>& in) {
      TD e = rnr::embedding(in[0], ids);
      return rnr::sum_all(rnr::mul(e, e));
    };
    auto res = rnr::grad_check(f, {table});
    INFO("embedding: " << res.summary());
    CHECK(res.pass);
  }
  {
    rnr::Xoshiro256 r2(53);
    TD x = rand_tensor<D>({2, 3, 3}, r2);
    auto f = [&](const std::vector<TD>& in) {
      TD m = rnr::spatial_mean(in[0]);                 // [2]
      TD b = rnr::broadcast_spatial(m, 3, 3);          // [2,3,3]
      return rnr::sum_all(rnr::mul(b, in[0]));
    };
    auto res = rnr::grad_check(f, {x});
    INFO("spatial_mean/broadcast: " << res.summary());
    CHECK(res.pass);
  }
  {
    rnr::Xoshiro256 r2(54);
    TD x = rand_tensor<D>({4, 5}, r2);
    TD gamma = rand_tensor<D>({5}, r2, 0.5, 1.5);
    TD beta = rand_tensor<D>({5}, r2);
    auto f = [&](const std::vector<TD>& in) {
      TD y = rnr::layer_norm(in[0], in[1], in[2]);
      return rnr::sum_all(rnr::mul(y, y));
    };
    auto res = rnr::grad_check(f, {x, gamma, beta});
    INFO("layer_norm: " << res.summary());
    CHECK(res.pass);
  }
}

TEST_CASE("layer_norm normalizes each row before affine") {
  rnr::Xoshiro256 rng(59);
  TD x = rand_tensor<D>({6, 8}, rng, -4.0, 4.0);
  TD gamma({8}, 1.0);
  TD beta({8});
  TD y = rnr::layer_norm(x, gamma, beta);
  for (int i = 0; i < 6; ++i) {
    double mu = 0, var = 0;
    for (int j = 0; j < 8; ++j) mu += y.data()[i * 8 + j];
    mu /= 8;
    for (int j = 0; j < 8; ++j) {
      const double d = y.data()[i * 8 + j] - mu;
      var += d * d;
    }
    var /= 8;
    CHECK(std::abs(mu) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(TD::from({2, 2}, {1, 2, 3}), rnr::ShapeError);
  TD t({2, 3});
  CHECK(t.size() == 6);
  CHECK_THROWS_AS(t.item(), rnr::ContractError);
}

TEST_CASE("float32 training mode runs the same graph") {
  using TF = Tensor<float>;
  rnr::Xoshiro256 rng(61);
  TF x = rand_tensor<float>({2, 2}, rng);
  x.set_requires_grad(true);
  Tape<float> tape;
  {
    TapeScope<float> scope(tape);
    TF loss = rnr::mean_all(rnr::mul(x, x));
    tape.backward(loss);
  }
  auto gx = tape.grad_of(x);
  for (int i = 0; i < 4; ++i) CHECK(gx[i] == Catch::Approx(0.5f * x.data()[i]).margin(1e-6));
}
