#pragma once

#include <vector>

#include "rnr/random.hpp"
#include "rnr/tensor.hpp"

namespace test_util {

// Deterministic random tensor in [lo,hi).
template <typename T>
rnr::Tensor<T> rand_tensor(rnr::Shape shape, rnr::Xoshiro256& rng, double lo = -1.0,
                           double hi = 1.0) {
  rnr::Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
rnr::Tensor<T> binary_tensor(rnr::Shape shape, rnr::Xoshiro256& rng, double p = 0.3) {
  rnr::Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.next_double() < p ? T(1) : T(0);
  return t;
}

}  // namespace test_util
