#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "rnr/data.hpp"
#include "rnr/metrics.hpp"
#include "rnr/model.hpp"
#include "rnr/optim.hpp"

namespace rnr {

// Runs fn(i) for i in [0,n) across up to `threads` workers. Work is
// partitioned statically by index stride; outputs must go to per-index slots
// so the result is independent of scheduling.
template <typename Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  const int t = std::max(1, std::min(threads, n));
  if (t == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(t));
  for (int w = 0; w < t; ++w)
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += t) fn(i);
    });
  for (auto& th : pool) th.join();
}

inline int default_threads() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 2 : static_cast<int>(hc);
}

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double val_pgm = 0.0;
};

struct TrainResult {
  ParamStore<float> best_params;
  std::vector<std::pair<std::int64_t, float>> loss_trace;  // (optimizer step, batch loss)
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
  double best_val_pgm = 0.0;
};

// Validation pointing-game score of the current parameters.
inline double validation_pgm(const GroundingModel<float>& model,
                             const std::vector<LoadedSample>& samples, int threads) {
  std::vector<char> hits(samples.size(), 0);
  parallel_for(static_cast<int>(samples.size()), threads, [&](int i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    auto pred = model.predict(s.image, s.token_ids);
    hits[static_cast<std::size_t>(i)] = pointing_game(pred.probabilities, s.gt) ? 1 : 0;
  });
  const int hit_count = std::accumulate(hits.begin(), hits.end(), 0);
  return static_cast<double>(hit_count) / static_cast<double>(samples.size());
}

// End-to-end BCE training with per-epoch validation. Batch elements run on
// separate threads with their own tapes; gradients accumulate in sample-index
// order, so results are bit-identical regardless of thread count.
inline TrainResult train(GroundingModel<float>& model, const std::vector<LoadedSample>& train_set,
                         const std::vector<LoadedSample>& val_set, std::ostream* log = nullptr,
                         int threads = default_threads()) {
  if (train_set.empty()) throw ContractError("train: empty training set");
  const TrainConfig& cfg = model.cfg;
  const int n = static_cast<int>(train_set.size());
  const int batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total_steps = static_cast<std::int64_t>(cfg.epochs) * batches_per_epoch;

  OptimizerState<float> opt;
  opt.lr0 = cfg.lr0;
  opt.weight_decay = cfg.weight_decay;

  TrainResult result;
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Xoshiro256 shuffle_rng(mix_seed(cfg.seed, 0xE70C000ull + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    for (int b = 0; b < batches_per_epoch; ++b) {
      const int lo = b * cfg.batch_size;
      const int hi = std::min(n, lo + cfg.batch_size);
      const int bs = hi - lo;

      std::vector<float> losses(static_cast<std::size_t>(bs));
      std::vector<GradMap<float>> grads(static_cast<std::size_t>(bs));
      parallel_for(bs, threads, [&](int k) {
        const LoadedSample& s = train_set[static_cast<std::size_t>(order[static_cast<std::size_t>(lo + k)])];
        Tensor<float> gt({s.gt.h, s.gt.w});
        for (std::size_t i = 0; i < gt.size(); ++i) gt.data()[i] = s.gt.pixels[i] ? 1.0f : 0.0f;
        Tape<float> tape;
        TapeScope<float> scope(tape);
        Tensor<float> loss = bce_with_logits(model.forward_logits(s.image, s.token_ids), gt);
        tape.backward(loss);
        losses[static_cast<std::size_t>(k)] = loss.item();
        GradMap<float>& g = grads[static_cast<std::size_t>(k)];
        for (const auto& [name, p] : model.params.all()) g[name] = tape.grad_of(p);
      });

      float batch_loss = 0.0f;
      for (float l : losses) batch_loss += l;
      batch_loss /= static_cast<float>(bs);
      if (!std::isfinite(batch_loss))
        throw TrainingError("non-finite training loss at optimizer step " + std::to_string(step) +
                            " (epoch " + std::to_string(epoch) + ")");

      // fixed reduction order: sample 0, 1, ... of the batch
      GradMap<float> acc = std::move(grads[0]);
      for (int k = 1; k < bs; ++k)
        for (auto& [name, g] : acc) {
          const auto& src = grads[static_cast<std::size_t>(k)][name];
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
        }
      const float inv_bs = 1.0f / static_cast<float>(bs);
      for (auto& [name, g] : acc)
        for (auto& v : g) v *= inv_bs;
      if (cfg.clip_norm > 0) clip_global_norm(acc, cfg.clip_norm);

      const double lr_t = poly_decay_lr(step, total_steps, cfg.lr0, cfg.decay_power);
      adamw_step(model.params, acc, opt, lr_t);
      result.loss_trace.emplace_back(step, batch_loss);
      epoch_loss += batch_loss;
      ++step;
    }

    EpochStats st;
    st.epoch = epoch;
    st.mean_loss = epoch_loss / batches_per_epoch;
    st.val_pgm = val_set.empty() ? 0.0 : validation_pgm(model, val_set, threads);
    result.epochs.push_back(st);
    if (st.val_pgm > result.best_val_pgm || result.best_epoch < 0) {
      result.best_epoch = epoch;
      result.best_val_pgm = st.val_pgm;
      result.best_params = model.params.clone();
    }
    if (log)
      (*log) << "epoch " << epoch << " mean_loss " << st.mean_loss << " val_pgm " << st.val_pgm
             << "\n"
             << std::flush;
  }
  return result;
}

// Loss trace as two-column CSV; %.9g round-trips binary32 exactly.
inline void write_loss_trace(const std::string& path,
                             const std::vector<std::pair<std::int64_t, float>>& trace) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write loss trace: " + path);
  f << "step,loss\n";
  char buf[64];
  for (const auto& [step, loss] : trace) {
    std::snprintf(buf, sizeof(buf), "%lld,%.9g\n", static_cast<long long>(step),
                  static_cast<double>(loss));
    f << buf;
  }
}

}  // namespace rnr
