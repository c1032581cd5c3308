#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnr/image_io.hpp"
#include "rnr/tensor.hpp"

namespace rnr {

namespace detail {

inline void check_mask_pair(const Tensor<float>& prob, const GrayImage& gt) {
  require_shape(prob.rank() == 2 && prob.extent(0) == gt.h && prob.extent(1) == gt.w,
                "metrics: prediction " + shape_str(prob.shape()) + " vs ground truth [" +
                    std::to_string(gt.h) + "," + std::to_string(gt.w) + "]");
  bool any = false;
  for (auto v : gt.pixels)
    if (v) any = true;
  if (!any) throw ContractError("metrics: empty ground-truth mask");
}

}  // namespace detail

// Highest-activation pixel (ties: smallest row-major index) inside gt?
inline bool pointing_game(const Tensor<float>& prob, const GrayImage& gt) {
  detail::check_mask_pair(prob, gt);
  std::size_t best = 0;
  for (std::size_t i = 1; i < prob.size(); ++i)
    if (prob.data()[i] > prob.data()[best]) best = i;
  return gt.pixels[best] != 0;
}

// Any of the top-k activations (stable ties) inside gt?
inline bool recall_at_k(const Tensor<float>& prob, const GrayImage& gt, int k) {
  detail::check_mask_pair(prob, gt);
  if (k < 1 || static_cast<std::size_t>(k) > prob.size())
    throw ContractError("recall_at_k: k=" + std::to_string(k) + " outside [1, pixel count]");
  std::vector<std::size_t> idx(prob.size());
  std::iota(idx.begin(), idx.end(), 0);
  const float* p = prob.data();
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                    [p](std::size_t a, std::size_t b) {
                      if (p[a] != p[b]) return p[a] > p[b];
                      return a < b;
                    });
  for (int i = 0; i < k; ++i)
    if (gt.pixels[idx[static_cast<std::size_t>(i)]]) return true;
  return false;
}

// Dataset-cumulative IoU of thresholded predictions (not mean of per-image).
inline double overall_iou(const std::vector<Tensor<float>>& probs,
                          const std::vector<GrayImage>& gts, double threshold = 0.5) {
  if (probs.empty() || probs.size() != gts.size())
    throw ContractError("overall_iou: empty or mismatched collections");
  std::uint64_t inter = 0, uni = 0;
  for (std::size_t s = 0; s < probs.size(); ++s) {
    detail::check_mask_pair(probs[s], gts[s]);
    const float* p = probs[s].data();
    for (std::size_t i = 0; i < probs[s].size(); ++i) {
      const bool pred = p[i] >= threshold;
      const bool gt = gts[s].pixels[i] != 0;
      inter += pred && gt;
      uni += pred || gt;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Fraction of masks containing the centre pixel (floor(H/2), floor(W/2)).
inline double center_baseline(const std::vector<GrayImage>& gts) {
  if (gts.empty()) throw ContractError("center_baseline: empty collection");
  std::size_t hits = 0;
  for (const auto& gt : gts)
    if (gt.at(gt.h / 2, gt.w / 2)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(gts.size());
}

// One prediction/ground-truth pair plus the metadata used for stratification.
struct EvalItem {
  Tensor<float> prob;
  GrayImage gt;
  std::string action;
  int word_count = 0;
};

struct EvalReport {
  int n = 0;
  double pgm = 0.0;
  std::map<int, double> recall_at;
  double overall_iou = 0.0;
  std::map<std::string, EvalReport> strata;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["n"] = n;
    j["pgm"] = pgm;
    nlohmann::ordered_json rk;
    for (const auto& [k, v] : recall_at) rk[std::to_string(k)] = v;
    j["recall_at"] = rk;
    j["overall_iou"] = overall_iou;
    if (!strata.empty()) {
      nlohmann::ordered_json st;
      for (const auto& [label, rep] : strata) st[label] = rep.to_json();
      j["strata"] = st;
    }
    return j;
  }

  std::string to_text() const { return to_json().dump(2) + "\n"; }
};

inline std::vector<int> default_recall_ks() { return {1, 2, 5, 10, 20}; }

inline EvalReport compute_report(const std::vector<const EvalItem*>& items,
                                 const std::vector<int>& ks) {
  if (items.empty()) throw ContractError("compute_report: empty collection");
  EvalReport rep;
  rep.n = static_cast<int>(items.size());
  std::vector<int> all_ks = ks;
  if (std::find(all_ks.begin(), all_ks.end(), 1) == all_ks.end()) all_ks.push_back(1);
  std::sort(all_ks.begin(), all_ks.end());
  all_ks.erase(std::unique(all_ks.begin(), all_ks.end()), all_ks.end());
  // drop ks beyond the smallest mask (they would be trivially hits anyway)
  std::size_t min_pixels = items[0]->prob.size();
  for (const EvalItem* it : items) min_pixels = std::min(min_pixels, it->prob.size());
  std::erase_if(all_ks, [&](int k) { return static_cast<std::size_t>(k) > min_pixels; });

  std::size_t pg_hits = 0;
  std::map<int, std::size_t> k_hits;
  std::vector<Tensor<float>> probs;
  std::vector<GrayImage> gts;
  for (const EvalItem* it : items) {
    if (pointing_game(it->prob, it->gt)) ++pg_hits;
    for (int k : all_ks)
      if (recall_at_k(it->prob, it->gt, k)) ++k_hits[k];
    probs.push_back(it->prob);
    gts.push_back(it->gt);
  }
  rep.pgm = static_cast<double>(pg_hits) / rep.n;
  for (int k : all_ks) rep.recall_at[k] = static_cast<double>(k_hits[k]) / rep.n;
  rep.overall_iou = overall_iou(probs, gts);
  return rep;
}

inline std::string length_bucket(int words) {
  if (words < 10) return "T<10";
  if (words < 20) return "10<=T<20";
  return "T>=20";
}

// strata: "none", "length" (word-count buckets) or "action".
inline EvalReport stratified_report(const std::vector<EvalItem>& items, const std::string& strata,
                                    const std::vector<int>& ks = default_recall_ks()) {
  if (strata != "none" && strata != "length" && strata != "action")
    throw ConfigError("stratified_report: unknown stratum '" + strata + "'");
  std::vector<const EvalItem*> all;
  for (const auto& it : items) all.push_back(&it);
  EvalReport rep = compute_report(all, ks);
  if (strata == "none") return rep;

  std::map<std::string, std::vector<const EvalItem*>> groups;
  for (const auto& it : items)
    groups[strata == "length" ? length_bucket(it.word_count) : it.action].push_back(&it);
  for (const auto& [label, group] : groups) rep.strata[label] = compute_report(group, ks);
  return rep;
}

}  // namespace rnr
