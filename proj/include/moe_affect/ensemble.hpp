#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "moe_affect/data_model.hpp"

namespace moe_affect {

/// Reliability of an expert: exact held-out accuracy in 64-bit.
inline double compute_reliability(const PredictionSet& preds,
                                  const std::map<SampleId, Emotion>& truth) {
  if (preds.size() == 0) throw std::invalid_argument("reliability: empty evaluation set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto it = truth.find(preds.ids[i]);
    if (it == truth.end())
      throw std::invalid_argument("reliability: missing truth for id " + preds.ids[i]);
    if (it->second == preds.labels[i]) ++correct;
  }
  return double(correct) / double(preds.size());
}

/// Reliability-weighted class mass for one sample: V_k = sum_e r_e * p_k^e,
/// plus normalized shares and the induced ranking.
struct VoteMass {
  std::array<double, kNumClasses> raw{};
  std::array<double, kNumClasses> share{};   // raw / total
  std::array<std::size_t, kNumClasses> rank{};  // class indices, best first

  void finalize() {
    double total = std::accumulate(raw.begin(), raw.end(), 0.0);
    if (total <= 0) throw std::invalid_argument("vote mass: total is not positive");
    for (std::size_t k = 0; k < kNumClasses; ++k) share[k] = raw[k] / total;
    std::iota(rank.begin(), rank.end(), std::size_t(0));
    // stable sort keeps lower class index first on ties
    std::stable_sort(rank.begin(), rank.end(),
                     [&](std::size_t a, std::size_t b) { return share[a] > share[b]; });
  }
};

struct VoteResult {
  PredictionSet predictions;  // probs = normalized shares
  std::vector<VoteMass> mass;
};

/// Weighted vote over aligned prediction sets. In the default mass mode each
/// expert contributes its full probability row; in count mode it contributes
/// an indicator on its argmax label.
inline VoteResult weighted_vote(const std::vector<std::pair<PredictionSet, double>>& experts,
                                bool count_mode = false) {
  if (experts.empty()) throw std::invalid_argument("weighted_vote: no experts");
  double r_sum = 0;
  for (const auto& [ps, r] : experts) {
    if (r < 0) throw std::invalid_argument("weighted_vote: negative reliability");
    r_sum += r;
  }
  if (r_sum <= 0) throw std::invalid_argument("weighted_vote: all reliabilities are zero");
  const auto& first = experts.front().first;
  for (const auto& [ps, r] : experts)
    if (ps.ids != first.ids)
      throw std::invalid_argument("weighted_vote: expert id sets are not aligned");

  VoteResult out;
  out.predictions.ids = first.ids;
  out.predictions.probs = Mat<double>(first.size(), kNumClasses);
  out.mass.resize(first.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    VoteMass& vm = out.mass[i];
    for (const auto& [ps, r] : experts) {
      if (count_mode) {
        vm.raw[class_index(ps.labels[i])] += r;
      } else {
        for (std::size_t k = 0; k < kNumClasses; ++k) vm.raw[k] += r * ps.probs(i, k);
      }
    }
    vm.finalize();
    for (std::size_t k = 0; k < kNumClasses; ++k) out.predictions.probs(i, k) = vm.share[k];
  }
  out.predictions.recompute_labels();
  return out;
}

struct RerankRuleSet {
  double tau = 0.25;  // strict threshold for rule 2 ("exceeds 1/4")
};

struct RerankChange {
  SampleId id;
  Emotion from;
  Emotion to;
  int rule;  // 1..3
};

struct RerankResult {
  PredictionSet predictions;
  std::vector<RerankChange> changes;
};

/// Rule-based neutral-bias correction. Only samples whose top vote class is
/// neutral are eligible; the first applicable rule fires and at most one
/// modification is made per sample:
///   1. second-ranked class is angry            -> angry
///   2. second-ranked normalized share > tau    -> that class
///   3. VLM label is angry/happy/surprised      -> the VLM label
inline RerankResult rerank(const VoteResult& vote,
                           const std::map<SampleId, Emotion>& vlm_labels,
                           const RerankRuleSet& rules = {}) {
  RerankResult out;
  out.predictions = vote.predictions;
  for (std::size_t i = 0; i < vote.predictions.size(); ++i) {
    const VoteMass& vm = vote.mass[i];
    if (vm.rank[0] != class_index(Emotion::neutral)) continue;
    std::size_t second = vm.rank[1];
    std::optional<std::pair<Emotion, int>> fired;
    if (second == class_index(Emotion::angry)) {
      fired = {Emotion::angry, 1};
    } else if (vm.share[second] > rules.tau) {
      fired = {emotion_from_index(second), 2};
    } else {
      auto it = vlm_labels.find(vote.predictions.ids[i]);
      if (it != vlm_labels.end() &&
          (it->second == Emotion::angry || it->second == Emotion::happy ||
           it->second == Emotion::surprised))
        fired = {it->second, 3};
    }
    if (fired) {
      out.changes.push_back({vote.predictions.ids[i], out.predictions.labels[i], fired->first,
                             fired->second});
      // swap the two probability entries so the row's argmax matches the
      // corrected label and the set stays a valid PredictionSet
      std::swap(out.predictions.probs(i, vm.rank[0]),
                out.predictions.probs(i, class_index(fired->first)));
      out.predictions.labels[i] = fired->first;
    }
  }
  return out;
}

/// Per-class shares of a label list, in taxonomy order.
inline std::array<double, kNumClasses> distribution_report(const std::vector<Emotion>& labels) {
  if (labels.empty()) throw std::invalid_argument("distribution: empty input");
  std::array<double, kNumClasses> shares{};
  for (Emotion e : labels) shares[class_index(e)] += 1.0;
  for (double& s : shares) s /= double(labels.size());
  return shares;
}

}  // namespace moe_affect
