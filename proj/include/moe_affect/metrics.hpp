#pragma once

#include <array>
#include <map>
#include <stdexcept>

#include "moe_affect/data_model.hpp"

#include <nlohmann/json.hpp>

namespace moe_affect {

struct MetricsReport {
  std::array<double, kNumClasses> precision{};
  std::array<double, kNumClasses> recall{};
  std::array<double, kNumClasses> f1{};
  std::array<std::size_t, kNumClasses> support{};
  double macro_f1 = 0;
  double weighted_f1 = 0;
  double micro_f1 = 0;  // equals accuracy for single-label classification
  double accuracy = 0;
  std::size_t n = 0;
  // rows = truth, columns = prediction
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> confusion{};
};

/// Standard per-class P/R/F1 with 0/0 -> 0, macro and support-weighted
/// averages, all in 64-bit.
inline MetricsReport compute_metrics(const PredictionSet& preds,
                                     const std::map<SampleId, Emotion>& truth) {
  if (preds.size() == 0) throw std::invalid_argument("metrics: empty prediction set");
  MetricsReport r;
  r.n = preds.size();
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto it = truth.find(preds.ids[i]);
    if (it == truth.end())
      throw std::invalid_argument("metrics: no ground truth for id " + preds.ids[i]);
    r.confusion[class_index(it->second)][class_index(preds.labels[i])]++;
  }
  if (truth.size() != preds.size())
    throw std::invalid_argument("metrics: id sets differ (truth has extra ids)");

  std::size_t correct = 0;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    std::size_t tp = r.confusion[k][k];
    std::size_t fn = 0, fp = 0;
    for (std::size_t j = 0; j < kNumClasses; ++j) {
      if (j != k) {
        fn += r.confusion[k][j];
        fp += r.confusion[j][k];
      }
    }
    correct += tp;
    r.support[k] = tp + fn;
    r.precision[k] = (tp + fp) ? double(tp) / double(tp + fp) : 0.0;
    r.recall[k] = (tp + fn) ? double(tp) / double(tp + fn) : 0.0;
    double pr = r.precision[k] + r.recall[k];
    r.f1[k] = pr > 0 ? 2.0 * r.precision[k] * r.recall[k] / pr : 0.0;
  }
  double wsum = 0;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    r.macro_f1 += r.f1[k] / double(kNumClasses);
    wsum += r.f1[k] * double(r.support[k]);
  }
  r.weighted_f1 = wsum / double(r.n);
  r.accuracy = double(correct) / double(r.n);
  r.micro_f1 = r.accuracy;
  return r;
}

inline nlohmann::json metrics_to_json(const MetricsReport& r) {
  nlohmann::json per_class = nlohmann::json::object();
  for (std::size_t k = 0; k < kNumClasses; ++k)
    per_class[std::string(kClassNames[k])] = {{"precision", r.precision[k]},
                                              {"recall", r.recall[k]},
                                              {"f1", r.f1[k]},
                                              {"support", r.support[k]}};
  nlohmann::json confusion = nlohmann::json::array();
  for (const auto& row : r.confusion) confusion.push_back(row);
  return {{"n", r.n},
          {"per_class", per_class},
          {"macro_f1", r.macro_f1},
          {"weighted_f1", r.weighted_f1},
          {"micro_f1", r.micro_f1},
          {"accuracy", r.accuracy},
          {"confusion", confusion}};
}

}  // namespace moe_affect
