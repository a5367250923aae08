#pragma once

#include <array>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "moe_affect/data_model.hpp"
#include "moe_affect/rng.hpp"

namespace moe_affect {

/// Seeded generators for desk-scale fixtures: Gaussian-mixture embedding
/// bundles, AU-style frame sequences, confusion-matrix labeler simulators,
/// and schema-complete VLM records.
struct SynthConfig {
  struct Branch {
    std::string name;
    BranchKind kind = BranchKind::vector;
    std::size_t dim = 8;
    double separation = 2.0;   // class-center scale s
    double noise = 0.5;        // per-sample sigma
    bool informative = true;   // uninformative branches share one center
    std::size_t t_min = 3;     // sequence branches only
    std::size_t t_max = 8;
  };

  std::size_t n = 100;
  // default prior mirrors the skew of a realistic validation set
  std::array<double, kNumClasses> prior = {0.248, 0.240, 0.206, 0.145, 0.122, 0.039};
  std::vector<Branch> branches;
  std::uint64_t seed = 42;

  void validate() const {
    double sum = 0;
    for (double p : prior) {
      if (p < 0) throw std::invalid_argument("synth config: negative prior");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("synth config: prior must sum to 1");
    if (branches.empty()) throw std::invalid_argument("synth config: no branches");
    for (const auto& b : branches) {
      if (b.noise <= 0) throw std::invalid_argument("synth config: sigma must be > 0");
      if (b.dim < 1) throw std::invalid_argument("synth config: dim must be >= 1");
      if (b.kind == BranchKind::sequence && (b.t_min < 1 || b.t_max < b.t_min))
        throw std::invalid_argument("synth config: bad sequence length range");
    }
  }
};

using ConfusionMatrix = std::array<std::array<double, kNumClasses>, kNumClasses>;

inline ConfusionMatrix identity_confusion() {
  ConfusionMatrix m{};
  for (std::size_t i = 0; i < kNumClasses; ++i) m[i][i] = 1.0;
  return m;
}

/// Uniform off-diagonal confusion with the given diagonal accuracy.
inline ConfusionMatrix uniform_confusion(double accuracy) {
  ConfusionMatrix m{};
  for (std::size_t i = 0; i < kNumClasses; ++i)
    for (std::size_t j = 0; j < kNumClasses; ++j)
      m[i][j] = (i == j) ? accuracy : (1.0 - accuracy) / double(kNumClasses - 1);
  return m;
}

inline void validate_confusion(const ConfusionMatrix& m) {
  for (const auto& row : m) {
    double sum = 0;
    for (double v : row) {
      if (v < 0) throw std::invalid_argument("confusion matrix: negative entry");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("confusion matrix: row does not sum to 1");
  }
}

/// Labeled Gaussian-mixture bundle. Class centers are drawn once per
/// (class, branch) from the config seed; samples use per-index substreams so
/// generation is order-independent.
inline EmbeddingBundle gen_bundle(const SynthConfig& cfg) {
  cfg.validate();
  EmbeddingBundle b;
  Rng center_rng(cfg.seed);

  // per branch: centers[class] (uninformative branches collapse to one center)
  std::vector<std::vector<std::vector<float>>> centers;
  for (const auto& br : cfg.branches) {
    b.branches.push_back({br.name, br.kind, br.dim});
    std::vector<std::vector<float>> cs(kNumClasses, std::vector<float>(br.dim));
    for (std::size_t c = 0; c < kNumClasses; ++c)
      for (std::size_t j = 0; j < br.dim; ++j)
        cs[c][j] = float(center_rng.normal(0.0, br.separation));
    if (!br.informative)
      for (std::size_t c = 1; c < kNumClasses; ++c) cs[c] = cs[0];
    centers.push_back(std::move(cs));
  }

  std::vector<std::size_t> classes(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    Rng rng = Rng::substream(cfg.seed, i);
    classes[i] = rng.categorical({cfg.prior.begin(), cfg.prior.end()});
    char idbuf[24];
    std::snprintf(idbuf, sizeof idbuf, "s%06zu", i);
    b.ids.push_back(idbuf);
    b.labels[idbuf] = emotion_from_index(classes[i]);
  }

  for (std::size_t m = 0; m < cfg.branches.size(); ++m) {
    const auto& br = cfg.branches[m];
    if (br.kind == BranchKind::vector) {
      Mat<float> mat(cfg.n, br.dim);
      for (std::size_t i = 0; i < cfg.n; ++i) {
        Rng rng = Rng::substream(cfg.seed ^ (0x9e3779b97f4a7c15ULL * (m + 1)), i);
        for (std::size_t j = 0; j < br.dim; ++j)
          mat(i, j) = centers[m][classes[i]][j] + float(rng.normal(0.0, br.noise));
      }
      b.vectors[br.name] = std::move(mat);
    } else {
      std::vector<Mat<float>> seqs;
      for (std::size_t i = 0; i < cfg.n; ++i) {
        Rng rng = Rng::substream(cfg.seed ^ (0x9e3779b97f4a7c15ULL * (m + 1)), i);
        std::size_t t = br.t_min + std::size_t(rng.below(br.t_max - br.t_min + 1));
        Mat<float> frames(t, br.dim);
        for (std::size_t f = 0; f < t; ++f)
          for (std::size_t j = 0; j < br.dim; ++j)
            frames(f, j) = centers[m][classes[i]][j] + float(rng.normal(0.0, br.noise));
        seqs.push_back(std::move(frames));
      }
      b.sequences[br.name] = std::move(seqs);
    }
  }
  b.validate();
  return b;
}

/// Labels sampled per truth row from its confusion row; probabilities are the
/// one-hot smoothed by 0.05 toward uniform.
inline PredictionSet gen_noisy_predictions(const std::vector<SampleId>& ids,
                                           const std::map<SampleId, Emotion>& truth,
                                           const ConfusionMatrix& confusion,
                                           std::uint64_t seed) {
  validate_confusion(confusion);
  constexpr double eps = 0.05;
  PredictionSet ps;
  ps.ids = ids;
  ps.probs = Mat<double>(ids.size(), kNumClasses);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Rng rng = Rng::substream(seed, i);
    const auto& row = confusion[class_index(truth.at(ids[i]))];
    std::size_t pick = rng.categorical({row.begin(), row.end()});
    for (std::size_t k = 0; k < kNumClasses; ++k)
      ps.probs(i, k) = (k == pick ? 1.0 - eps : 0.0) + eps / double(kNumClasses);
  }
  ps.recompute_labels();
  return ps;
}

/// Wraps predictions into schema-complete VLM records.
inline std::vector<VlmKnowledgeRecord> gen_vlm_records(const PredictionSet& preds,
                                                       std::uint64_t /*seed*/) {
  std::vector<VlmKnowledgeRecord> out;
  out.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    VlmKnowledgeRecord r;
    r.id = preds.ids[i];
    r.reasoning = "synthetic placeholder reasoning for " + r.id;
    for (std::size_t k = 0; k < kNumClasses; ++k) r.confidence[k] = preds.probs(i, k);
    r.label = preds.labels[i];
    r.modality_contribution = {{"audio", 0.4}, {"video", 0.4}, {"text", 0.2}};
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace moe_affect
