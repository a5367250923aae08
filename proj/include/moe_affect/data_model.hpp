#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "moe_affect/mat.hpp"
#include "moe_affect/taxonomy.hpp"

#include <nlohmann/json.hpp>

namespace moe_affect {

using SampleId = std::string;

enum class BranchKind : std::uint8_t { vector, sequence };

struct BranchSpec {
  std::string name;
  BranchKind kind = BranchKind::vector;
  std::size_t dim = 0;  // feature width; 35 for AU frames

  bool operator==(const BranchSpec&) const = default;
};

/// Per-sample, per-branch features. Vector branches are one (n x dim) matrix;
/// sequence branches are ragged lists of (T_i x dim) matrices. Model math is
/// 32-bit throughout, so payloads are float.
struct EmbeddingBundle {
  std::vector<BranchSpec> branches;
  std::vector<SampleId> ids;
  std::map<std::string, Mat<float>> vectors;                  // branch name -> n x dim
  std::map<std::string, std::vector<Mat<float>>> sequences;   // branch name -> n ragged mats
  std::map<SampleId, Emotion> labels;                         // optional; may cover a subset

  std::size_t size() const { return ids.size(); }

  bool fully_labeled() const {
    for (const auto& id : ids)
      if (!labels.count(id)) return false;
    return true;
  }

  const BranchSpec& branch(std::size_t i) const { return branches.at(i); }

  void validate() const {
    std::set<SampleId> seen;
    for (const auto& id : ids) {
      if (id.empty()) throw std::invalid_argument("bundle: empty sample id");
      if (!seen.insert(id).second) throw std::invalid_argument("bundle: duplicate id " + id);
    }
    std::set<std::string> branch_names;
    for (const auto& b : branches) {
      if (b.dim < 1) throw std::invalid_argument("bundle: branch dim < 1: " + b.name);
      if (!branch_names.insert(b.name).second)
        throw std::invalid_argument("bundle: duplicate branch name " + b.name);
      if (b.kind == BranchKind::vector) {
        auto it = vectors.find(b.name);
        if (it == vectors.end()) throw std::invalid_argument("bundle: missing vector branch " + b.name);
        if (it->second.rows != ids.size() || it->second.cols != b.dim)
          throw std::invalid_argument("bundle: shape mismatch in branch " + b.name);
        if (!it->second.all_finite())
          throw std::invalid_argument("bundle: non-finite value in branch " + b.name);
      } else {
        auto it = sequences.find(b.name);
        if (it == sequences.end()) throw std::invalid_argument("bundle: missing sequence branch " + b.name);
        if (it->second.size() != ids.size())
          throw std::invalid_argument("bundle: sample-count mismatch in branch " + b.name);
        for (const auto& m : it->second) {
          if (m.rows < 1) throw std::invalid_argument("bundle: empty sequence in branch " + b.name);
          if (m.cols != b.dim) throw std::invalid_argument("bundle: frame-width mismatch in branch " + b.name);
          if (!m.all_finite()) throw std::invalid_argument("bundle: non-finite value in branch " + b.name);
        }
      }
    }
    for (const auto& [id, lbl] : labels)
      if (!seen.count(id)) throw std::invalid_argument("bundle: label for unknown id " + id);
  }

  /// Restriction to a subset of ids, preserving the given order.
  EmbeddingBundle subset(const std::vector<SampleId>& keep) const {
    std::map<SampleId, std::size_t> pos;
    for (std::size_t i = 0; i < ids.size(); ++i) pos[ids[i]] = i;
    EmbeddingBundle out;
    out.branches = branches;
    for (const auto& id : keep) {
      auto it = pos.find(id);
      if (it == pos.end()) throw std::invalid_argument("subset: unknown id " + id);
      out.ids.push_back(id);
      auto lit = labels.find(id);
      if (lit != labels.end()) out.labels[id] = lit->second;
    }
    for (const auto& b : branches) {
      if (b.kind == BranchKind::vector) {
        const Mat<float>& src = vectors.at(b.name);
        Mat<float> dst(keep.size(), b.dim);
        for (std::size_t i = 0; i < keep.size(); ++i) {
          std::size_t r = pos.at(keep[i]);
          for (std::size_t j = 0; j < b.dim; ++j) dst(i, j) = src(r, j);
        }
        out.vectors[b.name] = std::move(dst);
      } else {
        const auto& src = sequences.at(b.name);
        std::vector<Mat<float>> dst;
        dst.reserve(keep.size());
        for (const auto& id : keep) dst.push_back(src[pos.at(id)]);
        out.sequences[b.name] = std::move(dst);
      }
    }
    return out;
  }
};

/// One external VLM response per sample. Unknown extra JSON fields are kept
/// opaquely so records survive round-trips through newer schema versions.
struct VlmKnowledgeRecord {
  SampleId id;
  std::string reasoning;
  std::array<double, kNumClasses> confidence{};  // taxonomy order, raw (not normalized)
  Emotion label = Emotion::neutral;
  std::map<std::string, double> modality_contribution;
  nlohmann::json extra = nlohmann::json::object();

  void validate() const {
    if (id.empty()) throw std::invalid_argument("vlm record: empty id");
    for (double c : confidence)
      if (!std::isfinite(c) || c < 0)
        throw std::invalid_argument("vlm record " + id + ": bad confidence");
    for (const auto& [k, v] : modality_contribution)
      if (!std::isfinite(v) || v < 0)
        throw std::invalid_argument("vlm record " + id + ": bad modality contribution");
  }
};

/// Argmax with ties broken by lowest class index.
inline std::size_t argmax_class(const double* row, std::size_t k = kNumClasses) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

/// Per-sample class-probability rows plus argmax labels; the unit of voting.
/// Probabilities are held in 64-bit so voting and metrics are exactly
/// reproducible.
struct PredictionSet {
  std::vector<SampleId> ids;
  Mat<double> probs;            // n x 6
  std::vector<Emotion> labels;  // argmax per row

  std::size_t size() const { return ids.size(); }

  void recompute_labels() {
    labels.resize(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
      labels[i] = emotion_from_index(argmax_class(&probs(i, 0)));
  }

  void validate() const {
    if (probs.rows != ids.size() || probs.cols != kNumClasses)
      throw std::invalid_argument("prediction set: probs shape mismatch");
    if (labels.size() != ids.size())
      throw std::invalid_argument("prediction set: label count mismatch");
    std::set<SampleId> seen;
    for (const auto& id : ids)
      if (!seen.insert(id).second) throw std::invalid_argument("prediction set: duplicate id " + id);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < kNumClasses; ++j) {
        double p = probs(i, j);
        if (!(p >= 0.0 && p <= 1.0))
          throw std::invalid_argument("prediction set: probability out of [0,1] at " + ids[i]);
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-5)
        throw std::invalid_argument("prediction set: row sum off by >1e-5 at " + ids[i]);
      if (class_index(labels[i]) != argmax_class(&probs(i, 0)))
        throw std::invalid_argument("prediction set: label/argmax mismatch at " + ids[i]);
    }
  }
};

/// Held-out accuracy per expert, used as voting weight.
struct ReliabilityTable {
  std::map<std::string, double> entries;  // expert id -> r in [0,1]
  std::size_t n_eval = 0;

  void validate() const {
    if (n_eval < 1) throw std::invalid_argument("reliability table: n_eval < 1");
    for (const auto& [k, r] : entries)
      if (!(r >= 0.0 && r <= 1.0))
        throw std::invalid_argument("reliability table: r out of [0,1] for " + k);
  }
};

}  // namespace moe_affect
