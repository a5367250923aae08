#pragma once

#include <array>
#include <map>
#include <stdexcept>
#include <vector>

#include "moe_affect/data_model.hpp"

namespace moe_affect {

/// Samples where the task model and the VLM emit the same label, with their
/// agreed label and per-source provenance.
struct PseudoSet {
  std::vector<SampleId> ids;  // model-prediction order
  std::map<SampleId, Emotion> labels;
  std::map<SampleId, std::pair<Emotion, Emotion>> provenance;  // (model, vlm)
  std::size_t model_source_size = 0;
  std::size_t vlm_source_size = 0;
};

/// Keeps exactly the ids present in both sources whose argmax labels agree.
/// Probability vectors and VLM confidences are deliberately ignored; the
/// filter is agreement alone.
inline PseudoSet consensus_filter(const PredictionSet& model_preds,
                                  const std::vector<VlmKnowledgeRecord>& vlm_records) {
  std::map<SampleId, Emotion> vlm_labels;
  for (const auto& r : vlm_records) vlm_labels[r.id] = r.label;
  PseudoSet out;
  out.model_source_size = model_preds.size();
  out.vlm_source_size = vlm_records.size();
  for (std::size_t i = 0; i < model_preds.size(); ++i) {
    const SampleId& id = model_preds.ids[i];
    auto it = vlm_labels.find(id);
    if (it == vlm_labels.end()) continue;
    if (it->second != model_preds.labels[i]) continue;
    out.ids.push_back(id);
    out.labels[id] = it->second;
    out.provenance[id] = {model_preds.labels[i], it->second};
  }
  return out;
}

struct AgreementReport {
  std::size_t n_common = 0;
  std::size_t n_agree = 0;
  std::size_t model_only = 0;
  std::size_t vlm_only = 0;
  double agreement_rate = 0;
  std::array<double, kNumClasses> per_class_agreement{};  // by model label
  // rows = model label, columns = vlm label
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> cross_confusion{};
  std::array<double, kNumClasses> retained_distribution{};
};

inline AgreementReport agreement_report(const PredictionSet& model_preds,
                                        const std::vector<VlmKnowledgeRecord>& vlm_records) {
  std::map<SampleId, Emotion> vlm_labels;
  for (const auto& r : vlm_records) vlm_labels[r.id] = r.label;
  AgreementReport rep;
  std::array<std::size_t, kNumClasses> per_class_n{}, per_class_agree{}, retained{};
  for (std::size_t i = 0; i < model_preds.size(); ++i) {
    auto it = vlm_labels.find(model_preds.ids[i]);
    if (it == vlm_labels.end()) {
      rep.model_only++;
      continue;
    }
    std::size_t a = class_index(model_preds.labels[i]);
    std::size_t b = class_index(it->second);
    rep.n_common++;
    rep.cross_confusion[a][b]++;
    per_class_n[a]++;
    if (a == b) {
      rep.n_agree++;
      per_class_agree[a]++;
      retained[a]++;
    }
  }
  rep.vlm_only = vlm_labels.size() - rep.n_common;
  rep.agreement_rate = rep.n_common ? double(rep.n_agree) / double(rep.n_common) : 0.0;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    rep.per_class_agreement[k] = per_class_n[k] ? double(per_class_agree[k]) / double(per_class_n[k]) : 0.0;
    rep.retained_distribution[k] = rep.n_agree ? double(retained[k]) / double(rep.n_agree) : 0.0;
  }
  return rep;
}

/// Restricts an unlabeled bundle to the consensus ids and attaches the
/// consensus labels.
inline EmbeddingBundle export_pseudo_bundle(const PseudoSet& pseudo,
                                            const EmbeddingBundle& bundle) {
  EmbeddingBundle out = bundle.subset(pseudo.ids);
  out.labels.clear();
  for (const auto& id : pseudo.ids) out.labels[id] = pseudo.labels.at(id);
  return out;
}

}  // namespace moe_affect
