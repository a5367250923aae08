#pragma once

#include <stdexcept>
#include <vector>

#include "moe_affect/tape.hpp"

namespace moe_affect {

/// Mean of -ln p_target over the batch, with p clamped at 1e-12. `probs` must
/// already be a distribution per row (the model mixes in probability space).
template <class T>
typename Tape<T>::Id cross_entropy_loss(Tape<T>& tape, typename Tape<T>::Id probs,
                                        const std::vector<std::size_t>& targets) {
  auto pt = tape.pick_per_row(probs, targets);
  auto log_pt = tape.log_clamped(pt, T(1e-12));
  return tape.scale(tape.mean_all(log_pt), T(-1));
}

/// Focal loss: mean of -(1 - p_t)^gamma * ln p_t. gamma = 0 reduces exactly to
/// cross entropy. Optional per-class weights scale each sample's term.
template <class T>
typename Tape<T>::Id focal_loss(Tape<T>& tape, typename Tape<T>::Id probs,
                                const std::vector<std::size_t>& targets, T gamma,
                                const std::vector<T>& class_weights = {}) {
  if (gamma < T(0)) throw std::invalid_argument("focal loss: gamma must be >= 0");
  auto pt = tape.pick_per_row(probs, targets);
  auto log_pt = tape.log_clamped(pt, T(1e-12));
  typename Tape<T>::Id term;
  if (gamma == T(0)) {
    term = log_pt;
  } else {
    auto focus = tape.pow_clamped(tape.one_minus(pt), gamma, T(1e-12));
    term = tape.hadamard(focus, log_pt);
  }
  if (!class_weights.empty()) {
    Mat<T> w(targets.size(), 1);
    for (std::size_t i = 0; i < targets.size(); ++i) w(i, 0) = class_weights.at(targets[i]);
    term = tape.hadamard(term, tape.input(std::move(w)));
  }
  return tape.scale(tape.mean_all(term), T(-1));
}

}  // namespace moe_affect
