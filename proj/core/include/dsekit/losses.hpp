#pragma once

#include <vector>

#include "dsekit/tensor.hpp"

namespace dsekit {

struct ContrastiveConfig {
  double tau = 0.4;  ///< temperature
};

struct UnificationConfig {
  double alpha = 0.75;
  double gamma = 1.0;
};

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before logs.
inline constexpr double kProbClamp = 1e-7;

/// Per-anchor positive/negative index sets within a batch, by class
/// equality; the anchor itself belongs to neither set.
struct PairSet {
  std::vector<std::vector<int>> positives;
  std::vector<std::vector<int>> negatives;
};

PairSet make_pairs(const std::vector<int>& classes);

// --- scalar reference forms ------------------------------------------------

/// Binary cross-entropy -q ln u - (1-q) ln(1-u) with u clamped.
double bce(double u, double q);

/// L1 distance |perf_hat - target|.
double perf_l1(double perf_hat, double target);

/// Focal-weighted ordinal loss, summed over the vector (one head).
double unification_loss(const std::vector<double>& u, const std::vector<double>& q,
                        const UnificationConfig& cfg);

/// Balanced infoNCE over unit-norm latents: mean over anchors that have at
/// least one positive of
///   -log( sum_{p+} e^{s/tau} / (sum_{p+} e^{s/tau} + sum_{p-} e^{s/tau}) ).
/// Returns 0 and sets *all_skipped when no anchor has a positive.
/// per_anchor, when non-null, receives each anchor's loss (NaN-free; 0 for
/// skipped anchors).
double contrastive_loss(const std::vector<std::vector<double>>& latents,
                        const std::vector<int>& classes, const ContrastiveConfig& cfg,
                        bool* all_skipped = nullptr, std::vector<double>* per_anchor = nullptr);

// --- tape builders (training path; numerically identical math) -------------

Tape::Var contrastive_loss_node(Tape& tape, Tape::Var lambda, const std::vector<int>& classes,
                                const ContrastiveConfig& cfg, bool* all_skipped = nullptr);

Tape::Var perf_l1_node(Tape& tape, Tape::Var perf_hat, const Tensor& targets);

/// Batch mean of per-sample unification sums for one head; u is B x k
/// activations in (0,1), q the matching ground-truth ordinal vectors.
Tape::Var unification_loss_node(Tape& tape, Tape::Var u, const Tensor& q,
                                const UnificationConfig& cfg);

/// Mean softmax cross-entropy (classification-head baseline).
Tape::Var softmax_xent_node(Tape& tape, Tape::Var logits, const std::vector<int>& labels);

}  // namespace dsekit
