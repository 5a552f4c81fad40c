#include "dsekit/losses.hpp"

#include <algorithm>
#include <cmath>

namespace dsekit {

PairSet make_pairs(const std::vector<int>& classes) {
  const int b = static_cast<int>(classes.size());
  PairSet ps;
  ps.positives.resize(static_cast<std::size_t>(b));
  ps.negatives.resize(static_cast<std::size_t>(b));
  for (int p = 0; p < b; ++p) {
    for (int q = 0; q < b; ++q) {
      if (q == p) continue;
      auto& dst = classes[static_cast<std::size_t>(q)] == classes[static_cast<std::size_t>(p)]
                      ? ps.positives[static_cast<std::size_t>(p)]
                      : ps.negatives[static_cast<std::size_t>(p)];
      dst.push_back(q);
    }
  }
  return ps;
}

double bce(double u, double q) {
  u = std::clamp(u, kProbClamp, 1.0 - kProbClamp);
  return -q * std::log(u) - (1.0 - q) * std::log(1.0 - u);
}

double perf_l1(double perf_hat, double target) { return std::abs(perf_hat - target); }

double unification_loss(const std::vector<double>& u, const std::vector<double>& q,
                        const UnificationConfig& cfg) {
  if (u.size() != q.size())
    throw ContractError("unification_loss: length mismatch " + std::to_string(u.size()) +
                        " vs " + std::to_string(q.size()));
  double total = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double b = bce(u[i], q[i]);
    if (q[i] > 0)
      total += cfg.alpha * std::pow(std::abs(q[i] - u[i]), cfg.gamma) * b;
    else
      total += (1.0 - cfg.alpha) * std::pow(u[i], cfg.gamma) * b;
  }
  return total;
}

namespace {

// log(sum exp(s_j / tau)) over an index subset, stabilized.
double subset_lse(const std::vector<double>& sims, const std::vector<int>& subset, double tau) {
  double mx = -1e300;
  for (int j : subset) mx = std::max(mx, sims[static_cast<std::size_t>(j)] / tau);
  double sum = 0;
  for (int j : subset) sum += std::exp(sims[static_cast<std::size_t>(j)] / tau - mx);
  return mx + std::log(sum);
}

}  // namespace

double contrastive_loss(const std::vector<std::vector<double>>& latents,
                        const std::vector<int>& classes, const ContrastiveConfig& cfg,
                        bool* all_skipped, std::vector<double>* per_anchor) {
  const int b = static_cast<int>(latents.size());
  if (b < 2) throw ContractError("contrastive_loss: batch must have at least 2 samples");
  if (classes.size() != latents.size())
    throw ContractError("contrastive_loss: class count mismatch");
  const PairSet ps = make_pairs(classes);
  if (per_anchor) per_anchor->assign(static_cast<std::size_t>(b), 0.0);
  double total = 0;
  int valid = 0;
  for (int p = 0; p < b; ++p) {
    const auto& pos = ps.positives[static_cast<std::size_t>(p)];
    if (pos.empty()) continue;
    std::vector<double> sims(static_cast<std::size_t>(b), 0.0);
    for (int q = 0; q < b; ++q) {
      double dot = 0;
      for (std::size_t d = 0; d < latents[static_cast<std::size_t>(p)].size(); ++d)
        dot += latents[static_cast<std::size_t>(p)][d] * latents[static_cast<std::size_t>(q)][d];
      sims[static_cast<std::size_t>(q)] = dot;
    }
    std::vector<int> all = pos;
    all.insert(all.end(), ps.negatives[static_cast<std::size_t>(p)].begin(),
               ps.negatives[static_cast<std::size_t>(p)].end());
    const double lp = subset_lse(sims, all, cfg.tau) - subset_lse(sims, pos, cfg.tau);
    if (per_anchor) (*per_anchor)[static_cast<std::size_t>(p)] = lp;
    total += lp;
    ++valid;
  }
  if (all_skipped) *all_skipped = valid == 0;
  return valid == 0 ? 0.0 : total / valid;
}

Tape::Var contrastive_loss_node(Tape& tape, Tape::Var lambda, const std::vector<int>& classes,
                                const ContrastiveConfig& cfg, bool* all_skipped) {
  const Tensor& lam = tape.value(lambda);
  const int b = lam.shape()[0];
  if (b < 2) throw ContractError("contrastive_loss: batch must have at least 2 samples");
  if (static_cast<int>(classes.size()) != b)
    throw ContractError("contrastive_loss: class count mismatch");

  std::vector<std::uint8_t> mask_pos(static_cast<std::size_t>(b) * b, 0);
  std::vector<std::uint8_t> mask_all(static_cast<std::size_t>(b) * b, 0);
  std::vector<int> n_pos(static_cast<std::size_t>(b), 0);
  for (int p = 0; p < b; ++p)
    for (int q = 0; q < b; ++q) {
      if (q == p) continue;
      mask_all[static_cast<std::size_t>(p) * b + q] = 1;
      if (classes[static_cast<std::size_t>(q)] == classes[static_cast<std::size_t>(p)]) {
        mask_pos[static_cast<std::size_t>(p) * b + q] = 1;
        ++n_pos[static_cast<std::size_t>(p)];
      }
    }
  int valid = 0;
  for (int p = 0; p < b; ++p)
    if (n_pos[static_cast<std::size_t>(p)] > 0) ++valid;
  if (all_skipped) *all_skipped = valid == 0;
  if (valid == 0) return tape.constant(Tensor::scalar(0.0));

  Tensor weights({b, 1});
  for (int p = 0; p < b; ++p)
    weights[static_cast<std::size_t>(p)] =
        n_pos[static_cast<std::size_t>(p)] > 0 ? 1.0 / valid : 0.0;

  Tape::Var sims = tape.scale(tape.matmul_nt(lambda, lambda), 1.0 / cfg.tau);
  Tape::Var lse_all = tape.masked_row_logsumexp(sims, std::move(mask_all));
  Tape::Var lse_pos = tape.masked_row_logsumexp(sims, std::move(mask_pos));
  Tape::Var diff = tape.sub(lse_all, lse_pos);
  return tape.sum_all(tape.mul(tape.constant(std::move(weights)), diff));
}

Tape::Var perf_l1_node(Tape& tape, Tape::Var perf_hat, const Tensor& targets) {
  const Tensor& ph = tape.value(perf_hat);
  if (!ph.same_shape(targets))
    throw ContractError("perf_l1: target shape " + targets.shape_str() +
                        " does not match prediction " + ph.shape_str());
  const double inv_b = 1.0 / static_cast<double>(ph.size());
  Tape::Var t = tape.constant(targets);
  return tape.scale(tape.sum_all(tape.abs(tape.sub(perf_hat, t))), inv_b);
}

Tape::Var unification_loss_node(Tape& tape, Tape::Var u, const Tensor& q,
                                const UnificationConfig& cfg) {
  const Tensor& uv = tape.value(u);
  if (!uv.same_shape(q))
    throw ContractError("unification_loss: shape mismatch " + uv.shape_str() + " vs " +
                        q.shape_str());
  const int batch = uv.ndim() == 2 ? uv.shape()[0] : 1;

  Tensor one_minus_q(q.shape());
  Tensor w_pos(q.shape());  // alpha where q > 0
  Tensor w_neg(q.shape());  // 1 - alpha where q == 0
  for (std::int64_t i = 0; i < q.size(); ++i) {
    one_minus_q[static_cast<std::size_t>(i)] = 1.0 - q[static_cast<std::size_t>(i)];
    if (q[static_cast<std::size_t>(i)] > 0)
      w_pos[static_cast<std::size_t>(i)] = cfg.alpha;
    else
      w_neg[static_cast<std::size_t>(i)] = 1.0 - cfg.alpha;
  }
  Tensor ones(q.shape());
  for (std::int64_t i = 0; i < ones.size(); ++i) ones[static_cast<std::size_t>(i)] = 1.0;

  Tape::Var qc = tape.constant(q);
  Tape::Var uc = tape.clamp(u, kProbClamp, 1.0 - kProbClamp);
  Tape::Var bce_term = tape.scale(
      tape.add(tape.mul(qc, tape.log(uc)),
               tape.mul(tape.constant(std::move(one_minus_q)),
                        tape.log(tape.sub(tape.constant(std::move(ones)), uc)))),
      -1.0);
  Tape::Var focal_pos = tape.pow_const(tape.abs(tape.sub(qc, u)), cfg.gamma);
  Tape::Var focal_neg = tape.pow_const(u, cfg.gamma);
  Tape::Var term =
      tape.add(tape.mul(tape.mul(tape.constant(std::move(w_pos)), focal_pos), bce_term),
               tape.mul(tape.mul(tape.constant(std::move(w_neg)), focal_neg), bce_term));
  return tape.scale(tape.sum_all(term), 1.0 / batch);
}

Tape::Var softmax_xent_node(Tape& tape, Tape::Var logits, const std::vector<int>& labels) {
  const Tensor& lv = tape.value(logits);
  const int b = lv.shape()[0], c = lv.shape()[1];
  if (static_cast<int>(labels.size()) != b)
    throw ContractError("softmax_xent: label count mismatch");
  Tensor onehot({b, c});
  for (int i = 0; i < b; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) throw ContractError("softmax_xent: label out of range");
    onehot.at(i, y) = 1.0;
  }
  Tape::Var lse = tape.masked_row_logsumexp(
      logits, std::vector<std::uint8_t>(static_cast<std::size_t>(b) * c, 1));
  Tape::Var picked = tape.reduce_sum(tape.mul(logits, tape.constant(std::move(onehot))), 1);
  return tape.scale(tape.sum_all(tape.sub(lse, picked)), 1.0 / b);
}

}  // namespace dsekit
