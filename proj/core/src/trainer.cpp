#include "dsekit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace dsekit {

void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& state, const TrainConfig& cfg) {
  if (params.size() != grads.size())
    throw ContractError("adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size())
    throw ContractError("adam_step: state does not match parameter count");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    const Tensor& g = *grads[pi];
    if (!p.same_shape(g))
      throw ContractError("adam_step: shape mismatch at parameter " + std::to_string(pi));
    Tensor& m = state.m[pi];
    Tensor& v = state.v[pi];
    for (std::int64_t i = 0; i < p.size(); ++i) {
      const auto ix = static_cast<std::size_t>(i);
      m[ix] = cfg.beta1 * m[ix] + (1.0 - cfg.beta1) * g[ix];
      v[ix] = cfg.beta2 * v[ix] + (1.0 - cfg.beta2) * g[ix] * g[ix];
      const double mhat = m[ix] / bc1;
      const double vhat = v[ix] / bc2;
      p[ix] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

std::vector<int> shuffle_perm(int n, std::uint64_t seed, int epoch) {
  std::vector<int> perm(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  SplitMix64 rng(stream_seed(seed, static_cast<std::uint64_t>(epoch)));
  for (int i = n - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(i) + 1));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  return perm;
}

BucketSpec pe_bucket_spec(const DesignSpace& space, int k) {
  return make_buckets(static_cast<double>(space.pe_options.front()),
                      static_cast<double>(space.pe_options.back()), k);
}

BucketSpec buf_bucket_spec(const DesignSpace& space, int k) {
  return make_buckets(static_cast<double>(space.buf_options.front()),
                      static_cast<double>(space.buf_options.back()), k);
}

namespace {

struct PreparedData {
  std::vector<FeatureVector> features;
  std::vector<int> joint_bucket;     ///< pe_bucket * k_buf + buf_bucket
  std::vector<double> perf_target;   ///< (ln latency - mu) / sigma
  std::vector<OrdinalVector> q_pe;
  std::vector<OrdinalVector> q_buf;
  std::vector<int> joint_option;     ///< pe_index * |buf_options| + buf_index
};

int option_index(const std::vector<std::int64_t>& opts, std::int64_t v) {
  const auto it = std::lower_bound(opts.begin(), opts.end(), v);
  if (it == opts.end() || *it != v) throw ContractError("option_index: value not in option set");
  return static_cast<int>(it - opts.begin());
}

PreparedData prepare(const Dataset& data, const ModelConfig& mcfg, const BucketSpec& pe_spec,
                     const BucketSpec& buf_spec, bool with_targets) {
  PreparedData pd;
  const auto n = data.samples.size();
  pd.features.reserve(n);
  pd.joint_bucket.reserve(n);
  for (const Sample& s : data.samples) {
    pd.features.push_back(normalize(s.workload));
    const int pb = bucket_of(static_cast<double>(s.opt.pe), pe_spec);
    const int bb = bucket_of(static_cast<double>(s.opt.buf), buf_spec);
    pd.joint_bucket.push_back(pb * mcfg.k_buf + bb);
  }
  if (with_targets) {
    pd.perf_target.reserve(n);
    pd.q_pe.reserve(n);
    pd.q_buf.reserve(n);
    pd.joint_option.reserve(n);
    const auto& m = data.manifest;
    for (const Sample& s : data.samples) {
      pd.perf_target.push_back(
          (std::log(static_cast<double>(s.opt_latency)) - m.log_latency_mean) /
          m.log_latency_std);
      pd.q_pe.push_back(encode(static_cast<double>(s.opt.pe), pe_spec));
      pd.q_buf.push_back(encode(static_cast<double>(s.opt.buf), buf_spec));
      pd.joint_option.push_back(
          option_index(m.space.pe_options, s.opt.pe) *
              static_cast<int>(m.space.buf_options.size()) +
          option_index(m.space.buf_options, s.opt.buf));
    }
  }
  return pd;
}

std::vector<std::string> filtered_names(const ParamStore& ps,
                                        const std::function<bool(const std::string&)>& f) {
  std::vector<std::string> names;
  for (const auto& [name, t] : ps.items())
    if (!f || f(name)) names.push_back(name);
  return names;
}

}  // namespace

StageResult train_stage1(const Dataset& train, const TrainConfig& tcfg, const ModelConfig& mcfg) {
  const int n = static_cast<int>(train.samples.size());
  if (n < tcfg.batch_size)
    throw ContractError("train_stage1: dataset (" + std::to_string(n) +
                        " samples) smaller than one batch (" + std::to_string(tcfg.batch_size) +
                        ")");
  const DesignSpace& space = train.manifest.space;
  const BucketSpec pe_spec = pe_bucket_spec(space, mcfg.k_pe);
  const BucketSpec buf_spec = buf_bucket_spec(space, mcfg.k_buf);
  PreparedData pd = prepare(train, mcfg, pe_spec, buf_spec, /*with_targets=*/true);

  ParamStore params = init(mcfg, static_cast<int>(space.pe_options.size()) *
                                     static_cast<int>(space.buf_options.size()));
  const std::vector<std::string> trained = filtered_names(params, is_encoder_param);

  AdamState adam;
  StageResult result;
  ContrastiveConfig ccfg;
  Tape tape;
  for (int epoch = 0; epoch < tcfg.epochs_stage1; ++epoch) {
    const std::vector<int> perm = shuffle_perm(n, tcfg.seed, epoch);
    double loss_sum = 0;
    std::int64_t loss_count = 0;
    for (int start = 0; start < n; start += tcfg.batch_size) {
      const int bsz = std::min(tcfg.batch_size, n - start);
      if (bsz < 2) continue;  // contrastive pairs need at least two samples
      std::vector<FeatureVector> feats(static_cast<std::size_t>(bsz));
      std::vector<int> classes(static_cast<std::size_t>(bsz));
      Tensor targets({bsz, 1});
      for (int i = 0; i < bsz; ++i) {
        const int src = perm[static_cast<std::size_t>(start + i)];
        feats[static_cast<std::size_t>(i)] = pd.features[static_cast<std::size_t>(src)];
        classes[static_cast<std::size_t>(i)] = pd.joint_bucket[static_cast<std::size_t>(src)];
        targets[static_cast<std::size_t>(i)] = pd.perf_target[static_cast<std::size_t>(src)];
      }
      tape.reset();
      ParamVars pv = register_params(tape, params, /*trainable=*/true, is_encoder_param);
      EncoderOut enc = encoder_forward(tape, mcfg, pv, feats);
      Tape::Var loss = perf_l1_node(tape, enc.perf, targets);
      if (tcfg.use_contrastive) {
        Tape::Var lc = contrastive_loss_node(tape, enc.lambda, classes, ccfg);
        loss = tape.add(lc, loss);
      }
      const double loss_value = tape.value(loss)[0];
      if (!std::isfinite(loss_value))
        throw ContractError("train_stage1: non-finite loss at epoch " + std::to_string(epoch));
      tape.backward(loss);
      std::vector<Tensor*> tp;
      std::vector<const Tensor*> tg;
      for (const std::string& name : trained) {
        tp.push_back(&params.get(name));
        tg.push_back(&tape.grad(pv.at(name)));
      }
      adam_step(tp, tg, adam, tcfg);
      loss_sum += loss_value * bsz;
      loss_count += bsz;
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(loss_count));
  }

  result.checkpoint.config = mcfg;
  result.checkpoint.manifest = train.manifest;
  result.checkpoint.stage = 1;
  for (const std::string& name : trained)
    result.checkpoint.params.add(name, params.get(name).shape()) = params.get(name);
  return result;
}

StageResult train_stage2(const Dataset& train, const Checkpoint& encoder_ckpt,
                         const TrainConfig& tcfg, HeadMode head_mode) {
  const int n = static_cast<int>(train.samples.size());
  if (n < tcfg.batch_size)
    throw ContractError("train_stage2: dataset (" + std::to_string(n) +
                        " samples) smaller than one batch (" + std::to_string(tcfg.batch_size) +
                        ")");
  if (!encoder_ckpt.params.has("enc.l0.wq") || !encoder_ckpt.params.has("enc.down.w"))
    throw FormatError("train_stage2: checkpoint has no encoder tensors");

  ModelConfig mcfg = encoder_ckpt.config;
  mcfg.head_mode = head_mode;
  const DesignSpace& space = train.manifest.space;
  const int n_classes = static_cast<int>(space.pe_options.size()) *
                        static_cast<int>(space.buf_options.size());
  const BucketSpec pe_spec = pe_bucket_spec(space, mcfg.k_pe);
  const BucketSpec buf_spec = buf_bucket_spec(space, mcfg.k_buf);
  PreparedData pd = prepare(train, mcfg, pe_spec, buf_spec, /*with_targets=*/true);

  ParamStore params = init(mcfg, n_classes);
  for (const auto& [name, t] : encoder_ckpt.params.items()) {
    if (!params.has(name))
      throw FormatError("train_stage2: incompatible encoder checkpoint (unknown tensor " +
                        name + ")");
    if (!params.get(name).same_shape(t))
      throw FormatError("train_stage2: incompatible encoder checkpoint (shape of " + name + ")");
    params.get(name) = t;
  }
  // Snapshot to verify the freeze contract at the end.
  std::vector<std::pair<std::string, Tensor>> frozen;
  for (const auto& [name, t] : params.items())
    if (is_encoder_param(name)) frozen.emplace_back(name, t);

  auto is_decoder_param = [](const std::string& name) { return !is_encoder_param(name); };
  const std::vector<std::string> trained = filtered_names(params, is_decoder_param);

  // Frozen encoder: latents are computed once, off the training tape, so no
  // gradient can reach encoder weights by construction.
  Tensor all_lambda({n, mcfg.d_latent});
  {
    Tape enc_tape;
    constexpr int kChunk = 256;
    for (int start = 0; start < n; start += kChunk) {
      const int bsz = std::min(kChunk, n - start);
      std::vector<FeatureVector> feats(
          pd.features.begin() + start, pd.features.begin() + start + bsz);
      enc_tape.reset();
      ParamVars enc_pv = register_params(enc_tape, params, /*trainable=*/false, is_encoder_param);
      EncoderOut enc = encoder_forward(enc_tape, mcfg, enc_pv, feats);
      const Tensor& lam = enc_tape.value(enc.lambda);
      std::copy(lam.data(), lam.data() + lam.size(),
                all_lambda.data() + static_cast<std::size_t>(start) * mcfg.d_latent);
    }
  }

  AdamState adam;
  StageResult result;
  UnificationConfig ucfg;
  Tape tape;
  for (int epoch = 0; epoch < tcfg.epochs_stage2; ++epoch) {
    const std::vector<int> perm = shuffle_perm(n, tcfg.seed, epoch);
    double loss_sum = 0;
    std::int64_t loss_count = 0;
    for (int start = 0; start < n; start += tcfg.batch_size) {
      const int bsz = std::min(tcfg.batch_size, n - start);
      Tensor lambda({bsz, mcfg.d_latent});
      for (int i = 0; i < bsz; ++i) {
        const int src = perm[static_cast<std::size_t>(start + i)];
        std::copy(all_lambda.data() + static_cast<std::size_t>(src) * mcfg.d_latent,
                  all_lambda.data() + static_cast<std::size_t>(src + 1) * mcfg.d_latent,
                  lambda.data() + static_cast<std::size_t>(i) * mcfg.d_latent);
      }

      tape.reset();
      ParamVars pv = register_params(tape, params, /*trainable=*/true, is_decoder_param);
      Tape::Var lam = tape.constant(std::move(lambda));
      Tape::Var loss;
      if (head_mode == HeadMode::kUov) {
        Tensor qpe({bsz, mcfg.k_pe});
        Tensor qbuf({bsz, mcfg.k_buf});
        for (int i = 0; i < bsz; ++i) {
          const int src = perm[static_cast<std::size_t>(start + i)];
          for (int j = 0; j < mcfg.k_pe; ++j)
            qpe.at(i, j) = pd.q_pe[static_cast<std::size_t>(src)][static_cast<std::size_t>(j)];
          for (int j = 0; j < mcfg.k_buf; ++j)
            qbuf.at(i, j) = pd.q_buf[static_cast<std::size_t>(src)][static_cast<std::size_t>(j)];
        }
        DecoderOut dec = decoder_forward(tape, mcfg, pv, lam);
        loss = tape.add(unification_loss_node(tape, dec.u_pe, qpe, ucfg),
                        unification_loss_node(tape, dec.u_buf, qbuf, ucfg));
      } else {
        std::vector<int> labels(static_cast<std::size_t>(bsz));
        for (int i = 0; i < bsz; ++i)
          labels[static_cast<std::size_t>(i)] =
              pd.joint_option[static_cast<std::size_t>(perm[static_cast<std::size_t>(start + i)])];
        Tape::Var logits = classification_forward(tape, mcfg, pv, lam);
        loss = softmax_xent_node(tape, logits, labels);
      }
      const double loss_value = tape.value(loss)[0];
      if (!std::isfinite(loss_value))
        throw ContractError("train_stage2: non-finite loss at epoch " + std::to_string(epoch));
      tape.backward(loss);
      std::vector<Tensor*> tp;
      std::vector<const Tensor*> tg;
      for (const std::string& name : trained) {
        tp.push_back(&params.get(name));
        tg.push_back(&tape.grad(pv.at(name)));
      }
      adam_step(tp, tg, adam, tcfg);
      loss_sum += loss_value * bsz;
      loss_count += bsz;
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(loss_count));
  }

  for (const auto& [name, t] : frozen)
    if (!(params.get(name) == t))
      throw ContractError("train_stage2: freeze contract violated for " + name);

  result.checkpoint.config = mcfg;
  result.checkpoint.manifest = train.manifest;
  result.checkpoint.stage = 2;
  for (const auto& [name, t] : params.items())
    result.checkpoint.params.add(name, t.shape()) = t;
  return result;
}

Metrics evaluate_decoded(const Dataset& test, const DesignSpace& space, const CostParams& cost,
                         const BucketSpec& pe_spec, const BucketSpec& buf_spec,
                         const std::vector<std::pair<double, double>>& decoded) {
  const int n = static_cast<int>(test.samples.size());
  if (n < 1) throw ContractError("evaluate: empty dataset");
  if (decoded.size() != test.samples.size())
    throw ContractError("evaluate: one decoded pair per sample required");

  std::int64_t pe_hit = 0, buf_hit = 0, joint_hit = 0, exact_hit = 0;
  double log_ratio_sum = 0;
  for (int i = 0; i < n; ++i) {
    const Sample& s = test.samples[static_cast<std::size_t>(i)];
    const auto [pv_d, bv_d] = decoded[static_cast<std::size_t>(i)];
    const bool pe_ok =
        bucket_of(pv_d, pe_spec) == bucket_of(static_cast<double>(s.opt.pe), pe_spec);
    const bool buf_ok =
        bucket_of(bv_d, buf_spec) == bucket_of(static_cast<double>(s.opt.buf), buf_spec);
    pe_hit += pe_ok;
    buf_hit += buf_ok;
    joint_hit += pe_ok && buf_ok;
    HardwareConfig pred{nearest_option(pv_d, space.pe_options),
                        nearest_option(bv_d, space.buf_options)};
    pred = project_feasible(pred, s.workload, space, cost);
    exact_hit += pred == s.opt;
    log_ratio_sum += std::log(static_cast<double>(latency(s.workload, pred, cost)) /
                              static_cast<double>(s.opt_latency));
  }

  Metrics m;
  m.pe_bucket_accuracy = static_cast<double>(pe_hit) / n;
  m.buf_bucket_accuracy = static_cast<double>(buf_hit) / n;
  m.joint_bucket_accuracy = static_cast<double>(joint_hit) / n;
  m.exact_config_accuracy = static_cast<double>(exact_hit) / n;
  m.geomean_latency_ratio = std::exp(log_ratio_sum / n);
  m.label_stats = imbalance_report(label_histogram(test, pe_spec, buf_spec));
  return m;
}

Metrics evaluate(const Dataset& test, const Checkpoint& ckpt) {
  if (ckpt.stage < 2)
    throw FormatError("evaluate: checkpoint has no trained decoder (stage " +
                      std::to_string(ckpt.stage) + ")");
  const ModelConfig& mcfg = ckpt.config;
  const DesignSpace& space = ckpt.manifest.space;
  const CostParams& cost = ckpt.manifest.cost;
  const BucketSpec pe_spec = pe_bucket_spec(space, mcfg.k_pe);
  const BucketSpec buf_spec = buf_bucket_spec(space, mcfg.k_buf);

  const int n = static_cast<int>(test.samples.size());
  if (n < 1) throw ContractError("evaluate: empty dataset");

  std::vector<std::pair<double, double>> decoded(static_cast<std::size_t>(n));
  constexpr int kChunk = 256;
  Tape tape;
  for (int start = 0; start < n; start += kChunk) {
    const int bsz = std::min(kChunk, n - start);
    std::vector<FeatureVector> feats(static_cast<std::size_t>(bsz));
    for (int i = 0; i < bsz; ++i)
      feats[static_cast<std::size_t>(i)] =
          normalize(test.samples[static_cast<std::size_t>(start + i)].workload);
    tape.reset();
    ParamVars pv = register_params(tape, ckpt.params, /*trainable=*/false);
    EncoderOut enc = encoder_forward(tape, mcfg, pv, feats);

    if (mcfg.head_mode == HeadMode::kUov) {
      DecoderOut dec = decoder_forward(tape, mcfg, pv, enc.lambda);
      const Tensor& upe = tape.value(dec.u_pe);
      const Tensor& ubuf = tape.value(dec.u_buf);
      for (int i = 0; i < bsz; ++i) {
        OrdinalVector ope(upe.data() + static_cast<std::size_t>(i) * mcfg.k_pe,
                          upe.data() + static_cast<std::size_t>(i + 1) * mcfg.k_pe);
        OrdinalVector obuf(ubuf.data() + static_cast<std::size_t>(i) * mcfg.k_buf,
                           ubuf.data() + static_cast<std::size_t>(i + 1) * mcfg.k_buf);
        decoded[static_cast<std::size_t>(start + i)] = {decode(ope, pe_spec),
                                                        decode(obuf, buf_spec)};
      }
    } else {
      Tape::Var logits = classification_forward(tape, mcfg, pv, enc.lambda);
      const Tensor& lv = tape.value(logits);
      const int ncls = lv.shape()[1];
      const auto nbuf = static_cast<int>(space.buf_options.size());
      for (int i = 0; i < bsz; ++i) {
        int best = 0;
        for (int c = 1; c < ncls; ++c)
          if (lv.at(i, c) > lv.at(i, best)) best = c;
        decoded[static_cast<std::size_t>(start + i)] = {
            static_cast<double>(space.pe_options[static_cast<std::size_t>(best / nbuf)]),
            static_cast<double>(space.buf_options[static_cast<std::size_t>(best % nbuf)])};
      }
    }
  }
  return evaluate_decoded(test, space, cost, pe_spec, buf_spec, decoded);
}

namespace {

std::vector<std::vector<double>> all_latents(const Dataset& data, const Checkpoint& ckpt) {
  const ModelConfig& mcfg = ckpt.config;
  const int n = static_cast<int>(data.samples.size());
  std::vector<std::vector<double>> rows;
  rows.reserve(static_cast<std::size_t>(n));
  constexpr int kChunk = 256;
  Tape tape;
  for (int start = 0; start < n; start += kChunk) {
    const int bsz = std::min(kChunk, n - start);
    std::vector<FeatureVector> feats(static_cast<std::size_t>(bsz));
    for (int i = 0; i < bsz; ++i)
      feats[static_cast<std::size_t>(i)] =
          normalize(data.samples[static_cast<std::size_t>(start + i)].workload);
    tape.reset();
    ParamVars pv = register_params(tape, ckpt.params, /*trainable=*/false, is_encoder_param);
    EncoderOut enc = encoder_forward(tape, mcfg, pv, feats);
    const Tensor& lam = tape.value(enc.lambda);
    for (int i = 0; i < bsz; ++i)
      rows.emplace_back(lam.data() + static_cast<std::size_t>(i) * mcfg.d_latent,
                        lam.data() + static_cast<std::size_t>(i + 1) * mcfg.d_latent);
  }
  return rows;
}

// Leading eigenvector of a symmetric matrix by power iteration.
std::pair<std::vector<double>, double> power_iter(const std::vector<double>& mat, int d) {
  SplitMix64 rng(0x9c0ffeeULL);
  std::vector<double> v(static_cast<std::size_t>(d));
  for (double& x : v) x = rng.next_double(-1, 1);
  double eig = 0;
  for (int it = 0; it < 200; ++it) {
    std::vector<double> w(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        w[static_cast<std::size_t>(i)] +=
            mat[static_cast<std::size_t>(i) * d + j] * v[static_cast<std::size_t>(j)];
    double norm = 0;
    for (double x : w) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-30) break;
    for (double& x : w) x /= norm;
    double delta = 0;
    for (int i = 0; i < d; ++i)
      delta = std::max(delta, std::abs(w[static_cast<std::size_t>(i)] - v[static_cast<std::size_t>(i)]));
    v = w;
    eig = norm;
    if (delta < 1e-10) break;
  }
  // Deterministic sign: largest-magnitude component positive.
  int arg = 0;
  for (int i = 1; i < d; ++i)
    if (std::abs(v[static_cast<std::size_t>(i)]) > std::abs(v[static_cast<std::size_t>(arg)]))
      arg = i;
  if (v[static_cast<std::size_t>(arg)] < 0)
    for (double& x : v) x = -x;
  return {v, eig};
}

}  // namespace

Pca2 pca_top2(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ContractError("pca_top2: no rows");
  const int n = static_cast<int>(rows.size());
  const int d = static_cast<int>(rows.front().size());
  Pca2 out;
  out.mean.assign(static_cast<std::size_t>(d), 0.0);
  for (const auto& r : rows)
    for (int j = 0; j < d; ++j) out.mean[static_cast<std::size_t>(j)] += r[static_cast<std::size_t>(j)];
  for (double& x : out.mean) x /= n;

  std::vector<double> cov(static_cast<std::size_t>(d) * d, 0.0);
  for (const auto& r : rows)
    for (int i = 0; i < d; ++i) {
      const double ci = r[static_cast<std::size_t>(i)] - out.mean[static_cast<std::size_t>(i)];
      for (int j = 0; j < d; ++j)
        cov[static_cast<std::size_t>(i) * d + j] +=
            ci * (r[static_cast<std::size_t>(j)] - out.mean[static_cast<std::size_t>(j)]);
    }
  for (double& x : cov) x /= n;

  auto [v1, e1] = power_iter(cov, d);
  std::vector<double> deflated = cov;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      deflated[static_cast<std::size_t>(i) * d + j] -=
          e1 * v1[static_cast<std::size_t>(i)] * v1[static_cast<std::size_t>(j)];
  auto [v2, e2] = power_iter(deflated, d);
  out.v1 = std::move(v1);
  out.v2 = std::move(v2);
  out.var1 = e1;
  out.var2 = e2;
  return out;
}

void export_embeddings(const Dataset& data, const Checkpoint& ckpt, const std::string& path) {
  if (!ckpt.params.has("enc.down.w"))
    throw FormatError("export_embeddings: checkpoint has no encoder tensors");
  const DesignSpace& space = ckpt.manifest.space;
  const BucketSpec pe_spec = pe_bucket_spec(space, ckpt.config.k_pe);
  const BucketSpec buf_spec = buf_bucket_spec(space, ckpt.config.k_buf);

  const std::vector<std::vector<double>> lat = all_latents(data, ckpt);
  const Pca2 pca = pca_top2(lat);
  const int d = static_cast<int>(lat.front().size());

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("export_embeddings: cannot open '" + path + "' for writing");
  out << "x,y,pe_bucket,buf_bucket\n";
  char buf[128];
  for (std::size_t r = 0; r < lat.size(); ++r) {
    double x = 0, y = 0;
    for (int j = 0; j < d; ++j) {
      const double c = lat[r][static_cast<std::size_t>(j)] - pca.mean[static_cast<std::size_t>(j)];
      x += c * pca.v1[static_cast<std::size_t>(j)];
      y += c * pca.v2[static_cast<std::size_t>(j)];
    }
    const Sample& s = data.samples[r];
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%d,%d\n", x, y,
                  bucket_of(static_cast<double>(s.opt.pe), pe_spec),
                  bucket_of(static_cast<double>(s.opt.buf), buf_spec));
    out << buf;
  }
  out.flush();
  if (!out) throw FormatError("export_embeddings: write failed");
}

}  // namespace dsekit
