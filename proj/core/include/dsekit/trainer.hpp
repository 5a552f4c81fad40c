#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dsekit/losses.hpp"
#include "dsekit/model.hpp"
#include "dsekit/oracle.hpp"

namespace dsekit {

struct TrainConfig {
  int batch_size = 256;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int epochs_stage1 = 500;
  int epochs_stage2 = 100;
  std::uint64_t seed = 0;
  bool use_contrastive = true;  ///< stage-1 ablation switch
};

struct Metrics {
  double joint_bucket_accuracy = 0;
  double pe_bucket_accuracy = 0;
  double buf_bucket_accuracy = 0;
  double exact_config_accuracy = 0;
  double geomean_latency_ratio = 0;  ///< >= 1 by oracle optimality
  ImbalanceReport label_stats;       ///< of the evaluated dataset's labels
};

/// Per-parameter Adam moments, keyed by the trained parameter subset in
/// store order.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;
};

/// Standard Adam with bias correction; params and grads run in parallel.
void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& state, const TrainConfig& cfg);

/// Deterministic Fisher-Yates permutation of [0, n) for one epoch.
std::vector<int> shuffle_perm(int n, std::uint64_t seed, int epoch);

/// Codec bucketizations spanning the option ranges of a design space.
BucketSpec pe_bucket_spec(const DesignSpace& space, int k);
BucketSpec buf_bucket_spec(const DesignSpace& space, int k);

struct StageResult {
  Checkpoint checkpoint;
  std::vector<double> epoch_loss;  ///< sample-weighted mean loss per epoch
};

/// Stage 1: encoder + performance head trained with the contrastive +
/// L1-performance objective; classes are joint (pe, buf) bucket ids. The
/// returned checkpoint (stage=1) carries only encoder/perf tensors.
/// Throws ContractError when the dataset is smaller than one batch.
StageResult train_stage1(const Dataset& train, const TrainConfig& tcfg, const ModelConfig& mcfg);

/// Stage 2: decoder + heads trained on frozen encoder latents. The encoder
/// tensors are loaded from the stage-1 checkpoint, kept off the tape and out
/// of the optimizer, and verified bit-identical afterwards. head_mode picks
/// the ordinal heads or the joint-classification baseline.
StageResult train_stage2(const Dataset& train, const Checkpoint& encoder_ckpt,
                         const TrainConfig& tcfg, HeadMode head_mode);

Metrics evaluate(const Dataset& test, const Checkpoint& ckpt);

/// Metric computation from precomputed decoded head values (one
/// (pe_value, buf_value) pair per sample). evaluate() routes through this;
/// feeding the oracle's own labels gives the self-consistency baseline.
Metrics evaluate_decoded(const Dataset& test, const DesignSpace& space, const CostParams& cost,
                         const BucketSpec& pe_spec, const BucketSpec& buf_spec,
                         const std::vector<std::pair<double, double>>& decoded);

/// Latents of every sample under the checkpoint's encoder, projected onto
/// their top-2 principal components; written as CSV x,y,pe_bucket,buf_bucket.
void export_embeddings(const Dataset& data, const Checkpoint& ckpt, const std::string& path);

/// Covariance eigenvectors by power iteration with deflation (200 rounds,
/// tolerance 1e-10). Exposed for the isotropy sanity check.
struct Pca2 {
  std::vector<double> mean;
  std::vector<double> v1, v2;
  double var1 = 0, var2 = 0;
};
Pca2 pca_top2(const std::vector<std::vector<double>>& rows);

}  // namespace dsekit
