#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dsekit/costmodel.hpp"
#include "dsekit/oracle.hpp"
#include "dsekit/space.hpp"
#include "dsekit/tensor.hpp"
#include "dsekit/uov.hpp"

namespace dsekit {

enum class HeadMode { kUov, kClassification };

const char* to_string(HeadMode m);
HeadMode head_mode_from_string(const std::string& s);

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;   ///< per part; encoder and decoder each stack this many
  int d_latent = 32;
  int ffn_mult = 4;
  int k_pe = 16;      ///< PE head bucket count
  int k_buf = 12;     ///< buffer head bucket count
  HeadMode head_mode = HeadMode::kUov;
  std::uint64_t seed = 0;

  bool operator==(const ModelConfig&) const = default;
};

/// Named parameter tensors in a stable creation order (the order defines
/// both the init draw sequence and the checkpoint layout).
class ParamStore {
 public:
  Tensor& add(const std::string& name, std::vector<int> shape);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;
  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::int64_t total_size() const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Stage-1 parameters are the encoder plus the performance head.
bool is_encoder_param(const std::string& name);

/// Fresh parameters: Glorot-uniform weight matrices, zero biases, unit
/// layer-norm gains, 0.02 * N(0,1) embedding tables; all draws come from one
/// SplitMix64 stream seeded with cfg.seed, in creation order. n_classes
/// sizes the joint classification head (kClassification mode only).
ParamStore init(const ModelConfig& cfg, int n_classes = 768);

/// Parameter leaves/constants registered on a tape for one forward pass.
struct ParamVars {
  std::unordered_map<std::string, Tape::Var> map;
  Tape::Var at(const std::string& name) const;
};

ParamVars register_params(Tape& tape, const ParamStore& params, bool trainable,
                          const std::function<bool(const std::string&)>& filter = {});

struct EncoderOut {
  Tape::Var lambda;  ///< B x d_latent, rows unit-norm
  Tape::Var perf;    ///< B x 1
};

/// Tokens -> L pre-norm attention blocks -> mean pool -> downsample ->
/// row-normalized latent; perf head applied to the latent.
EncoderOut encoder_forward(Tape& tape, const ModelConfig& cfg, const ParamVars& pv,
                           const std::vector<FeatureVector>& batch);

struct DecoderOut {
  Tape::Var u_pe;   ///< B x k_pe, sigmoid activations in (0,1)
  Tape::Var u_buf;  ///< B x k_buf
};

/// Latent -> upsample to 4 tokens -> L blocks -> mean pool -> two ordinal
/// heads. lambda is B x d_latent (a Var from encoder_forward or a constant).
DecoderOut decoder_forward(Tape& tape, const ModelConfig& cfg, const ParamVars& pv,
                           Tape::Var lambda);

/// Same trunk, single linear head over the pooled decoder output; class
/// index = pe_index * |buf_options| + buf_index. Throws ContractError unless
/// cfg.head_mode == kClassification.
Tape::Var classification_forward(Tape& tape, const ModelConfig& cfg, const ParamVars& pv,
                                 Tape::Var lambda);

/// Greedy feasibility projection: repeatedly downgrade the dimension whose
/// downgrade loses the least surrogate latency (ties: buffer first) until
/// the config fits the budget.
HardwareConfig project_feasible(HardwareConfig cfg, const Workload& w, const DesignSpace& space,
                                const CostParams& p);

/// Whole inference path for one workload: normalize -> encoder -> decoder ->
/// decode -> nearest options -> feasibility projection.
HardwareConfig predict(const Workload& w, const ParamStore& params, const ModelConfig& cfg,
                       const DesignSpace& space, const CostParams& p, const BucketSpec& pe_spec,
                       const BucketSpec& buf_spec);

// --- checkpoints -----------------------------------------------------------

struct Checkpoint {
  ModelConfig config;
  ParamStore params;
  DatasetManifest manifest;  ///< echo of the training dataset manifest
  int stage = 0;             ///< 1 after stage-1 training, 2 after stage-2
};

/// Binary format: magic "AIV2", u16 version, u32 tensor count, per tensor
/// (u16 name length, name, u8 ndim, u32 dims, raw little-endian f64 data),
/// then a u32-length-prefixed UTF-8 JSON metadata document.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dsekit
