#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dsekit/trainer.hpp"

using namespace dsekit;

TEST_SUITE_BEGIN("trainer");

namespace {

std::string ckpt_bytes(const Checkpoint& ckpt) {
  const std::string path =
      (std::filesystem::temp_directory_path() / "dsekit_trainer_tmp.ckpt").string();
  save_checkpoint(ckpt, path);
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TrainConfig tiny_train(int batch, int e1, int e2, std::uint64_t seed) {
  TrainConfig t;
  t.batch_size = batch;
  t.epochs_stage1 = e1;
  t.epochs_stage2 = e2;
  t.seed = seed;
  return t;
}

ModelConfig tiny_model(std::uint64_t seed) {
  ModelConfig m;
  m.d_model = 16;
  m.n_heads = 2;
  m.n_layers = 1;
  m.d_latent = 8;
  m.ffn_mult = 2;
  m.seed = seed;
  return m;
}

}  // namespace

TEST_CASE("adam_step worked examples") {
  TrainConfig cfg;
  cfg.lr = 1e-3;
  AdamState state;
  Tensor theta({2}, {1.0, -2.0});
  Tensor zero({2});
  adam_step({&theta}, {&zero}, state, cfg);
  CHECK(theta[0] == 1.0);  // zero gradient leaves parameters unchanged
  CHECK(theta[1] == -2.0);
  CHECK(state.step == 1);

  AdamState s2;
  Tensor x({1}, {5.0});
  Tensor g({1}, {0.3});
  adam_step({&x}, {&g}, s2, cfg);
  // t=1: mhat=g, vhat=g^2 -> step = lr*g/(|g|+eps) ~ lr*sign(g)
  CHECK(x[0] == doctest::Approx(5.0 - 1e-3 * 0.3 / (0.3 + 1e-8)).epsilon(1e-12));
  CHECK(s2.step == 1);
  Tensor g2({1}, {-0.3});
  adam_step({&x}, {&g2}, s2, cfg);
  CHECK(s2.step == 2);
}

TEST_CASE("shuffle_perm is a deterministic permutation") {
  const std::vector<int> a = shuffle_perm(100, 7, 3);
  const std::vector<int> b = shuffle_perm(100, 7, 3);
  CHECK(a == b);
  CHECK(shuffle_perm(100, 7, 4) != a);
  CHECK(shuffle_perm(100, 8, 3) != a);
  std::vector<bool> seen(100, false);
  for (int v : a) {
    REQUIRE(v >= 0);
    REQUIRE(v < 100);
    CHECK_FALSE(seen[static_cast<std::size_t>(v)]);
    seen[static_cast<std::size_t>(v)] = true;
  }
}

TEST_CASE("stage-1 training lowers the loss on a toy run") {
  const Dataset data = generate(200, 11, default_space(), CostParams{});
  int improved = 0;
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    const StageResult r = train_stage1(data, tiny_train(50, 20, 1, seed), tiny_model(seed));
    REQUIRE(r.epoch_loss.size() == 20);
    for (double l : r.epoch_loss) REQUIRE(std::isfinite(l));
    if (r.epoch_loss.back() < r.epoch_loss.front()) ++improved;
  }
  CHECK(improved >= 2);  // majority of seeds must improve
}

TEST_CASE("stage-1 checkpoints are byte-identical across reruns") {
  const Dataset data = generate(120, 12, default_space(), CostParams{});
  const StageResult a = train_stage1(data, tiny_train(40, 4, 1, 9), tiny_model(9));
  const StageResult b = train_stage1(data, tiny_train(40, 4, 1, 9), tiny_model(9));
  CHECK(ckpt_bytes(a.checkpoint) == ckpt_bytes(b.checkpoint));
  CHECK(a.checkpoint.stage == 1);
  for (const auto& [name, t] : a.checkpoint.params.items())
    CHECK(is_encoder_param(name));
}

TEST_CASE("training rejects datasets smaller than one batch") {
  const Dataset data = generate(10, 13, default_space(), CostParams{});
  CHECK_THROWS_AS(train_stage1(data, tiny_train(64, 2, 1, 1), tiny_model(1)), ContractError);
  const StageResult enc = train_stage1(data, tiny_train(10, 1, 1, 1), tiny_model(1));
  CHECK_THROWS_AS(train_stage2(data, enc.checkpoint, tiny_train(64, 1, 2, 1), HeadMode::kUov),
                  ContractError);
}

TEST_CASE("stage 2 freezes the encoder and trains the decoder") {
  const Dataset data = generate(150, 14, default_space(), CostParams{});
  const TrainConfig tc = tiny_train(50, 6, 8, 5);
  const StageResult enc = train_stage1(data, tc, tiny_model(5));
  const StageResult full = train_stage2(data, enc.checkpoint, tc, HeadMode::kUov);

  CHECK(full.checkpoint.stage == 2);
  for (const auto& [name, t] : enc.checkpoint.params.items())
    CHECK(full.checkpoint.params.get(name) == t);  // frozen bytes
  REQUIRE(full.epoch_loss.size() == 8);
  CHECK(full.epoch_loss.back() < full.epoch_loss.front());
  CHECK(full.checkpoint.params.has("head.pe.w2"));

  // rerun reproduces the same bytes
  const StageResult again = train_stage2(data, enc.checkpoint, tc, HeadMode::kUov);
  CHECK(ckpt_bytes(again.checkpoint) == ckpt_bytes(full.checkpoint));
}

TEST_CASE("stage 2 requires an encoder checkpoint") {
  const Dataset data = generate(60, 15, default_space(), CostParams{});
  Checkpoint empty;
  empty.config = tiny_model(1);
  empty.stage = 0;
  CHECK_THROWS_AS(train_stage2(data, empty, tiny_train(30, 1, 1, 1), HeadMode::kUov),
                  FormatError);
}

TEST_CASE("classification baseline trains under the same loop") {
  const Dataset data = generate(150, 16, default_space(), CostParams{});
  const TrainConfig tc = tiny_train(50, 4, 6, 6);
  const StageResult enc = train_stage1(data, tc, tiny_model(6));
  const StageResult cls = train_stage2(data, enc.checkpoint, tc, HeadMode::kClassification);
  CHECK(cls.checkpoint.config.head_mode == HeadMode::kClassification);
  CHECK(cls.checkpoint.params.has("head.cls.w"));
  CHECK(cls.epoch_loss.back() < cls.epoch_loss.front());
  const Metrics m = evaluate(data, cls.checkpoint);
  CHECK(m.geomean_latency_ratio >= 1.0);
}

TEST_CASE("evaluate on the oracle's own labels is perfect") {
  const Dataset data = generate(300, 17, default_space(), CostParams{});
  const BucketSpec pe_spec = pe_bucket_spec(data.manifest.space, 16);
  const BucketSpec buf_spec = buf_bucket_spec(data.manifest.space, 12);
  std::vector<std::pair<double, double>> decoded;
  for (const Sample& s : data.samples)
    decoded.emplace_back(static_cast<double>(s.opt.pe), static_cast<double>(s.opt.buf));
  const Metrics m = evaluate_decoded(data, data.manifest.space, data.manifest.cost, pe_spec,
                                     buf_spec, decoded);
  CHECK(m.joint_bucket_accuracy == 1.0);
  CHECK(m.pe_bucket_accuracy == 1.0);
  CHECK(m.buf_bucket_accuracy == 1.0);
  CHECK(m.exact_config_accuracy == 1.0);
  CHECK(m.geomean_latency_ratio == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("untrained model shows no skill beyond the label prior") {
  const Dataset data = generate(400, 18, default_space(), CostParams{});
  Checkpoint ckpt;
  ckpt.config = tiny_model(123);
  ckpt.params = init(ckpt.config);
  ckpt.manifest = data.manifest;
  ckpt.stage = 2;
  const Metrics m = evaluate(data, ckpt);
  CHECK(m.geomean_latency_ratio >= 1.0);

  const auto hist = label_histogram(data, pe_bucket_spec(data.manifest.space, ckpt.config.k_pe),
                                    buf_bucket_spec(data.manifest.space, ckpt.config.k_buf));
  std::int64_t top = 0;
  for (const auto& [key, c] : hist) top = std::max(top, c);
  const double prior = static_cast<double>(top) / static_cast<double>(data.samples.size());
  CHECK(m.joint_bucket_accuracy <= prior + 0.05);
}

TEST_CASE("power-iteration PCA matches an isotropic cloud") {
  SplitMix64 rng(19);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 4000; ++i) {
    std::vector<double> r(6);
    for (double& v : r) v = rng.next_gaussian();
    rows.push_back(std::move(r));
  }
  const Pca2 pca = pca_top2(rows);
  CHECK(pca.var1 >= pca.var2);
  CHECK(pca.var2 / pca.var1 >= 0.9);  // isotropy: top-2 variances within 10%

  // an anisotropic cloud separates the components
  std::vector<std::vector<double>> skew = rows;
  for (auto& r : skew) r[0] *= 5.0;
  const Pca2 p2 = pca_top2(skew);
  CHECK(p2.var1 > 5 * p2.var2);
  CHECK(std::abs(p2.v1[0]) > 0.99);  // first component aligns with the scaled axis
}

TEST_CASE("export_embeddings writes one row per sample") {
  const Dataset data = generate(128, 20, default_space(), CostParams{});
  const StageResult enc = train_stage1(data, tiny_train(64, 2, 1, 2), tiny_model(2));
  const std::string path =
      (std::filesystem::temp_directory_path() / "dsekit_embed.csv").string();
  export_embeddings(data, enc.checkpoint, path);
  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "x,y,pe_bucket,buf_bucket");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 128);
}

TEST_SUITE_END();
