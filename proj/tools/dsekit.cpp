// Command-line front end: dataset generation, two-stage training,
// evaluation, single-workload prediction, whole-model deployment and
// embedding export, all reproducible from seeds plus a flat key=value
// config file (flags override the file).

#include <algorithm>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dsekit/deploy.hpp"
#include "dsekit/runconfig.hpp"

namespace fs = std::filesystem;
using namespace dsekit;

namespace {

struct ArgError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_arg(bool ok, const std::string& msg) {
  if (!ok) throw ArgError(msg);
}

std::string dir_of(const std::string& file_path) {
  const fs::path p = fs::path(file_path).parent_path();
  return p.empty() ? std::string(".") : p.string();
}

void print_imbalance(const ImbalanceReport& r) {
  std::printf("classes=%lld\n", static_cast<long long>(r.classes));
  std::printf("max_count=%lld\n", static_cast<long long>(r.max_count));
  std::printf("min_count=%lld\n", static_cast<long long>(r.min_count));
  std::printf("max_min_ratio=%.6g\n", r.max_min_ratio);
  std::printf("top_decile_share=%.6g\n", r.top_decile_share);
}

void write_epoch_loss(const std::string& dir, int stage, const std::vector<double>& losses) {
  std::ofstream out(fs::path(dir) / "epoch_loss.csv", std::ios::binary);
  if (!out) throw FormatError("train: cannot write epoch_loss.csv");
  out << "epoch,stage,loss\n";
  char buf[64];
  for (std::size_t e = 0; e < losses.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%d,%.17g\n", e + 1, stage, losses[e]);
    out << buf;
  }
}

void print_and_write_metrics(const Metrics& m, const std::string& out_dir) {
  const std::vector<std::pair<std::string, double>> kv = {
      {"joint_bucket_accuracy", m.joint_bucket_accuracy},
      {"pe_bucket_accuracy", m.pe_bucket_accuracy},
      {"buf_bucket_accuracy", m.buf_bucket_accuracy},
      {"exact_config_accuracy", m.exact_config_accuracy},
      {"geomean_latency_ratio", m.geomean_latency_ratio},
      {"label_classes", static_cast<double>(m.label_stats.classes)},
      {"label_max_min_ratio", m.label_stats.max_min_ratio},
      {"label_top_decile_share", m.label_stats.top_decile_share},
  };
  for (const auto& [k, v] : kv) std::printf("%s=%.10g\n", k.c_str(), v);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream out(fs::path(out_dir) / "metrics.csv", std::ios::binary);
    if (!out) throw FormatError("eval: cannot write metrics.csv");
    out << "metric,value\n";
    char buf[96];
    for (const auto& [k, v] : kv) {
      std::snprintf(buf, sizeof buf, "%s,%.17g\n", k.c_str(), v);
      out << buf;
    }
  }
}

int run_gen_dataset(RunConfig& rc) {
  require_arg(rc.n >= 1, "gen-dataset: --n must be >= 1");
  require_arg(!rc.out.empty(), "gen-dataset: --out is required");
  require_arg(rc.threads >= 1, "gen-dataset: --threads must be >= 1");
  Dataset d = generate(rc.n, rc.seed, rc.space(), rc.cost(), rc.threads);
  write_csv(d, rc.out);
  const BucketSpec pe_spec = pe_bucket_spec(d.manifest.space, rc.model.k_pe);
  const BucketSpec buf_spec = buf_bucket_spec(d.manifest.space, rc.model.k_buf);
  print_imbalance(imbalance_report(label_histogram(d, pe_spec, buf_spec)));
  rc.write_resolved(dir_of(rc.out));
  std::printf("wrote %lld samples to %s\n", static_cast<long long>(rc.n), rc.out.c_str());
  return 0;
}

int run_train(RunConfig& rc) {
  require_arg(rc.stage == 1 || rc.stage == 2, "train: --stage must be 1 or 2");
  require_arg(!rc.data.empty(), "train: --data is required");
  require_arg(!rc.out.empty(), "train: --out is required");
  if (rc.stage == 2)
    require_arg(!rc.encoder.empty(), "train: stage 2 requires --encoder <stage-1 checkpoint>");
  set_tensor_threads(rc.threads);
  Dataset train_set = read_csv(rc.data);
  fs::create_directories(rc.out);
  rc.write_resolved(rc.out);

  StageResult result;
  if (rc.stage == 1) {
    result = train_stage1(train_set, rc.train, rc.model);
  } else {
    Checkpoint enc = load_checkpoint(rc.encoder);
    result = train_stage2(train_set, enc, rc.train, rc.model.head_mode);
  }
  const std::string ckpt_path = (fs::path(rc.out) / "model.ckpt").string();
  save_checkpoint(result.checkpoint, ckpt_path);
  write_epoch_loss(rc.out, rc.stage, result.epoch_loss);
  std::printf("stage %d done: %zu epochs, final loss %.6g, checkpoint %s\n", rc.stage,
              result.epoch_loss.size(), result.epoch_loss.back(), ckpt_path.c_str());
  return 0;
}

int run_eval(RunConfig& rc) {
  require_arg(!rc.data.empty(), "eval: --data is required");
  require_arg(rc.self_test || !rc.ckpt.empty(), "eval: --ckpt is required (or --self-test)");
  set_tensor_threads(rc.threads);
  Dataset test = read_csv(rc.data);
  Metrics m;
  if (rc.self_test) {
    // The oracle's own labels as predictions: the metric definitions must
    // report a perfect score on this path.
    const BucketSpec pe_spec = pe_bucket_spec(test.manifest.space, rc.model.k_pe);
    const BucketSpec buf_spec = buf_bucket_spec(test.manifest.space, rc.model.k_buf);
    std::vector<std::pair<double, double>> decoded;
    decoded.reserve(test.samples.size());
    for (const Sample& s : test.samples)
      decoded.emplace_back(static_cast<double>(s.opt.pe), static_cast<double>(s.opt.buf));
    m = evaluate_decoded(test, test.manifest.space, test.manifest.cost, pe_spec, buf_spec,
                         decoded);
  } else {
    m = evaluate(test, load_checkpoint(rc.ckpt));
  }
  print_and_write_metrics(m, rc.out);
  if (!rc.out.empty()) rc.write_resolved(rc.out);
  return 0;
}

int run_predict(RunConfig& rc, std::int64_t m, std::int64_t n, std::int64_t k,
                const std::string& dataflow) {
  require_arg(!rc.ckpt.empty(), "predict: --ckpt is required");
  Workload w;
  w.m = m;
  w.n = n;
  w.k = k;
  try {
    w.dataflow = dataflow_from_string(dataflow);
    validate(w);
  } catch (const RangeError& e) {
    throw ArgError(e.what());
  }
  Checkpoint ckpt = load_checkpoint(rc.ckpt);
  if (ckpt.stage < 2) throw FormatError("predict: checkpoint has no trained decoder");
  const DesignSpace& space = ckpt.manifest.space;
  const CostParams& cost = ckpt.manifest.cost;
  const HardwareConfig cfg =
      predict(w, ckpt.params, ckpt.config, space, cost,
              pe_bucket_spec(space, ckpt.config.k_pe), buf_bucket_spec(space, ckpt.config.k_buf));
  std::printf("pe=%lld buf=%lld est_latency=%lld\n", static_cast<long long>(cfg.pe),
              static_cast<long long>(cfg.buf), static_cast<long long>(latency(w, cfg, cost)));
  return 0;
}

int run_deploy(RunConfig& rc) {
  require_arg(!rc.ckpt.empty(), "deploy: --ckpt is required");
  require_arg(!rc.model_file.empty(), "deploy: --model-file is required");
  require_arg(rc.method == 1 || rc.method == 2, "deploy: --method must be 1 or 2");
  Checkpoint ckpt = load_checkpoint(rc.ckpt);
  if (ckpt.stage < 2) throw FormatError("deploy: checkpoint has no trained decoder");
  const ModelWorkload mw = load_model_workload(rc.model_file);
  const DesignSpace& space = ckpt.manifest.space;
  const CostParams& cost = ckpt.manifest.cost;
  const BucketSpec pe_spec = pe_bucket_spec(space, ckpt.config.k_pe);
  const BucketSpec buf_spec = buf_bucket_spec(space, ckpt.config.k_buf);

  std::vector<HardwareConfig> recs;
  recs.reserve(mw.layers.size());
  for (const Workload& w : mw.layers)
    recs.push_back(predict(w, ckpt.params, ckpt.config, space, cost, pe_spec, buf_spec));

  std::printf("model=%s layers=%zu\n", mw.name.c_str(), mw.layers.size());
  std::printf("layer,m,n,k,dataflow,rec_pe,rec_buf,layer_latency\n");
  for (std::size_t i = 0; i < mw.layers.size(); ++i) {
    const Workload& w = mw.layers[i];
    std::printf("%zu,%lld,%lld,%lld,%s,%lld,%lld,%lld\n", i, static_cast<long long>(w.m),
                static_cast<long long>(w.n), static_cast<long long>(w.k),
                to_string(w.dataflow), static_cast<long long>(recs[i].pe),
                static_cast<long long>(recs[i].buf),
                static_cast<long long>(latency(w, recs[i], cost)));
  }
  const HardwareConfig chosen =
      rc.method == 1 ? method1(mw, recs, space, cost) : method2(mw, recs, cost);
  std::printf("chosen: pe=%lld buf=%lld method=%d\n", static_cast<long long>(chosen.pe),
              static_cast<long long>(chosen.buf), rc.method);
  std::printf("model_latency=%lld\n", static_cast<long long>(model_latency(mw, chosen, cost)));
  return 0;
}

int run_export_embeddings(RunConfig& rc) {
  require_arg(!rc.data.empty(), "export-embeddings: --data is required");
  require_arg(!rc.ckpt.empty(), "export-embeddings: --ckpt is required");
  require_arg(!rc.out.empty(), "export-embeddings: --out is required");
  set_tensor_threads(rc.threads);
  Dataset data = read_csv(rc.data);
  Checkpoint ckpt = load_checkpoint(rc.ckpt);
  export_embeddings(data, ckpt, rc.out);
  rc.write_resolved(dir_of(rc.out));
  std::printf("wrote %zu embedding rows to %s\n", data.samples.size(), rc.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig rc;
  // The config file (if any) seeds the defaults; explicit flags then win.
  for (int i = 1; i < argc - 1; ++i) {
    if (std::string(argv[i]) == "--config") {
      try {
        rc = RunConfig::from_file(argv[i + 1]);
      } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
      }
    }
  }

  CLI::App app{"Learning-based design-space exploration for GEMM accelerators"};
  app.require_subcommand(1);
  app.fallthrough();  // app-level flags (--config) may follow the subcommand
  std::string config_path;
  app.add_option("--config", config_path, "Flat key=value config file (flags override it)");

  std::string head = std::string(to_string(rc.model.head_mode));
  std::string dataflow = "WS";
  std::int64_t wm = 1, wn = 1, wk = 1;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--threads", rc.threads, "Worker threads (output is thread-count invariant)")
        ->capture_default_str();
    cmd->add_option("--budget", rc.area_budget, "Area budget")->capture_default_str();
    cmd->add_option("--bandwidth", rc.bandwidth, "Memory bandwidth (elements/cycle)")
        ->capture_default_str();
  };

  CLI::App* gen = app.add_subcommand("gen-dataset", "Label workloads with the exhaustive oracle");
  gen->add_option("--n", rc.n, "Sample count")->capture_default_str();
  gen->add_option("--seed", rc.seed, "Generation seed")->capture_default_str();
  gen->add_option("--out", rc.out, "Output dataset CSV path");
  add_common(gen);

  CLI::App* train = app.add_subcommand("train", "Train stage 1 (encoder) or stage 2 (decoder)");
  train->add_option("--stage", rc.stage, "1 (encoder) or 2 (decoder)")->capture_default_str();
  train->add_option("--data", rc.data, "Training dataset CSV");
  train->add_option("--out", rc.out, "Run directory for checkpoint and logs");
  train->add_option("--encoder", rc.encoder, "Stage-1 checkpoint (required for stage 2)");
  int epochs_flag = -1;
  train->add_option("--epochs", epochs_flag, "Epoch count for the selected stage");
  train->add_option("--batch", rc.train.batch_size, "Batch size")->capture_default_str();
  train->add_option("--lr", rc.train.lr, "Adam learning rate")->capture_default_str();
  train->add_option("--seed", rc.seed, "Training/init seed")->capture_default_str();
  train->add_option("--head", head, "Decoder head: uov or cls")->capture_default_str();
  train->add_flag("--no-contrastive", "Stage-1 ablation: drop the contrastive term");
  add_common(train);

  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--data", rc.data, "Evaluation dataset CSV");
  eval_cmd->add_option("--ckpt", rc.ckpt, "Stage-2 checkpoint");
  eval_cmd->add_option("--out", rc.out, "Directory for metrics.csv (optional)");
  eval_cmd->add_flag("--self-test", rc.self_test,
                     "Score the oracle labels against themselves (must be 1.0)");
  eval_cmd->add_option("--threads", rc.threads, "Worker threads")->capture_default_str();

  CLI::App* pred = app.add_subcommand("predict", "Recommend a config for one workload");
  pred->add_option("--ckpt", rc.ckpt, "Stage-2 checkpoint");
  pred->add_option("--m", wm, "GEMM rows M")->capture_default_str();
  pred->add_option("--n", wn, "GEMM cols N")->capture_default_str();
  pred->add_option("--k", wk, "GEMM shared dim K")->capture_default_str();
  pred->add_option("--dataflow", dataflow, "WS, OS or RS")->capture_default_str();

  CLI::App* dep = app.add_subcommand("deploy", "Whole-model hardware selection");
  dep->add_option("--ckpt", rc.ckpt, "Stage-2 checkpoint");
  dep->add_option("--model-file", rc.model_file, "Layer-list CSV (m,n,k,dataflow per line)");
  dep->add_option("--method", rc.method, "1: min total latency, 2: bottleneck layer")
      ->capture_default_str();

  CLI::App* emb = app.add_subcommand("export-embeddings", "PCA-project encoder latents to CSV");
  emb->add_option("--data", rc.data, "Dataset CSV");
  emb->add_option("--ckpt", rc.ckpt, "Checkpoint (stage 1 is enough)");
  emb->add_option("--out", rc.out, "Output CSV path");
  emb->add_option("--threads", rc.threads, "Worker threads")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // help/version exit cleanly; bad args exit 2
  }

  try {
    rc.sync_seeds();
    try {
      rc.model.head_mode = head_mode_from_string(head);
    } catch (const RangeError& e) {
      throw ArgError(e.what());
    }
    if (train->parsed()) {
      if (train->count("--no-contrastive") > 0) rc.train.use_contrastive = false;
      if (epochs_flag >= 0) {
        if (rc.stage == 1)
          rc.train.epochs_stage1 = epochs_flag;
        else
          rc.train.epochs_stage2 = epochs_flag;
      }
    }
    if (gen->parsed()) {
      rc.command = "gen-dataset";
      return run_gen_dataset(rc);
    }
    if (train->parsed()) {
      rc.command = "train";
      return run_train(rc);
    }
    if (eval_cmd->parsed()) {
      rc.command = "eval";
      return run_eval(rc);
    }
    if (pred->parsed()) {
      rc.command = "predict";
      return run_predict(rc, wm, wn, wk, dataflow);
    }
    if (dep->parsed()) {
      rc.command = "deploy";
      return run_deploy(rc);
    }
    if (emb->parsed()) {
      rc.command = "export-embeddings";
      return run_export_embeddings(rc);
    }
    std::fprintf(stderr, "error: no subcommand\n");
    return 2;
  } catch (const ArgError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
