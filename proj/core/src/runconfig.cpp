#include "dsekit/runconfig.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace dsekit {

DesignSpace RunConfig::space() const {
  DesignSpace s = default_space();
  s.area_budget = area_budget;
  return s;
}

CostParams RunConfig::cost() const { return CostParams{bandwidth}; }

void RunConfig::sync_seeds() {
  model.seed = seed;
  train.seed = seed;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  std::size_t e = s.find_last_not_of(" \t");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

std::int64_t parse_i64(const std::string& v, const std::string& key, long line) {
  std::size_t pos = 0;
  std::int64_t r;
  try {
    r = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw ParseError("config: bad integer for " + key, line);
  }
  if (pos != v.size()) throw ParseError("config: bad integer for " + key, line);
  return r;
}

double parse_f64(const std::string& v, const std::string& key, long line) {
  std::size_t pos = 0;
  double r;
  try {
    r = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ParseError("config: bad real for " + key, line);
  }
  if (pos != v.size()) throw ParseError("config: bad real for " + key, line);
  return r;
}

bool parse_bool(const std::string& v, const std::string& key, long line) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParseError("config: bad bool for " + key + " (true/false)", line);
}

}  // namespace

std::string RunConfig::to_kv() const {
  char lr[64];
  std::snprintf(lr, sizeof lr, "%.17g", train.lr);
  std::string s;
  s += "command = " + command + "\n";
  s += "data = " + data + "\n";
  s += "out = " + out + "\n";
  s += "encoder = " + encoder + "\n";
  s += "ckpt = " + ckpt + "\n";
  s += "model_file = " + model_file + "\n";
  s += "stage = " + std::to_string(stage) + "\n";
  s += "method = " + std::to_string(method) + "\n";
  s += std::string("self_test = ") + (self_test ? "true" : "false") + "\n";
  s += "n = " + std::to_string(n) + "\n";
  s += "seed = " + std::to_string(seed) + "\n";
  s += "area_budget = " + std::to_string(area_budget) + "\n";
  s += "bandwidth = " + std::to_string(bandwidth) + "\n";
  s += "threads = " + std::to_string(threads) + "\n";
  s += "model.d_model = " + std::to_string(model.d_model) + "\n";
  s += "model.n_heads = " + std::to_string(model.n_heads) + "\n";
  s += "model.n_layers = " + std::to_string(model.n_layers) + "\n";
  s += "model.d_latent = " + std::to_string(model.d_latent) + "\n";
  s += "model.ffn_mult = " + std::to_string(model.ffn_mult) + "\n";
  s += "model.k_pe = " + std::to_string(model.k_pe) + "\n";
  s += "model.k_buf = " + std::to_string(model.k_buf) + "\n";
  s += std::string("model.head = ") + to_string(model.head_mode) + "\n";
  s += "train.batch_size = " + std::to_string(train.batch_size) + "\n";
  s += std::string("train.lr = ") + lr + "\n";
  s += "train.epochs_stage1 = " + std::to_string(train.epochs_stage1) + "\n";
  s += "train.epochs_stage2 = " + std::to_string(train.epochs_stage2) + "\n";
  s += std::string("train.contrastive = ") + (train.use_contrastive ? "true" : "false") + "\n";
  return s;
}

void RunConfig::apply_kv(const std::string& key, const std::string& value, long line) {
  if (key == "command") command = value;
  else if (key == "data") data = value;
  else if (key == "out") out = value;
  else if (key == "encoder") encoder = value;
  else if (key == "ckpt") ckpt = value;
  else if (key == "model_file") model_file = value;
  else if (key == "stage") stage = static_cast<int>(parse_i64(value, key, line));
  else if (key == "method") method = static_cast<int>(parse_i64(value, key, line));
  else if (key == "self_test") self_test = parse_bool(value, key, line);
  else if (key == "n") n = parse_i64(value, key, line);
  else if (key == "seed") {
    seed = static_cast<std::uint64_t>(parse_i64(value, key, line));
    sync_seeds();
  } else if (key == "area_budget") area_budget = parse_i64(value, key, line);
  else if (key == "bandwidth") bandwidth = parse_i64(value, key, line);
  else if (key == "threads") threads = static_cast<int>(parse_i64(value, key, line));
  else if (key == "model.d_model") model.d_model = static_cast<int>(parse_i64(value, key, line));
  else if (key == "model.n_heads") model.n_heads = static_cast<int>(parse_i64(value, key, line));
  else if (key == "model.n_layers") model.n_layers = static_cast<int>(parse_i64(value, key, line));
  else if (key == "model.d_latent") model.d_latent = static_cast<int>(parse_i64(value, key, line));
  else if (key == "model.ffn_mult") model.ffn_mult = static_cast<int>(parse_i64(value, key, line));
  else if (key == "model.k_pe") model.k_pe = static_cast<int>(parse_i64(value, key, line));
  else if (key == "model.k_buf") model.k_buf = static_cast<int>(parse_i64(value, key, line));
  else if (key == "model.head") {
    try {
      model.head_mode = head_mode_from_string(value);
    } catch (const RangeError& e) {
      throw ParseError(std::string("config: ") + e.what(), line);
    }
  } else if (key == "train.batch_size")
    train.batch_size = static_cast<int>(parse_i64(value, key, line));
  else if (key == "train.lr") train.lr = parse_f64(value, key, line);
  else if (key == "train.epochs_stage1")
    train.epochs_stage1 = static_cast<int>(parse_i64(value, key, line));
  else if (key == "train.epochs_stage2")
    train.epochs_stage2 = static_cast<int>(parse_i64(value, key, line));
  else if (key == "train.contrastive") train.use_contrastive = parse_bool(value, key, line);
  else
    throw ParseError("config: unknown key '" + key + "'", line);
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("config: cannot open '" + path + "'");
  RunConfig rc;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ParseError("config: expected key = value", line_no);
    rc.apply_kv(trim(t.substr(0, eq)), trim(t.substr(eq + 1)), line_no);
  }
  return rc;
}

void RunConfig::write_resolved(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  const std::string path = (std::filesystem::path(dir) / "run-config.resolved").string();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("config: cannot write '" + path + "'");
  out << to_kv();
  out.flush();
  if (!out) throw FormatError("config: write to '" + path + "' failed");
}

}  // namespace dsekit
