#include "dsekit/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dsekit/rng.hpp"

namespace dsekit {

const char* to_string(HeadMode m) {
  return m == HeadMode::kUov ? "uov" : "cls";
}

HeadMode head_mode_from_string(const std::string& s) {
  if (s == "uov") return HeadMode::kUov;
  if (s == "cls") return HeadMode::kClassification;
  throw RangeError("unknown head mode '" + s + "' (expected uov or cls)");
}

Tensor& ParamStore::add(const std::string& name, std::vector<int> shape) {
  if (index_.count(name)) throw ContractError("ParamStore: duplicate parameter " + name);
  index_[name] = items_.size();
  items_.emplace_back(name, Tensor(std::move(shape)));
  return items_.back().second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("ParamStore: unknown parameter " + name);
  return items_[it->second].second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("ParamStore: unknown parameter " + name);
  return items_[it->second].second;
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) > 0; }

std::int64_t ParamStore::total_size() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : items_) n += t.size();
  return n;
}

bool is_encoder_param(const std::string& name) {
  return name.rfind("enc.", 0) == 0 || name.rfind("perf.", 0) == 0;
}

namespace {

constexpr int kTokens = 4;

void fill_glorot(Tensor& t, int fan_in, int fan_out, SplitMix64& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (std::int64_t i = 0; i < t.size(); ++i)
    t[static_cast<std::size_t>(i)] = rng.next_double(-bound, bound);
}

void fill_embedding(Tensor& t, SplitMix64& rng) {
  for (std::int64_t i = 0; i < t.size(); ++i)
    t[static_cast<std::size_t>(i)] = 0.02 * rng.next_gaussian();
}

void fill_ones(Tensor& t) {
  for (std::int64_t i = 0; i < t.size(); ++i) t[static_cast<std::size_t>(i)] = 1.0;
}

void add_block_params(ParamStore& ps, const std::string& prefix, int d, int ffn, SplitMix64& rng) {
  fill_ones(ps.add(prefix + ".ln1.g", {d}));
  ps.add(prefix + ".ln1.b", {d});
  for (const char* w : {"wq", "wk", "wv", "wo"})
    fill_glorot(ps.add(prefix + "." + w, {d, d}), d, d, rng);
  for (const char* b : {"bq", "bk", "bv", "bo"}) ps.add(prefix + "." + b, {d});
  fill_ones(ps.add(prefix + ".ln2.g", {d}));
  ps.add(prefix + ".ln2.b", {d});
  fill_glorot(ps.add(prefix + ".ffn.w1", {d, ffn}), d, ffn, rng);
  ps.add(prefix + ".ffn.b1", {ffn});
  fill_glorot(ps.add(prefix + ".ffn.w2", {ffn, d}), ffn, d, rng);
  ps.add(prefix + ".ffn.b2", {d});
}

}  // namespace

ParamStore init(const ModelConfig& cfg, int n_classes) {
  if (cfg.d_model < 1 || cfg.n_heads < 1 || cfg.n_layers < 1 || cfg.d_latent < 1 ||
      cfg.ffn_mult < 1 || cfg.k_pe < 1 || cfg.k_buf < 1)
    throw RangeError("ModelConfig: all dims must be >= 1");
  if (cfg.d_model % cfg.n_heads != 0)
    throw RangeError("ModelConfig: d_model must be divisible by n_heads");

  SplitMix64 rng(cfg.seed);
  ParamStore ps;
  const int d = cfg.d_model;
  const int ffn = cfg.ffn_mult * d;

  for (int f = 0; f < 3; ++f) {
    fill_glorot(ps.add("enc.feat" + std::to_string(f) + ".w", {d}), 1, d, rng);
    ps.add("enc.feat" + std::to_string(f) + ".b", {d});
  }
  fill_embedding(ps.add("enc.df_embed", {3, d}), rng);
  fill_embedding(ps.add("enc.pos", {kTokens, d}), rng);
  for (int l = 0; l < cfg.n_layers; ++l)
    add_block_params(ps, "enc.l" + std::to_string(l), d, ffn, rng);
  fill_glorot(ps.add("enc.down.w", {d, cfg.d_latent}), d, cfg.d_latent, rng);
  ps.add("enc.down.b", {cfg.d_latent});

  fill_glorot(ps.add("perf.w1", {cfg.d_latent, cfg.d_latent}), cfg.d_latent, cfg.d_latent, rng);
  ps.add("perf.b1", {cfg.d_latent});
  fill_glorot(ps.add("perf.w2", {cfg.d_latent, 1}), cfg.d_latent, 1, rng);
  ps.add("perf.b2", {1});

  fill_glorot(ps.add("dec.up.w", {cfg.d_latent, kTokens * d}), cfg.d_latent, kTokens * d, rng);
  ps.add("dec.up.b", {kTokens * d});
  fill_embedding(ps.add("dec.pos", {kTokens, d}), rng);
  for (int l = 0; l < cfg.n_layers; ++l)
    add_block_params(ps, "dec.l" + std::to_string(l), d, ffn, rng);

  if (cfg.head_mode == HeadMode::kUov) {
    fill_glorot(ps.add("head.pe.w1", {d, d}), d, d, rng);
    ps.add("head.pe.b1", {d});
    fill_glorot(ps.add("head.pe.w2", {d, cfg.k_pe}), d, cfg.k_pe, rng);
    ps.add("head.pe.b2", {cfg.k_pe});
    fill_glorot(ps.add("head.buf.w1", {d, d}), d, d, rng);
    ps.add("head.buf.b1", {d});
    fill_glorot(ps.add("head.buf.w2", {d, cfg.k_buf}), d, cfg.k_buf, rng);
    ps.add("head.buf.b2", {cfg.k_buf});
  } else {
    if (n_classes < 1) throw RangeError("init: n_classes must be >= 1");
    fill_glorot(ps.add("head.cls.w", {d, n_classes}), d, n_classes, rng);
    ps.add("head.cls.b", {n_classes});
  }
  return ps;
}

Tape::Var ParamVars::at(const std::string& name) const {
  auto it = map.find(name);
  if (it == map.end()) throw ContractError("ParamVars: parameter " + name + " not registered");
  return it->second;
}

ParamVars register_params(Tape& tape, const ParamStore& params, bool trainable,
                          const std::function<bool(const std::string&)>& filter) {
  ParamVars pv;
  for (const auto& [name, t] : params.items()) {
    if (filter && !filter(name)) continue;
    pv.map[name] = trainable ? tape.leaf(t) : tape.constant(t);
  }
  return pv;
}

namespace {

Tape::Var affine(Tape& tape, Tape::Var x, const ParamVars& pv, const std::string& prefix) {
  return tape.affine(x, pv.at(prefix + ".w"), pv.at(prefix + ".b"));
}

Tape::Var transformer_block(Tape& tape, const ModelConfig& cfg, const ParamVars& pv,
                            const std::string& prefix, Tape::Var h) {
  Tape::Var a = tape.layer_norm(h, pv.at(prefix + ".ln1.g"), pv.at(prefix + ".ln1.b"));
  Tape::Var q = tape.affine(a, pv.at(prefix + ".wq"), pv.at(prefix + ".bq"));
  Tape::Var k = tape.affine(a, pv.at(prefix + ".wk"), pv.at(prefix + ".bk"));
  Tape::Var v = tape.affine(a, pv.at(prefix + ".wv"), pv.at(prefix + ".bv"));
  Tape::Var ctx = tape.mha(q, k, v, cfg.n_heads, kTokens);
  Tape::Var attn = tape.affine(ctx, pv.at(prefix + ".wo"), pv.at(prefix + ".bo"));
  h = tape.add(h, attn);
  Tape::Var f = tape.layer_norm(h, pv.at(prefix + ".ln2.g"), pv.at(prefix + ".ln2.b"));
  Tape::Var ffn = tape.affine(
      tape.relu(tape.affine(f, pv.at(prefix + ".ffn.w1"), pv.at(prefix + ".ffn.b1"))),
      pv.at(prefix + ".ffn.w2"), pv.at(prefix + ".ffn.b2"));
  return tape.add(h, ffn);
}

}  // namespace

EncoderOut encoder_forward(Tape& tape, const ModelConfig& cfg, const ParamVars& pv,
                           const std::vector<FeatureVector>& batch) {
  const int b = static_cast<int>(batch.size());
  if (b < 1) throw ContractError("encoder_forward: empty batch");

  std::vector<Tape::Var> tokens;
  tokens.reserve(kTokens);
  for (int f = 0; f < 3; ++f) {
    Tensor col({b});
    for (int i = 0; i < b; ++i)
      col[static_cast<std::size_t>(i)] = batch[static_cast<std::size_t>(i)].f[static_cast<std::size_t>(f)];
    const std::string prefix = "enc.feat" + std::to_string(f);
    tokens.push_back(tape.broadcast_add_row(
        tape.outer(tape.constant(std::move(col)), pv.at(prefix + ".w")), pv.at(prefix + ".b")));
  }
  std::vector<int> codes(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i)
    codes[static_cast<std::size_t>(i)] = batch[static_cast<std::size_t>(i)].dataflow_code;
  tokens.push_back(tape.embed_lookup(pv.at("enc.df_embed"), std::move(codes)));

  Tape::Var h = tape.tile_rows_add(tape.interleave_rows(tokens), pv.at("enc.pos"));
  for (int l = 0; l < cfg.n_layers; ++l)
    h = transformer_block(tape, cfg, pv, "enc.l" + std::to_string(l), h);

  Tape::Var pooled = tape.block_mean_rows(h, kTokens);
  Tape::Var raw = affine(tape, pooled, pv, "enc.down");
  EncoderOut out;
  out.lambda = tape.l2_normalize_rows(raw);
  Tape::Var p1 = tape.relu(tape.affine(out.lambda, pv.at("perf.w1"), pv.at("perf.b1")));
  out.perf = tape.affine(p1, pv.at("perf.w2"), pv.at("perf.b2"));
  return out;
}

namespace {

Tape::Var decoder_trunk(Tape& tape, const ModelConfig& cfg, const ParamVars& pv,
                        Tape::Var lambda) {
  const Tensor& lam = tape.value(lambda);
  const int b = lam.shape()[0];
  Tape::Var up = tape.affine(lambda, pv.at("dec.up.w"), pv.at("dec.up.b"));
  Tape::Var h = tape.tile_rows_add(tape.reshape(up, {b * kTokens, cfg.d_model}), pv.at("dec.pos"));
  for (int l = 0; l < cfg.n_layers; ++l)
    h = transformer_block(tape, cfg, pv, "dec.l" + std::to_string(l), h);
  return tape.block_mean_rows(h, kTokens);
}

Tape::Var uov_head(Tape& tape, const ParamVars& pv, const std::string& prefix, Tape::Var pooled) {
  Tape::Var h1 = tape.relu(tape.affine(pooled, pv.at(prefix + ".w1"), pv.at(prefix + ".b1")));
  return tape.sigmoid(tape.affine(h1, pv.at(prefix + ".w2"), pv.at(prefix + ".b2")));
}

}  // namespace

DecoderOut decoder_forward(Tape& tape, const ModelConfig& cfg, const ParamVars& pv,
                           Tape::Var lambda) {
  if (cfg.head_mode != HeadMode::kUov)
    throw ContractError("decoder_forward: model is in classification mode");
  Tape::Var pooled = decoder_trunk(tape, cfg, pv, lambda);
  return {uov_head(tape, pv, "head.pe", pooled), uov_head(tape, pv, "head.buf", pooled)};
}

Tape::Var classification_forward(Tape& tape, const ModelConfig& cfg, const ParamVars& pv,
                                 Tape::Var lambda) {
  if (cfg.head_mode != HeadMode::kClassification)
    throw ContractError("classification_forward: model is not in classification mode");
  Tape::Var pooled = decoder_trunk(tape, cfg, pv, lambda);
  return tape.affine(pooled, pv.at("head.cls.w"), pv.at("head.cls.b"));
}

HardwareConfig project_feasible(HardwareConfig cfg, const Workload& w, const DesignSpace& space,
                                const CostParams& p) {
  auto option_index = [](const std::vector<std::int64_t>& opts, std::int64_t v) {
    return static_cast<int>(std::lower_bound(opts.begin(), opts.end(), v) - opts.begin());
  };
  int pe_i = option_index(space.pe_options, cfg.pe);
  int buf_i = option_index(space.buf_options, cfg.buf);
  while (!is_feasible({space.pe_options[static_cast<std::size_t>(pe_i)],
                       space.buf_options[static_cast<std::size_t>(buf_i)]},
                      space)) {
    if (pe_i == 0 && buf_i == 0)
      throw NoFeasibleConfigError("project_feasible: minimal config exceeds the budget");
    const bool can_pe = pe_i > 0, can_buf = buf_i > 0;
    std::int64_t lat_pe = 0, lat_buf = 0;
    if (can_pe)
      lat_pe = latency(w, {space.pe_options[static_cast<std::size_t>(pe_i - 1)],
                           space.buf_options[static_cast<std::size_t>(buf_i)]}, p);
    if (can_buf)
      lat_buf = latency(w, {space.pe_options[static_cast<std::size_t>(pe_i)],
                            space.buf_options[static_cast<std::size_t>(buf_i - 1)]}, p);
    if (!can_buf || (can_pe && lat_pe < lat_buf))
      --pe_i;       // pe downgrade strictly cheaper (or only choice)
    else
      --buf_i;      // ties downgrade the buffer first
  }
  return {space.pe_options[static_cast<std::size_t>(pe_i)],
          space.buf_options[static_cast<std::size_t>(buf_i)]};
}

HardwareConfig predict(const Workload& w, const ParamStore& params, const ModelConfig& cfg,
                       const DesignSpace& space, const CostParams& p, const BucketSpec& pe_spec,
                       const BucketSpec& buf_spec) {
  Tape tape;
  ParamVars pv = register_params(tape, params, /*trainable=*/false);
  EncoderOut enc = encoder_forward(tape, cfg, pv, {normalize(w)});
  HardwareConfig raw;
  if (cfg.head_mode == HeadMode::kUov) {
    DecoderOut dec = decoder_forward(tape, cfg, pv, enc.lambda);
    const Tensor& upe = tape.value(dec.u_pe);
    const Tensor& ubuf = tape.value(dec.u_buf);
    OrdinalVector ope(upe.data(), upe.data() + upe.size());
    OrdinalVector obuf(ubuf.data(), ubuf.data() + ubuf.size());
    raw.pe = nearest_option(decode(ope, pe_spec), space.pe_options);
    raw.buf = nearest_option(decode(obuf, buf_spec), space.buf_options);
  } else {
    Tape::Var logits = classification_forward(tape, cfg, pv, enc.lambda);
    const Tensor& lv = tape.value(logits);
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < lv.size(); ++i)
      if (lv[static_cast<std::size_t>(i)] > lv[static_cast<std::size_t>(best)]) best = i;
    const auto nbuf = static_cast<std::int64_t>(space.buf_options.size());
    raw.pe = space.pe_options[static_cast<std::size_t>(best / nbuf)];
    raw.buf = space.buf_options[static_cast<std::size_t>(best % nbuf)];
  }
  return project_feasible(raw, w, space, p);
}

// ---------------------------------------------------------------------------
// checkpoint io

namespace {

constexpr char kMagic[4] = {'A', 'I', 'V', '2'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(const std::string& buf) : buf_(buf) {}
  std::uint16_t u16() { return static_cast<std::uint16_t>(u8() | (u8() << 8)); }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  double f64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return std::bit_cast<double>(v);
  }
  std::string bytes(std::size_t n) {
    if (pos_ + n > buf_.size()) throw FormatError("checkpoint: truncated file");
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool exhausted() const { return pos_ == buf_.size(); }

 private:
  std::uint32_t u8() {
    if (pos_ >= buf_.size()) throw FormatError("checkpoint: truncated file");
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  const std::string& buf_;
  std::size_t pos_ = 0;
};

std::string model_config_to_json(const ModelConfig& cfg) {
  std::string s = "{";
  s += "\"d_model\": " + std::to_string(cfg.d_model);
  s += ", \"n_heads\": " + std::to_string(cfg.n_heads);
  s += ", \"n_layers\": " + std::to_string(cfg.n_layers);
  s += ", \"d_latent\": " + std::to_string(cfg.d_latent);
  s += ", \"ffn_mult\": " + std::to_string(cfg.ffn_mult);
  s += ", \"k_pe\": " + std::to_string(cfg.k_pe);
  s += ", \"k_buf\": " + std::to_string(cfg.k_buf);
  s += std::string(", \"head_mode\": \"") + to_string(cfg.head_mode) + "\"";
  s += ", \"seed\": " + std::to_string(cfg.seed);
  return s + "}";
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.d_model = j.at("d_model").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.n_layers = j.at("n_layers").get<int>();
  cfg.d_latent = j.at("d_latent").get<int>();
  cfg.ffn_mult = j.at("ffn_mult").get<int>();
  cfg.k_pe = j.at("k_pe").get<int>();
  cfg.k_buf = j.at("k_buf").get<int>();
  cfg.head_mode = head_mode_from_string(j.at("head_mode").get<std::string>());
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string out;
  out.append(kMagic, 4);
  put_u16(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(ckpt.params.items().size()));
  for (const auto& [name, t] : ckpt.params.items()) {
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(t.ndim()));
    for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (std::int64_t i = 0; i < t.size(); ++i) put_f64(out, t[static_cast<std::size_t>(i)]);
  }
  std::string meta = "{\"model_config\": " + model_config_to_json(ckpt.config) +
                     ", \"stage\": " + std::to_string(ckpt.stage) +
                     ", \"dataset_manifest\": " + manifest_to_json(ckpt.manifest) + "}";
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;

  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("save_checkpoint: cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  f.flush();
  if (!f) throw FormatError("save_checkpoint: write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("load_checkpoint: cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string buf = ss.str();
  Reader r(buf);
  if (r.bytes(4) != std::string(kMagic, 4))
    throw FormatError("load_checkpoint: bad magic (not a checkpoint file)");
  const std::uint16_t version = r.u16();
  if (version != kVersion)
    throw FormatError("load_checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.bytes(r.u16());
    const int ndim = static_cast<int>(static_cast<std::uint8_t>(r.bytes(1)[0]));
    if (ndim < 1 || ndim > 3) throw FormatError("load_checkpoint: bad ndim for " + name);
    std::vector<int> shape;
    for (int d = 0; d < ndim; ++d) shape.push_back(static_cast<int>(r.u32()));
    Tensor& t = ckpt.params.add(name, shape);
    for (std::int64_t j = 0; j < t.size(); ++j) t[static_cast<std::size_t>(j)] = r.f64();
  }
  const std::string meta = r.bytes(r.u32());
  if (!r.exhausted()) throw FormatError("load_checkpoint: trailing bytes after metadata");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("load_checkpoint: bad metadata JSON: ") + e.what());
  }
  try {
    ckpt.config = model_config_from_json(j.at("model_config"));
    ckpt.stage = j.at("stage").get<int>();
    ckpt.manifest = manifest_from_json(j.at("dataset_manifest").dump());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("load_checkpoint: metadata fields: ") + e.what());
  }
  return ckpt;
}

}  // namespace dsekit
