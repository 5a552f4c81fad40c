#include "dsekit/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace dsekit {

std::pair<HardwareConfig, std::int64_t> solve(const Workload& w, const DesignSpace& space,
                                              const CostParams& p) {
  bool found = false;
  HardwareConfig best;
  std::int64_t best_latency = 0, best_area = 0;
  for (std::int64_t pe : space.pe_options) {
    for (std::int64_t buf : space.buf_options) {
      const HardwareConfig cfg{pe, buf};
      const std::int64_t a = space.area_pe * pe + space.area_buf_per_elem * buf;
      if (a > space.area_budget) continue;
      const std::int64_t lat = latency(w, cfg, p);
      if (!found || lat < best_latency ||
          (lat == best_latency &&
           (a < best_area ||
            (a == best_area && (cfg.pe < best.pe || (cfg.pe == best.pe && cfg.buf < best.buf)))))) {
        found = true;
        best = cfg;
        best_latency = lat;
        best_area = a;
      }
    }
  }
  if (!found)
    throw NoFeasibleConfigError("solve: area budget " + std::to_string(space.area_budget) +
                                " excludes every configuration");
  return {best, best_latency};
}

Workload sample_workload(SplitMix64& rng) {
  auto log_uniform = [&rng](std::int64_t lo, std::int64_t hi) {
    const double u = rng.next_double(std::log(static_cast<double>(lo)),
                                     std::log(static_cast<double>(hi)));
    const auto v = static_cast<std::int64_t>(std::llround(std::exp(u)));
    return std::clamp(v, lo, hi);
  };
  Workload w;
  w.m = log_uniform(1, kMaxM);
  w.n = log_uniform(1, kMaxN);
  w.k = log_uniform(1, kMaxK);
  w.dataflow = static_cast<Dataflow>(rng.next_below(3));
  return w;
}

void recompute_stats(Dataset& d) {
  auto& m = d.manifest;
  m.count = static_cast<std::int64_t>(d.samples.size());
  double sum = 0;
  for (const Sample& s : d.samples) sum += std::log(static_cast<double>(s.opt_latency));
  const double mean = d.samples.empty() ? 0.0 : sum / static_cast<double>(d.samples.size());
  double sq = 0;
  for (const Sample& s : d.samples) {
    const double dlog = std::log(static_cast<double>(s.opt_latency)) - mean;
    sq += dlog * dlog;
  }
  m.log_latency_mean = mean;
  m.log_latency_std =
      m.count >= 2 ? std::sqrt(sq / static_cast<double>(m.count)) : 1.0;
  if (m.log_latency_std <= 0) m.log_latency_std = 1.0;  // degenerate: all latencies equal
}

Dataset generate(std::int64_t n, std::uint64_t seed, const DesignSpace& space,
                 const CostParams& p, int threads) {
  if (n < 1) throw RangeError("generate: n must be >= 1");
  Dataset d;
  d.samples.resize(static_cast<std::size_t>(n));
  auto worker = [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t i = begin; i < end; ++i) {
      SplitMix64 rng(stream_seed(seed, static_cast<std::uint64_t>(i)));
      Sample& s = d.samples[static_cast<std::size_t>(i)];
      s.workload = sample_workload(rng);
      std::tie(s.opt, s.opt_latency) = solve(s.workload, space, p);
    }
  };
  if (threads <= 1) {
    worker(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::int64_t chunk = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const std::int64_t begin = t * chunk;
      const std::int64_t end = std::min<std::int64_t>(n, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(worker, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  d.manifest.seed = seed;
  d.manifest.space = space;
  d.manifest.cost = p;
  recompute_stats(d);
  return d;
}

std::map<std::pair<int, int>, std::int64_t> label_histogram(const Dataset& d,
                                                            const BucketSpec& pe_spec,
                                                            const BucketSpec& buf_spec) {
  if (d.samples.empty()) throw ContractError("label_histogram: empty dataset");
  std::map<std::pair<int, int>, std::int64_t> hist;
  for (const Sample& s : d.samples) {
    const int pb = bucket_of(static_cast<double>(s.opt.pe), pe_spec);
    const int bb = bucket_of(static_cast<double>(s.opt.buf), buf_spec);
    ++hist[{pb, bb}];
  }
  return hist;
}

ImbalanceReport imbalance_report(const std::map<std::pair<int, int>, std::int64_t>& hist) {
  ImbalanceReport r;
  std::vector<std::int64_t> counts;
  std::int64_t total = 0;
  for (const auto& [key, c] : hist) {
    (void)key;
    counts.push_back(c);
    total += c;
  }
  if (counts.empty()) return r;
  std::sort(counts.begin(), counts.end(), std::greater<>());
  r.classes = static_cast<std::int64_t>(counts.size());
  r.max_count = counts.front();
  r.min_count = counts.back();
  r.max_min_ratio = static_cast<double>(r.max_count) / static_cast<double>(r.min_count);
  const std::size_t decile = std::max<std::size_t>(1, counts.size() / 10);
  std::int64_t top = 0;
  for (std::size_t i = 0; i < decile; ++i) top += counts[i];
  r.top_decile_share = static_cast<double>(top) / static_cast<double>(total);
  return r;
}

namespace {

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string int_list(const std::vector<std::int64_t>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out + "]";
}

}  // namespace

std::string manifest_path_for(const std::string& dataset_path) {
  return dataset_path + ".manifest.json";
}

std::string manifest_to_json(const DatasetManifest& m) {
  // Hand-rolled so the two reals are printed with exactly 17 significant
  // digits (lossless for IEEE doubles).
  std::string s = "{\n";
  s += "  \"seed\": " + std::to_string(m.seed) + ",\n";
  s += "  \"count\": " + std::to_string(m.count) + ",\n";
  s += "  \"space\": {\n";
  s += "    \"pe_options\": " + int_list(m.space.pe_options) + ",\n";
  s += "    \"buf_options\": " + int_list(m.space.buf_options) + ",\n";
  s += "    \"area_budget\": " + std::to_string(m.space.area_budget) + ",\n";
  s += "    \"area_pe\": " + std::to_string(m.space.area_pe) + ",\n";
  s += "    \"area_buf_per_elem\": " + std::to_string(m.space.area_buf_per_elem) + "\n";
  s += "  },\n";
  s += "  \"cost\": { \"bandwidth\": " + std::to_string(m.cost.bandwidth) + " },\n";
  s += "  \"log_latency_mean\": " + fmt17(m.log_latency_mean) + ",\n";
  s += "  \"log_latency_std\": " + fmt17(m.log_latency_std) + "\n";
  s += "}\n";
  return s;
}

DatasetManifest manifest_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: invalid JSON: ") + e.what());
  }
  try {
    DatasetManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.count = j.at("count").get<std::int64_t>();
    const auto& sp = j.at("space");
    m.space.pe_options = sp.at("pe_options").get<std::vector<std::int64_t>>();
    m.space.buf_options = sp.at("buf_options").get<std::vector<std::int64_t>>();
    m.space.area_budget = sp.at("area_budget").get<std::int64_t>();
    m.space.area_pe = sp.at("area_pe").get<std::int64_t>();
    m.space.area_buf_per_elem = sp.at("area_buf_per_elem").get<std::int64_t>();
    m.cost.bandwidth = j.at("cost").at("bandwidth").get<std::int64_t>();
    m.log_latency_mean = j.at("log_latency_mean").get<double>();
    m.log_latency_std = j.at("log_latency_std").get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: missing or mistyped field: ") + e.what());
  }
}

void write_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // binary: LF endings everywhere
  if (!out) throw FormatError("write_csv: cannot open '" + path + "' for writing");
  out << "m,n,k,dataflow,pe,buf,latency\n";
  for (const Sample& s : d.samples) {
    out << s.workload.m << ',' << s.workload.n << ',' << s.workload.k << ','
        << to_string(s.workload.dataflow) << ',' << s.opt.pe << ',' << s.opt.buf << ','
        << s.opt_latency << '\n';
  }
  out.flush();
  if (!out) throw FormatError("write_csv: write to '" + path + "' failed");
  std::ofstream mout(manifest_path_for(path), std::ios::binary);
  if (!mout) throw FormatError("write_csv: cannot open manifest sidecar for writing");
  mout << manifest_to_json(d.manifest);
  mout.flush();
  if (!mout) throw FormatError("write_csv: manifest write failed");
}

Dataset read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("read_csv: cannot open '" + path + "'");
  std::string line;
  long line_no = 1;
  if (!std::getline(in, line)) throw ParseError("read_csv: empty file", line_no);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "m,n,k,dataflow,pe,buf,latency")
    throw ParseError("read_csv: unexpected header '" + line + "'", line_no);

  Dataset d;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      if (in.eof()) break;
      throw ParseError("read_csv: blank line", line_no);
    }
    std::array<std::string, 7> field;
    std::size_t start = 0, idx = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        if (idx >= field.size()) throw ParseError("read_csv: too many fields", line_no);
        field[idx++] = line.substr(start, i - start);
        start = i + 1;
      }
    }
    if (idx != field.size())
      throw ParseError("read_csv: expected 7 fields, got " + std::to_string(idx), line_no);
    auto parse_int = [&](const std::string& s) {
      std::size_t pos = 0;
      std::int64_t v;
      try {
        v = std::stoll(s, &pos);
      } catch (const std::exception&) {
        throw ParseError("read_csv: bad integer '" + s + "'", line_no);
      }
      if (pos != s.size()) throw ParseError("read_csv: bad integer '" + s + "'", line_no);
      return v;
    };
    Sample s;
    s.workload.m = parse_int(field[0]);
    s.workload.n = parse_int(field[1]);
    s.workload.k = parse_int(field[2]);
    try {
      s.workload.dataflow = dataflow_from_string(field[3]);
      validate(s.workload);
    } catch (const RangeError& e) {
      throw ParseError(std::string("read_csv: ") + e.what(), line_no);
    }
    s.opt.pe = parse_int(field[4]);
    s.opt.buf = parse_int(field[5]);
    s.opt_latency = parse_int(field[6]);
    if (s.opt_latency < 1) throw ParseError("read_csv: latency must be >= 1", line_no);
    d.samples.push_back(s);
  }
  if (d.samples.empty()) throw ParseError("read_csv: no samples after header", line_no);

  std::ifstream min(manifest_path_for(path), std::ios::binary);
  if (!min) throw FormatError("read_csv: missing manifest sidecar for '" + path + "'");
  std::stringstream ss;
  ss << min.rdbuf();
  d.manifest = manifest_from_json(ss.str());

  if (d.manifest.count != static_cast<std::int64_t>(d.samples.size()))
    throw FormatError("read_csv: manifest count " + std::to_string(d.manifest.count) +
                      " != sample count " + std::to_string(d.samples.size()));
  Dataset check = d;
  recompute_stats(check);
  if (std::abs(check.manifest.log_latency_mean - d.manifest.log_latency_mean) > 1e-9 ||
      std::abs(check.manifest.log_latency_std - d.manifest.log_latency_std) > 1e-9)
    throw FormatError("read_csv: manifest statistics inconsistent with samples");
  return d;
}

}  // namespace dsekit
