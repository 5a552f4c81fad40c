#include "dsekit/deploy.hpp"

#include <fstream>

namespace dsekit {

ModelWorkload load_model_workload(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("load_model_workload: cannot open '" + path + "'");
  ModelWorkload mw;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string tag = "#name:";
      if (line.rfind(tag, 0) == 0) {
        std::string name = line.substr(tag.size());
        while (!name.empty() && name.front() == ' ') name.erase(name.begin());
        mw.name = name;
      }
      continue;
    }
    std::vector<std::string> field;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        field.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    if (field.size() != 4)
      throw ParseError("load_model_workload: expected m,n,k,dataflow, got " +
                       std::to_string(field.size()) + " fields", line_no);
    auto parse_int = [&](const std::string& s) {
      std::size_t pos = 0;
      std::int64_t v;
      try {
        v = std::stoll(s, &pos);
      } catch (const std::exception&) {
        throw ParseError("load_model_workload: bad integer '" + s + "'", line_no);
      }
      if (pos != s.size())
        throw ParseError("load_model_workload: bad integer '" + s + "'", line_no);
      return v;
    };
    Workload w;
    w.m = parse_int(field[0]);
    w.n = parse_int(field[1]);
    w.k = parse_int(field[2]);
    w.dataflow = dataflow_from_string(field[3]);
    validate(w);  // RangeError names the offending field
    mw.layers.push_back(w);
  }
  if (mw.layers.empty()) throw ParseError("load_model_workload: no layers", line_no);
  return mw;
}

std::int64_t model_latency(const ModelWorkload& mw, const HardwareConfig& cfg,
                           const CostParams& p) {
  std::int64_t total = 0;
  for (const Workload& w : mw.layers) total += latency(w, cfg, p);
  return total;
}

HardwareConfig method1(const ModelWorkload& mw, const std::vector<HardwareConfig>& recs,
                       const DesignSpace& space, const CostParams& p) {
  if (recs.empty()) throw ContractError("method1: empty recommendation set");
  bool found = false;
  HardwareConfig best;
  std::int64_t best_total = 0, best_area = 0;
  std::vector<HardwareConfig> seen;
  for (const HardwareConfig& hw : recs) {
    bool dup = false;
    for (const HardwareConfig& s : seen) dup = dup || s == hw;
    if (dup) continue;
    seen.push_back(hw);
    const std::int64_t total = model_latency(mw, hw, p);
    const std::int64_t a = area(hw, space);
    if (!found || total < best_total ||
        (total == best_total && (a < best_area || (a == best_area && hw.pe < best.pe)))) {
      found = true;
      best = hw;
      best_total = total;
      best_area = a;
    }
  }
  return best;
}

HardwareConfig method2(const ModelWorkload& mw, const std::vector<HardwareConfig>& recs,
                       const CostParams& p) {
  if (recs.size() != mw.layers.size())
    throw ContractError("method2: one recommendation per layer required");
  std::size_t bottleneck = 0;
  std::int64_t worst = -1;
  for (std::size_t i = 0; i < mw.layers.size(); ++i) {
    const std::int64_t lat = latency(mw.layers[i], recs[i], p);
    if (lat > worst) {  // ties keep the earliest layer
      worst = lat;
      bottleneck = i;
    }
  }
  return recs[bottleneck];
}

}  // namespace dsekit
