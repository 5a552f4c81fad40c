#include "dsekit/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "dsekit/rng.hpp"

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace dsekit {

std::string Tensor::shape_str() const {
  std::string s = "(";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape_[i]);
  }
  return s + ")";
}

void set_tensor_threads(int n) {
#if defined(_OPENMP)
  if (n >= 1) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

namespace {

constexpr std::int64_t kParallelFlops = 200000;
constexpr std::int64_t kParallelElems = 32768;

// C += A*B with A r x k, B k x c. Row-blocked saxpy: the inner j-loop
// vectorizes, and four output rows share each B load. Each output row is
// produced by exactly one thread in a fixed order, so results are
// bit-identical for any thread count.
void mm_acc(const double* A, const double* B, double* C, int r, int k, int c) {
  const bool par = static_cast<std::int64_t>(r) * k * c > kParallelFlops;
  const int r4 = r - r % 4;
#pragma omp parallel for schedule(static) if (par)
  for (int i = 0; i < r4; i += 4) {
    const double* a0 = A + static_cast<std::size_t>(i) * k;
    const double* a1 = a0 + k;
    const double* a2 = a1 + k;
    const double* a3 = a2 + k;
    double* o0 = C + static_cast<std::size_t>(i) * c;
    double* o1 = o0 + c;
    double* o2 = o1 + c;
    double* o3 = o2 + c;
    for (int kk = 0; kk < k; ++kk) {
      const double v0 = a0[kk], v1 = a1[kk], v2 = a2[kk], v3 = a3[kk];
      const double* b = B + static_cast<std::size_t>(kk) * c;
      for (int j = 0; j < c; ++j) {
        const double bj = b[j];
        o0[j] += v0 * bj;
        o1[j] += v1 * bj;
        o2[j] += v2 * bj;
        o3[j] += v3 * bj;
      }
    }
  }
  for (int i = r4; i < r; ++i) {
    const double* a = A + static_cast<std::size_t>(i) * k;
    double* out = C + static_cast<std::size_t>(i) * c;
    for (int kk = 0; kk < k; ++kk) {
      const double av = a[kk];
      const double* b = B + static_cast<std::size_t>(kk) * c;
      for (int j = 0; j < c; ++j) out[j] += av * b[j];
    }
  }
}

// C += A*B^T with A r x c0, B s x c0 -> C r x s. B is transposed into
// scratch so the hot loop is the vectorizable saxpy form instead of a
// serial dot-product reduction.
void mm_nt_acc(const double* A, const double* B, double* C, int r, int c0, int s) {
  static thread_local std::vector<double> scratch;
  scratch.resize(static_cast<std::size_t>(c0) * s);
  double* Bt = scratch.data();
  constexpr int kBlock = 32;
  for (int j0 = 0; j0 < s; j0 += kBlock)
    for (int k0 = 0; k0 < c0; k0 += kBlock) {
      const int j1 = std::min(s, j0 + kBlock), k1 = std::min(c0, k0 + kBlock);
      for (int j = j0; j < j1; ++j)
        for (int kk = k0; kk < k1; ++kk)
          Bt[static_cast<std::size_t>(kk) * s + j] = B[static_cast<std::size_t>(j) * c0 + kk];
    }
  mm_acc(A, Bt, C, r, c0, s);
}

// C += A^T*B with A r x k, B r x c -> C k x c. A is transposed into scratch
// first; the strided walk would otherwise miss cache on every element.
void mm_tn_acc(const double* A, const double* B, double* C, int r, int k, int c) {
  static thread_local std::vector<double> scratch;
  scratch.resize(static_cast<std::size_t>(r) * k);
  double* At = scratch.data();
  constexpr int kBlock = 32;
  for (int i0 = 0; i0 < r; i0 += kBlock)
    for (int k0 = 0; k0 < k; k0 += kBlock) {
      const int i1 = std::min(r, i0 + kBlock), k1 = std::min(k, k0 + kBlock);
      for (int i = i0; i < i1; ++i)
        for (int kk = k0; kk < k1; ++kk)
          At[static_cast<std::size_t>(kk) * r + i] = A[static_cast<std::size_t>(i) * k + kk];
    }
  mm_acc(At, B, C, k, r, c);
}

}  // namespace

// Lazy check: the message expression is only evaluated on failure (shape
// strings are expensive to build in hot paths).
#define DSEKIT_REQUIRE(cond, msg) \
  do {                            \
    if (!(cond)) throw ContractError(msg); \
  } while (0)

Tape::Var Tape::push(Node n) {
  if (backward_done_)
    throw ContractError("Tape: recording after backward(); reset() first");
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1, gen_};
}

Tape::Node& Tape::node(Var v) {
  if (v.gen != gen_ || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw ContractError("Tape: stale or foreign Var");
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::cnode(Var v) const {
  if (v.gen != gen_ || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw ContractError("Tape: stale or foreign Var");
  return nodes_[static_cast<std::size_t>(v.id)];
}

Tape::Var Tape::leaf(const Tensor& t) {
  Node n;
  n.op = Op::kLeaf;
  n.requires_grad = true;
  n.value = t;
  return push(std::move(n));
}

Tape::Var Tape::constant(Tensor t) {
  Node n;
  n.op = Op::kConst;
  n.requires_grad = false;
  n.value = std::move(t);
  return push(std::move(n));
}

const Tensor& Tape::value(Var v) const { return cnode(v).value; }

Tensor& Tape::ensure_grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

const Tensor& Tape::grad(Var leaf) const {
  const Node& n = cnode(leaf);
  if (!backward_done_) throw ContractError("Tape: grad() before backward()");
  if (!n.has_grad) throw ContractError("Tape: no gradient recorded for this Var");
  return n.grad;
}

void Tape::reset() {
  nodes_.clear();
  backward_done_ = false;
  ++gen_;
}

// ---------------------------------------------------------------------------
// ops

Tape::Var Tape::matmul(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  DSEKIT_REQUIRE(na.value.ndim() == 2 && nb.value.ndim() == 2 &&
              na.value.shape()[1] == nb.value.shape()[0],
          "matmul: shape mismatch " + na.value.shape_str() + " @ " + nb.value.shape_str());
  Node n;
  n.op = Op::kMatMul;
  n.in = {a.id, b.id};
  n.requires_grad = na.requires_grad || nb.requires_grad;
  n.value = Tensor({na.value.shape()[0], nb.value.shape()[1]});
  mm_acc(na.value.data(), nb.value.data(), n.value.data(), na.value.shape()[0],
         na.value.shape()[1], nb.value.shape()[1]);
  return push(std::move(n));
}

Tape::Var Tape::matmul_nt(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  DSEKIT_REQUIRE(na.value.ndim() == 2 && nb.value.ndim() == 2 &&
              na.value.shape()[1] == nb.value.shape()[1],
          "matmul_nt: shape mismatch " + na.value.shape_str() + " @ " +
              nb.value.shape_str() + "^T");
  Node n;
  n.op = Op::kMatMulNT;
  n.in = {a.id, b.id};
  n.requires_grad = na.requires_grad || nb.requires_grad;
  n.value = Tensor({na.value.shape()[0], nb.value.shape()[0]});
  mm_nt_acc(na.value.data(), nb.value.data(), n.value.data(), na.value.shape()[0],
            na.value.shape()[1], nb.value.shape()[0]);
  return push(std::move(n));
}

Tape::Var Tape::block_matmul_nt(Var a, Var b, int block) {
  const Node& na = node(a);
  const Node& nb = node(b);
  DSEKIT_REQUIRE(na.value.ndim() == 2 && na.value.same_shape(nb.value) &&
              na.value.shape()[0] % block == 0,
          "block_matmul_nt: bad shapes " + na.value.shape_str() + ", " + nb.value.shape_str());
  const int rows = na.value.shape()[0], c = na.value.shape()[1];
  const int groups = rows / block;
  Node n;
  n.op = Op::kBlockMatMulNT;
  n.in = {a.id, b.id};
  n.i0 = block;
  n.requires_grad = na.requires_grad || nb.requires_grad;
  n.value = Tensor({rows, block});
  const double* A = na.value.data();
  const double* B = nb.value.data();
  double* O = n.value.data();
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(rows) * block * c > kParallelFlops)
  for (int g = 0; g < groups; ++g) {
    for (int i = 0; i < block; ++i) {
      const double* arow = A + static_cast<std::size_t>(g * block + i) * c;
      double* orow = O + static_cast<std::size_t>(g * block + i) * block;
      for (int j = 0; j < block; ++j) {
        const double* brow = B + static_cast<std::size_t>(g * block + j) * c;
        double acc = 0;
        for (int kk = 0; kk < c; ++kk) acc += arow[kk] * brow[kk];
        orow[j] = acc;
      }
    }
  }
  return push(std::move(n));
}

Tape::Var Tape::block_matmul_nn(Var s, Var v, int block) {
  const Node& ns = node(s);
  const Node& nv = node(v);
  DSEKIT_REQUIRE(ns.value.ndim() == 2 && nv.value.ndim() == 2 && ns.value.shape()[1] == block &&
              ns.value.shape()[0] == nv.value.shape()[0] &&
              ns.value.shape()[0] % block == 0,
          "block_matmul_nn: bad shapes " + ns.value.shape_str() + ", " + nv.value.shape_str());
  const int rows = ns.value.shape()[0], c = nv.value.shape()[1];
  const int groups = rows / block;
  Node n;
  n.op = Op::kBlockMatMulNN;
  n.in = {s.id, v.id};
  n.i0 = block;
  n.requires_grad = ns.requires_grad || nv.requires_grad;
  n.value = Tensor({rows, c});
  const double* S = ns.value.data();
  const double* V = nv.value.data();
  double* O = n.value.data();
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(rows) * block * c > kParallelFlops)
  for (int g = 0; g < groups; ++g) {
    for (int i = 0; i < block; ++i) {
      const double* srow = S + static_cast<std::size_t>(g * block + i) * block;
      double* orow = O + static_cast<std::size_t>(g * block + i) * c;
      for (int j = 0; j < block; ++j) {
        const double sv = srow[j];
        const double* vrow = V + static_cast<std::size_t>(g * block + j) * c;
        for (int kk = 0; kk < c; ++kk) orow[kk] += sv * vrow[kk];
      }
    }
  }
  return push(std::move(n));
}

Tape::Var Tape::affine(Var x, Var w, Var bias) {
  const Node& nx = node(x);
  const Node& nw = node(w);
  const Node& nb = node(bias);
  DSEKIT_REQUIRE(nx.value.ndim() == 2 && nw.value.ndim() == 2 &&
                     nx.value.shape()[1] == nw.value.shape()[0] &&
                     nb.value.size() == nw.value.shape()[1],
                 "affine: shape mismatch " + nx.value.shape_str() + " @ " +
                     nw.value.shape_str());
  const int r = nx.value.shape()[0], k = nx.value.shape()[1], c = nw.value.shape()[1];
  Node n;
  n.op = Op::kAffine;
  n.in = {x.id, w.id, bias.id};
  n.requires_grad = nx.requires_grad || nw.requires_grad || nb.requires_grad;
  n.value = Tensor({r, c});
  double* o = n.value.data();
  const double* b = nb.value.data();
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(r) * c >= kParallelElems)
  for (int i = 0; i < r; ++i)
    std::copy(b, b + c, o + static_cast<std::size_t>(i) * c);
  mm_acc(nx.value.data(), nw.value.data(), o, r, k, c);
  return push(std::move(n));
}

Tape::Var Tape::mha(Var q, Var k, Var v, int n_heads, int block) {
  const Node& nq = node(q);
  const Node& nk = node(k);
  const Node& nv = node(v);
  DSEKIT_REQUIRE(nq.value.ndim() == 2 && nq.value.same_shape(nk.value) &&
                     nq.value.same_shape(nv.value),
                 "mha: q/k/v shapes must match");
  const int rows = nq.value.shape()[0], d = nq.value.shape()[1];
  DSEKIT_REQUIRE(n_heads >= 1 && d % n_heads == 0 && block >= 1 && rows % block == 0,
                 "mha: bad head or block structure");
  const int dh = d / n_heads;
  const int groups = rows / block;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Node n;
  n.op = Op::kMha;
  n.in = {q.id, k.id, v.id};
  n.i0 = n_heads;
  n.i1 = block;
  n.value = Tensor({rows, d});
  n.requires_grad = nq.requires_grad || nk.requires_grad || nv.requires_grad;
  // saved softmax weights: groups x heads x block x block
  n.aux.assign(static_cast<std::size_t>(groups) * n_heads * block * block, 0.0);
  const double* Q = nq.value.data();
  const double* K = nk.value.data();
  const double* V = nv.value.data();
  double* O = n.value.data();
  double* W = n.aux.data();
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(rows) * d * block >= kParallelFlops)
  for (int g = 0; g < groups; ++g) {
    for (int h = 0; h < n_heads; ++h) {
      double* w = W + ((static_cast<std::size_t>(g) * n_heads + h) * block) * block;
      const int off = h * dh;
      for (int i = 0; i < block; ++i) {
        const double* qi = Q + static_cast<std::size_t>(g * block + i) * d + off;
        double* wr = w + static_cast<std::size_t>(i) * block;
        double mx = 0;
        for (int j = 0; j < block; ++j) {
          const double* kj = K + static_cast<std::size_t>(g * block + j) * d + off;
          double acc = 0;
          for (int t = 0; t < dh; ++t) acc += qi[t] * kj[t];
          wr[j] = acc * scale;
          mx = j == 0 ? wr[j] : std::max(mx, wr[j]);
        }
        double sum = 0;
        for (int j = 0; j < block; ++j) {
          wr[j] = std::exp(wr[j] - mx);
          sum += wr[j];
        }
        const double inv = 1.0 / sum;
        double* oi = O + static_cast<std::size_t>(g * block + i) * d + off;
        for (int j = 0; j < block; ++j) {
          wr[j] *= inv;
          const double* vj = V + static_cast<std::size_t>(g * block + j) * d + off;
          for (int t = 0; t < dh; ++t) oi[t] += wr[j] * vj[t];
        }
      }
    }
  }
  return push(std::move(n));
}

Tape::Var Tape::add(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  DSEKIT_REQUIRE(na.value.same_shape(nb.value),
          "add: shape mismatch " + na.value.shape_str() + " vs " + nb.value.shape_str());
  Node n;
  n.op = Op::kAdd;
  n.in = {a.id, b.id};
  n.requires_grad = na.requires_grad || nb.requires_grad;
  n.value = na.value;
  double* o = n.value.data();
  const double* pb = nb.value.data();
  const std::int64_t count = n.value.size();
#pragma omp parallel for schedule(static) if (count >= kParallelElems)
  for (std::int64_t i = 0; i < count; ++i) o[i] += pb[i];
  return push(std::move(n));
}

Tape::Var Tape::sub(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  DSEKIT_REQUIRE(na.value.same_shape(nb.value),
          "sub: shape mismatch " + na.value.shape_str() + " vs " + nb.value.shape_str());
  Node n;
  n.op = Op::kSub;
  n.in = {a.id, b.id};
  n.requires_grad = na.requires_grad || nb.requires_grad;
  n.value = na.value;
  double* o = n.value.data();
  const double* pb = nb.value.data();
  const std::int64_t count = n.value.size();
#pragma omp parallel for schedule(static) if (count >= kParallelElems)
  for (std::int64_t i = 0; i < count; ++i) o[i] -= pb[i];
  return push(std::move(n));
}

Tape::Var Tape::mul(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  DSEKIT_REQUIRE(na.value.same_shape(nb.value),
          "mul: shape mismatch " + na.value.shape_str() + " vs " + nb.value.shape_str());
  Node n;
  n.op = Op::kMul;
  n.in = {a.id, b.id};
  n.requires_grad = na.requires_grad || nb.requires_grad;
  n.value = na.value;
  double* o = n.value.data();
  const double* pb = nb.value.data();
  const std::int64_t count = n.value.size();
#pragma omp parallel for schedule(static) if (count >= kParallelElems)
  for (std::int64_t i = 0; i < count; ++i) o[i] *= pb[i];
  return push(std::move(n));
}

Tape::Var Tape::scale(Var a, double c) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kScale;
  n.in = {a.id};
  n.p0 = c;
  n.requires_grad = na.requires_grad;
  n.value = na.value;
  double* o = n.value.data();
  const std::int64_t count = n.value.size();
#pragma omp parallel for schedule(static) if (count >= kParallelElems)
  for (std::int64_t i = 0; i < count; ++i) o[i] *= c;
  return push(std::move(n));
}

Tape::Var Tape::exp(Var a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kExp;
  n.in = {a.id};
  n.requires_grad = na.requires_grad;
  n.value = na.value;
  double* o = n.value.data();
  for (std::int64_t i = 0; i < n.value.size(); ++i) o[i] = std::exp(o[i]);
  return push(std::move(n));
}

Tape::Var Tape::log(Var a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kLog;
  n.in = {a.id};
  n.requires_grad = na.requires_grad;
  n.value = na.value;
  double* o = n.value.data();
  for (std::int64_t i = 0; i < n.value.size(); ++i) {
    if (!(o[i] > 0)) throw RangeError("log: non-positive input " + std::to_string(o[i]));
    o[i] = std::log(o[i]);
  }
  return push(std::move(n));
}

Tape::Var Tape::sigmoid(Var a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kSigmoid;
  n.in = {a.id};
  n.requires_grad = na.requires_grad;
  n.value = na.value;
  double* o = n.value.data();
  const std::int64_t count = n.value.size();
#pragma omp parallel for schedule(static) if (count >= kParallelElems)
  for (std::int64_t i = 0; i < count; ++i) {
    const double x = o[i];
    o[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return push(std::move(n));
}

Tape::Var Tape::abs(Var a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kAbs;
  n.in = {a.id};
  n.requires_grad = na.requires_grad;
  n.value = na.value;
  double* o = n.value.data();
  for (std::int64_t i = 0; i < n.value.size(); ++i) o[i] = std::abs(o[i]);
  return push(std::move(n));
}

Tape::Var Tape::relu(Var a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kRelu;
  n.in = {a.id};
  n.requires_grad = na.requires_grad;
  n.value = na.value;
  double* o = n.value.data();
  const std::int64_t count = n.value.size();
#pragma omp parallel for schedule(static) if (count >= kParallelElems)
  for (std::int64_t i = 0; i < count; ++i) o[i] = o[i] > 0 ? o[i] : 0.0;
  return push(std::move(n));
}

Tape::Var Tape::pow_const(Var a, double p) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kPowConst;
  n.in = {a.id};
  n.p0 = p;
  n.requires_grad = na.requires_grad;
  n.value = na.value;
  double* o = n.value.data();
  for (std::int64_t i = 0; i < n.value.size(); ++i) {
    if (o[i] < 0) throw RangeError("pow_const: negative base");
    if (p == 0.0)
      o[i] = 1.0;
    else if (p != 1.0)
      o[i] = std::pow(o[i], p);
  }
  return push(std::move(n));
}

Tape::Var Tape::clamp(Var a, double lo, double hi) {
  const Node& na = node(a);
  DSEKIT_REQUIRE(lo < hi, "clamp: lo must be < hi");
  Node n;
  n.op = Op::kClamp;
  n.in = {a.id};
  n.p0 = lo;
  n.p1 = hi;
  n.requires_grad = na.requires_grad;
  n.value = na.value;
  double* o = n.value.data();
  for (std::int64_t i = 0; i < n.value.size(); ++i) o[i] = std::clamp(o[i], lo, hi);
  return push(std::move(n));
}

Tape::Var Tape::softmax_rows(Var a) {
  const Node& na = node(a);
  DSEKIT_REQUIRE(na.value.ndim() == 2, "softmax_rows: expected 2-D, got " + na.value.shape_str());
  Node n;
  n.op = Op::kSoftmaxRows;
  n.in = {a.id};
  n.requires_grad = na.requires_grad;
  n.value = na.value;
  const int r = n.value.shape()[0], c = n.value.shape()[1];
  double* o = n.value.data();
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(r) * c >= kParallelElems)
  for (int i = 0; i < r; ++i) {
    double* row = o + static_cast<std::size_t>(i) * c;
    double m = row[0];
    for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
    double sum = 0;
    for (int j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - m);
      sum += row[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < c; ++j) row[j] *= inv;
  }
  return push(std::move(n));
}

Tape::Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  const Node& nx = node(x);
  const Node& ng = node(gain);
  const Node& nb = node(bias);
  DSEKIT_REQUIRE(eps > 0, "layer_norm: eps must be > 0");
  DSEKIT_REQUIRE(nx.value.ndim() == 2, "layer_norm: expected 2-D input, got " + nx.value.shape_str());
  const int r = nx.value.shape()[0], c = nx.value.shape()[1];
  DSEKIT_REQUIRE(ng.value.size() == c && nb.value.size() == c,
          "layer_norm: gain/bias must have length " + std::to_string(c));
  Node n;
  n.op = Op::kLayerNorm;
  n.in = {x.id, gain.id, bias.id};
  n.p0 = eps;
  n.requires_grad = nx.requires_grad || ng.requires_grad || nb.requires_grad;
  n.value = Tensor({r, c});
  n.aux.resize(2 * static_cast<std::size_t>(r));  // per-row mean, inv std
  const double* in = nx.value.data();
  const double* g = ng.value.data();
  const double* b = nb.value.data();
  double* o = n.value.data();
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(r) * c >= kParallelElems)
  for (int i = 0; i < r; ++i) {
    const double* row = in + static_cast<std::size_t>(i) * c;
    double mean = 0;
    for (int j = 0; j < c; ++j) mean += row[j];
    mean /= c;
    double var = 0;
    for (int j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= c;
    const double inv = 1.0 / std::sqrt(var + eps);
    n.aux[2 * static_cast<std::size_t>(i)] = mean;
    n.aux[2 * static_cast<std::size_t>(i) + 1] = inv;
    double* orow = o + static_cast<std::size_t>(i) * c;
    for (int j = 0; j < c; ++j) orow[j] = (row[j] - mean) * inv * g[j] + b[j];
  }
  return push(std::move(n));
}

Tape::Var Tape::reduce_mean(Var a, int axis) {
  const Node& na = node(a);
  DSEKIT_REQUIRE(na.value.ndim() == 2 && (axis == 0 || axis == 1),
          "reduce_mean: expected 2-D input and axis 0 or 1");
  const int r = na.value.shape()[0], c = na.value.shape()[1];
  Node n;
  n.op = Op::kReduceMean;
  n.in = {a.id};
  n.i0 = axis;
  n.requires_grad = na.requires_grad;
  n.value = axis == 0 ? Tensor({1, c}) : Tensor({r, 1});
  const double* in = na.value.data();
  double* o = n.value.data();
  if (axis == 0) {
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) o[j] += in[static_cast<std::size_t>(i) * c + j];
    for (int j = 0; j < c; ++j) o[j] /= r;
  } else {
    for (int i = 0; i < r; ++i) {
      double s = 0;
      for (int j = 0; j < c; ++j) s += in[static_cast<std::size_t>(i) * c + j];
      o[i] = s / c;
    }
  }
  return push(std::move(n));
}

Tape::Var Tape::reduce_sum(Var a, int axis) {
  const Node& na = node(a);
  DSEKIT_REQUIRE(na.value.ndim() == 2 && (axis == 0 || axis == 1),
          "reduce_sum: expected 2-D input and axis 0 or 1");
  const int r = na.value.shape()[0], c = na.value.shape()[1];
  Node n;
  n.op = Op::kReduceSum;
  n.in = {a.id};
  n.i0 = axis;
  n.requires_grad = na.requires_grad;
  n.value = axis == 0 ? Tensor({1, c}) : Tensor({r, 1});
  const double* in = na.value.data();
  double* o = n.value.data();
  if (axis == 0) {
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) o[j] += in[static_cast<std::size_t>(i) * c + j];
  } else {
    for (int i = 0; i < r; ++i) {
      double s = 0;
      for (int j = 0; j < c; ++j) s += in[static_cast<std::size_t>(i) * c + j];
      o[i] = s;
    }
  }
  return push(std::move(n));
}

Tape::Var Tape::block_mean_rows(Var a, int block) {
  const Node& na = node(a);
  DSEKIT_REQUIRE(na.value.ndim() == 2 && block >= 1 && na.value.shape()[0] % block == 0,
          "block_mean_rows: rows must divide by block");
  const int r = na.value.shape()[0], c = na.value.shape()[1];
  const int groups = r / block;
  Node n;
  n.op = Op::kBlockMeanRows;
  n.in = {a.id};
  n.i0 = block;
  n.requires_grad = na.requires_grad;
  n.value = Tensor({groups, c});
  const double* in = na.value.data();
  double* o = n.value.data();
  for (int g = 0; g < groups; ++g) {
    double* orow = o + static_cast<std::size_t>(g) * c;
    for (int i = 0; i < block; ++i) {
      const double* row = in + static_cast<std::size_t>(g * block + i) * c;
      for (int j = 0; j < c; ++j) orow[j] += row[j];
    }
    for (int j = 0; j < c; ++j) orow[j] /= block;
  }
  return push(std::move(n));
}

Tape::Var Tape::reshape(Var a, std::vector<int> shape) {
  const Node& na = node(a);
  Tensor t(std::move(shape));
  DSEKIT_REQUIRE(t.size() == na.value.size(),
          "reshape: size mismatch " + na.value.shape_str() + " -> " + t.shape_str());
  Node n;
  n.op = Op::kReshape;
  n.in = {a.id};
  n.requires_grad = na.requires_grad;
  n.value = Tensor(t.shape(), std::vector<double>(na.value.data(),
                                                  na.value.data() + na.value.size()));
  return push(std::move(n));
}

Tape::Var Tape::slice_cols(Var a, int off, int len) {
  const Node& na = node(a);
  DSEKIT_REQUIRE(na.value.ndim() == 2 && off >= 0 && len >= 1 && off + len <= na.value.shape()[1],
          "slice_cols: bad range");
  const int r = na.value.shape()[0], c = na.value.shape()[1];
  Node n;
  n.op = Op::kSliceCols;
  n.in = {a.id};
  n.i0 = off;
  n.i1 = len;
  n.requires_grad = na.requires_grad;
  n.value = Tensor({r, len});
  const double* in = na.value.data();
  double* o = n.value.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < len; ++j)
      o[static_cast<std::size_t>(i) * len + j] = in[static_cast<std::size_t>(i) * c + off + j];
  return push(std::move(n));
}

Tape::Var Tape::concat_cols(const std::vector<Var>& xs) {
  DSEKIT_REQUIRE(!xs.empty(), "concat_cols: empty input list");
  int r = -1, total = 0;
  bool rg = false;
  for (Var v : xs) {
    const Node& nv = node(v);
    DSEKIT_REQUIRE(nv.value.ndim() == 2, "concat_cols: expected 2-D inputs");
    if (r < 0) r = nv.value.shape()[0];
    DSEKIT_REQUIRE(nv.value.shape()[0] == r, "concat_cols: row mismatch");
    total += nv.value.shape()[1];
    rg = rg || nv.requires_grad;
  }
  Node n;
  n.op = Op::kConcatCols;
  for (Var v : xs) n.in.push_back(v.id);
  n.requires_grad = rg;
  n.value = Tensor({r, total});
  double* o = n.value.data();
  int off = 0;
  for (Var v : xs) {
    const Node& nv = node(v);
    const int c = nv.value.shape()[1];
    const double* in = nv.value.data();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        o[static_cast<std::size_t>(i) * total + off + j] =
            in[static_cast<std::size_t>(i) * c + j];
    off += c;
  }
  return push(std::move(n));
}

Tape::Var Tape::slice_rows(Var a, int off, int len) {
  const Node& na = node(a);
  DSEKIT_REQUIRE(na.value.ndim() == 2 && off >= 0 && len >= 1 && off + len <= na.value.shape()[0],
          "slice_rows: bad range");
  const int c = na.value.shape()[1];
  Node n;
  n.op = Op::kSliceRows;
  n.in = {a.id};
  n.i0 = off;
  n.i1 = len;
  n.requires_grad = na.requires_grad;
  n.value = Tensor({len, c},
                   std::vector<double>(na.value.data() + static_cast<std::size_t>(off) * c,
                                       na.value.data() + static_cast<std::size_t>(off + len) * c));
  return push(std::move(n));
}

Tape::Var Tape::interleave_rows(const std::vector<Var>& xs) {
  DSEKIT_REQUIRE(!xs.empty(), "interleave_rows: empty input list");
  const Node& first = node(xs[0]);
  DSEKIT_REQUIRE(first.value.ndim() == 2, "interleave_rows: expected 2-D inputs");
  const int r = first.value.shape()[0], c = first.value.shape()[1];
  bool rg = false;
  for (Var v : xs) {
    const Node& nv = node(v);
    DSEKIT_REQUIRE(nv.value.same_shape(first.value), "interleave_rows: shape mismatch");
    rg = rg || nv.requires_grad;
  }
  const int nstreams = static_cast<int>(xs.size());
  Node n;
  n.op = Op::kInterleaveRows;
  for (Var v : xs) n.in.push_back(v.id);
  n.requires_grad = rg;
  n.value = Tensor({r * nstreams, c});
  double* o = n.value.data();
  for (int j = 0; j < nstreams; ++j) {
    const double* in = node(xs[static_cast<std::size_t>(j)]).value.data();
    for (int i = 0; i < r; ++i)
      std::copy(in + static_cast<std::size_t>(i) * c, in + static_cast<std::size_t>(i + 1) * c,
                o + static_cast<std::size_t>(i * nstreams + j) * c);
  }
  return push(std::move(n));
}

Tape::Var Tape::broadcast_add_row(Var x, Var row) {
  const Node& nx = node(x);
  const Node& nr = node(row);
  DSEKIT_REQUIRE(nx.value.ndim() == 2 && nr.value.size() == nx.value.shape()[1],
          "broadcast_add_row: row length must equal column count");
  const int r = nx.value.shape()[0], c = nx.value.shape()[1];
  Node n;
  n.op = Op::kBroadcastAddRow;
  n.in = {x.id, row.id};
  n.requires_grad = nx.requires_grad || nr.requires_grad;
  n.value = nx.value;
  double* o = n.value.data();
  const double* v = nr.value.data();
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(r) * c >= kParallelElems)
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) o[static_cast<std::size_t>(i) * c + j] += v[j];
  return push(std::move(n));
}

Tape::Var Tape::tile_rows_add(Var x, Var table) {
  const Node& nx = node(x);
  const Node& nt = node(table);
  DSEKIT_REQUIRE(nx.value.ndim() == 2 && nt.value.ndim() == 2 &&
              nx.value.shape()[1] == nt.value.shape()[1] &&
              nx.value.shape()[0] % nt.value.shape()[0] == 0,
          "tile_rows_add: table rows must divide input rows");
  const int r = nx.value.shape()[0], c = nx.value.shape()[1];
  const int period = nt.value.shape()[0];
  Node n;
  n.op = Op::kTileRowsAdd;
  n.in = {x.id, table.id};
  n.requires_grad = nx.requires_grad || nt.requires_grad;
  n.value = nx.value;
  double* o = n.value.data();
  const double* t = nt.value.data();
  for (int i = 0; i < r; ++i) {
    const double* trow = t + static_cast<std::size_t>(i % period) * c;
    for (int j = 0; j < c; ++j) o[static_cast<std::size_t>(i) * c + j] += trow[j];
  }
  return push(std::move(n));
}

Tape::Var Tape::outer(Var col, Var row) {
  const Node& nc = node(col);
  const Node& nr = node(row);
  DSEKIT_REQUIRE(nc.value.ndim() == 1 && nr.value.ndim() == 1, "outer: expected 1-D inputs");
  const int r = nc.value.shape()[0], c = nr.value.shape()[0];
  Node n;
  n.op = Op::kOuter;
  n.in = {col.id, row.id};
  n.requires_grad = nc.requires_grad || nr.requires_grad;
  n.value = Tensor({r, c});
  double* o = n.value.data();
  for (int i = 0; i < r; ++i) {
    const double u = nc.value[static_cast<std::size_t>(i)];
    for (int j = 0; j < c; ++j)
      o[static_cast<std::size_t>(i) * c + j] = u * nr.value[static_cast<std::size_t>(j)];
  }
  return push(std::move(n));
}

Tape::Var Tape::embed_lookup(Var table, std::vector<int> indices) {
  const Node& nt = node(table);
  DSEKIT_REQUIRE(nt.value.ndim() == 2, "embed_lookup: table must be 2-D");
  const int vocab = nt.value.shape()[0], c = nt.value.shape()[1];
  for (int ix : indices)
    DSEKIT_REQUIRE(ix >= 0 && ix < vocab, "embed_lookup: index out of range");
  Node n;
  n.op = Op::kEmbedLookup;
  n.in = {table.id};
  n.requires_grad = nt.requires_grad;
  n.idx = std::move(indices);
  n.value = Tensor({static_cast<int>(n.idx.size()), c});
  double* o = n.value.data();
  for (std::size_t i = 0; i < n.idx.size(); ++i)
    std::copy(nt.value.data() + static_cast<std::size_t>(n.idx[i]) * c,
              nt.value.data() + static_cast<std::size_t>(n.idx[i] + 1) * c, o + i * c);
  return push(std::move(n));
}

Tape::Var Tape::l2_normalize_rows(Var x) {
  const Node& nx = node(x);
  DSEKIT_REQUIRE(nx.value.ndim() == 2, "l2_normalize_rows: expected 2-D input");
  const int r = nx.value.shape()[0], c = nx.value.shape()[1];
  Node n;
  n.op = Op::kL2NormalizeRows;
  n.in = {x.id};
  n.requires_grad = nx.requires_grad;
  n.value = nx.value;
  n.aux.resize(static_cast<std::size_t>(r));
  double* o = n.value.data();
  for (int i = 0; i < r; ++i) {
    double* row = o + static_cast<std::size_t>(i) * c;
    double sq = 0;
    for (int j = 0; j < c; ++j) sq += row[j] * row[j];
    const double norm = std::max(std::sqrt(sq), 1e-30);
    n.aux[static_cast<std::size_t>(i)] = norm;
    for (int j = 0; j < c; ++j) row[j] /= norm;
  }
  return push(std::move(n));
}

Tape::Var Tape::masked_row_logsumexp(Var s, std::vector<std::uint8_t> mask) {
  const Node& ns = node(s);
  DSEKIT_REQUIRE(ns.value.ndim() == 2, "masked_row_logsumexp: expected 2-D input");
  const int r = ns.value.shape()[0], c = ns.value.shape()[1];
  DSEKIT_REQUIRE(static_cast<std::int64_t>(mask.size()) == ns.value.size(),
          "masked_row_logsumexp: mask size mismatch");
  Node n;
  n.op = Op::kMaskedRowLSE;
  n.in = {s.id};
  n.requires_grad = ns.requires_grad;
  n.mask = std::move(mask);
  n.value = Tensor({r, 1});
  const double* in = ns.value.data();
  for (int i = 0; i < r; ++i) {
    const double* row = in + static_cast<std::size_t>(i) * c;
    const std::uint8_t* m = n.mask.data() + static_cast<std::size_t>(i) * c;
    double mx = 0;
    bool any = false;
    for (int j = 0; j < c; ++j)
      if (m[j]) {
        mx = any ? std::max(mx, row[j]) : row[j];
        any = true;
      }
    if (!any) {
      n.value[static_cast<std::size_t>(i)] = 0;
      continue;
    }
    double sum = 0;
    for (int j = 0; j < c; ++j)
      if (m[j]) sum += std::exp(row[j] - mx);
    n.value[static_cast<std::size_t>(i)] = mx + std::log(sum);
  }
  return push(std::move(n));
}

Tape::Var Tape::sum_all(Var a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kSumAll;
  n.in = {a.id};
  n.requires_grad = na.requires_grad;
  double s = 0;
  const double* in = na.value.data();
  for (std::int64_t i = 0; i < na.value.size(); ++i) s += in[i];
  n.value = Tensor::scalar(s);
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// backward

void Tape::backward(Var loss) {
  Node& root = node(loss);
  if (backward_done_)
    throw ContractError("backward: already run on this tape; reset() first");
  if (root.value.size() != 1)
    throw ContractError("backward: loss must be scalar, got shape " + root.value.shape_str());
  if (!root.requires_grad)
    throw ContractError("backward: loss does not depend on any leaf");
  ensure_grad(loss.id)[0] = 1.0;
  // Zero grads for all leaves so unused ones read as zero.
  for (int id = 0; id < static_cast<int>(nodes_.size()); ++id)
    if (nodes_[static_cast<std::size_t>(id)].op == Op::kLeaf) ensure_grad(id);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad || n.op == Op::kLeaf || n.op == Op::kConst) continue;
    backprop(n);
  }
  backward_done_ = true;
}

void Tape::backprop(Node& n) {
  const double* g = n.grad.data();
  auto in_val = [&](int slot) -> const Tensor& {
    return nodes_[static_cast<std::size_t>(n.in[static_cast<std::size_t>(slot)])].value;
  };
  auto wants = [&](int slot) {
    return nodes_[static_cast<std::size_t>(n.in[static_cast<std::size_t>(slot)])].requires_grad;
  };
  auto gin = [&](int slot) -> Tensor& {
    return ensure_grad(n.in[static_cast<std::size_t>(slot)]);
  };

  switch (n.op) {
    case Op::kLeaf:
    case Op::kConst:
      return;
    case Op::kMatMul: {
      const Tensor& A = in_val(0);
      const Tensor& B = in_val(1);
      const int r = A.shape()[0], k = A.shape()[1], c = B.shape()[1];
      if (wants(0)) mm_nt_acc(g, B.data(), gin(0).data(), r, c, k);
      if (wants(1)) mm_tn_acc(A.data(), g, gin(1).data(), r, k, c);
      return;
    }
    case Op::kMatMulNT: {
      const Tensor& A = in_val(0);
      const Tensor& B = in_val(1);
      const int r = A.shape()[0], c0 = A.shape()[1], s = B.shape()[0];
      if (wants(0)) mm_acc(g, B.data(), gin(0).data(), r, s, c0);
      if (wants(1)) mm_tn_acc(g, A.data(), gin(1).data(), r, s, c0);
      return;
    }
    case Op::kBlockMatMulNT: {
      const Tensor& A = in_val(0);
      const Tensor& B = in_val(1);
      const int rows = A.shape()[0], c = A.shape()[1], block = n.i0;
      const int groups = rows / block;
      if (wants(0)) {
        double* da = gin(0).data();
        for (int gi = 0; gi < groups; ++gi)
          for (int i = 0; i < block; ++i) {
            double* row = da + static_cast<std::size_t>(gi * block + i) * c;
            const double* grow = g + static_cast<std::size_t>(gi * block + i) * block;
            for (int j = 0; j < block; ++j) {
              const double gv = grow[j];
              const double* brow = B.data() + static_cast<std::size_t>(gi * block + j) * c;
              for (int kk = 0; kk < c; ++kk) row[kk] += gv * brow[kk];
            }
          }
      }
      if (wants(1)) {
        double* db = gin(1).data();
        for (int gi = 0; gi < groups; ++gi)
          for (int j = 0; j < block; ++j) {
            double* row = db + static_cast<std::size_t>(gi * block + j) * c;
            for (int i = 0; i < block; ++i) {
              const double gv = g[static_cast<std::size_t>(gi * block + i) * block + j];
              const double* arow = A.data() + static_cast<std::size_t>(gi * block + i) * c;
              for (int kk = 0; kk < c; ++kk) row[kk] += gv * arow[kk];
            }
          }
      }
      return;
    }
    case Op::kBlockMatMulNN: {
      const Tensor& S = in_val(0);
      const Tensor& V = in_val(1);
      const int rows = S.shape()[0], block = n.i0, c = V.shape()[1];
      const int groups = rows / block;
      if (wants(0)) {
        double* ds = gin(0).data();
        for (int gi = 0; gi < groups; ++gi)
          for (int i = 0; i < block; ++i) {
            const double* grow = g + static_cast<std::size_t>(gi * block + i) * c;
            double* srow = ds + static_cast<std::size_t>(gi * block + i) * block;
            for (int j = 0; j < block; ++j) {
              const double* vrow = V.data() + static_cast<std::size_t>(gi * block + j) * c;
              double acc = 0;
              for (int kk = 0; kk < c; ++kk) acc += grow[kk] * vrow[kk];
              srow[j] += acc;
            }
          }
      }
      if (wants(1)) {
        double* dv = gin(1).data();
        for (int gi = 0; gi < groups; ++gi)
          for (int j = 0; j < block; ++j) {
            double* vrow = dv + static_cast<std::size_t>(gi * block + j) * c;
            for (int i = 0; i < block; ++i) {
              const double sv = S.data()[static_cast<std::size_t>(gi * block + i) * block + j];
              const double* grow = g + static_cast<std::size_t>(gi * block + i) * c;
              for (int kk = 0; kk < c; ++kk) vrow[kk] += sv * grow[kk];
            }
          }
      }
      return;
    }
    case Op::kAffine: {
      const Tensor& X = in_val(0);
      const Tensor& Wt = in_val(1);
      const int r = X.shape()[0], k = X.shape()[1], c = Wt.shape()[1];
      if (wants(0)) mm_nt_acc(g, Wt.data(), gin(0).data(), r, c, k);
      if (wants(1)) mm_tn_acc(X.data(), g, gin(1).data(), r, k, c);
      if (wants(2)) {
        double* db = gin(2).data();
        for (int i = 0; i < r; ++i) {
          const double* gr = g + static_cast<std::size_t>(i) * c;
          for (int j = 0; j < c; ++j) db[j] += gr[j];
        }
      }
      return;
    }
    case Op::kMha: {
      const Tensor& Q = in_val(0);
      const Tensor& K = in_val(1);
      const Tensor& V = in_val(2);
      const int rows = Q.shape()[0], d = Q.shape()[1];
      const int n_heads = n.i0, block = n.i1;
      const int dh = d / n_heads, groups = rows / block;
      const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
      double* dq = wants(0) ? gin(0).data() : nullptr;
      double* dk = wants(1) ? gin(1).data() : nullptr;
      double* dv = wants(2) ? gin(2).data() : nullptr;
      const double* W = n.aux.data();
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(rows) * d * block >= kParallelFlops)
      for (int gi = 0; gi < groups; ++gi) {
        std::vector<double> dw(static_cast<std::size_t>(block) * block);
        for (int h = 0; h < n_heads; ++h) {
          const int off = h * dh;
          const double* w = W + ((static_cast<std::size_t>(gi) * n_heads + h) * block) * block;
          for (int i = 0; i < block; ++i) {
            const double* go = g + static_cast<std::size_t>(gi * block + i) * d + off;
            double* dwr = dw.data() + static_cast<std::size_t>(i) * block;
            for (int j = 0; j < block; ++j) {
              const double* vj = V.data() + static_cast<std::size_t>(gi * block + j) * d + off;
              double acc = 0;
              for (int t = 0; t < dh; ++t) acc += go[t] * vj[t];
              dwr[j] = acc;
            }
          }
          if (dv) {
            for (int j = 0; j < block; ++j) {
              double* dvj = dv + static_cast<std::size_t>(gi * block + j) * d + off;
              for (int i = 0; i < block; ++i) {
                const double wij = w[static_cast<std::size_t>(i) * block + j];
                const double* go = g + static_cast<std::size_t>(gi * block + i) * d + off;
                for (int t = 0; t < dh; ++t) dvj[t] += wij * go[t];
              }
            }
          }
          if (dq || dk) {
            for (int i = 0; i < block; ++i) {
              const double* wr = w + static_cast<std::size_t>(i) * block;
              double* dwr = dw.data() + static_cast<std::size_t>(i) * block;
              double dot = 0;
              for (int j = 0; j < block; ++j) dot += dwr[j] * wr[j];
              for (int j = 0; j < block; ++j) {
                const double ds = wr[j] * (dwr[j] - dot) * scale;
                if (dq) {
                  double* dqi = dq + static_cast<std::size_t>(gi * block + i) * d + off;
                  const double* kj = K.data() + static_cast<std::size_t>(gi * block + j) * d + off;
                  for (int t = 0; t < dh; ++t) dqi[t] += ds * kj[t];
                }
                if (dk) {
                  double* dkj = dk + static_cast<std::size_t>(gi * block + j) * d + off;
                  const double* qi = Q.data() + static_cast<std::size_t>(gi * block + i) * d + off;
                  for (int t = 0; t < dh; ++t) dkj[t] += ds * qi[t];
                }
              }
            }
          }
        }
      }
      return;
    }
    case Op::kAdd: {
      for (int slot = 0; slot < 2; ++slot)
        if (wants(slot)) {
          double* d = gin(slot).data();
          const std::int64_t count = n.value.size();
#pragma omp parallel for schedule(static) if (count >= kParallelElems)
          for (std::int64_t i = 0; i < count; ++i) d[i] += g[i];
        }
      return;
    }
    case Op::kSub: {
      if (wants(0)) {
        double* d = gin(0).data();
        for (std::int64_t i = 0; i < n.value.size(); ++i) d[i] += g[i];
      }
      if (wants(1)) {
        double* d = gin(1).data();
        for (std::int64_t i = 0; i < n.value.size(); ++i) d[i] -= g[i];
      }
      return;
    }
    case Op::kMul: {
      const double* a = in_val(0).data();
      const double* b = in_val(1).data();
      const std::int64_t count = n.value.size();
      if (wants(0)) {
        double* d = gin(0).data();
#pragma omp parallel for schedule(static) if (count >= kParallelElems)
        for (std::int64_t i = 0; i < count; ++i) d[i] += g[i] * b[i];
      }
      if (wants(1)) {
        double* d = gin(1).data();
#pragma omp parallel for schedule(static) if (count >= kParallelElems)
        for (std::int64_t i = 0; i < count; ++i) d[i] += g[i] * a[i];
      }
      return;
    }
    case Op::kScale: {
      if (wants(0)) {
        double* d = gin(0).data();
        for (std::int64_t i = 0; i < n.value.size(); ++i) d[i] += g[i] * n.p0;
      }
      return;
    }
    case Op::kExp: {
      if (wants(0)) {
        double* d = gin(0).data();
        const double* y = n.value.data();
        for (std::int64_t i = 0; i < n.value.size(); ++i) d[i] += g[i] * y[i];
      }
      return;
    }
    case Op::kLog: {
      if (wants(0)) {
        double* d = gin(0).data();
        const double* x = in_val(0).data();
        for (std::int64_t i = 0; i < n.value.size(); ++i) d[i] += g[i] / x[i];
      }
      return;
    }
    case Op::kSigmoid: {
      if (wants(0)) {
        double* d = gin(0).data();
        const double* y = n.value.data();
        const std::int64_t count = n.value.size();
#pragma omp parallel for schedule(static) if (count >= kParallelElems)
        for (std::int64_t i = 0; i < count; ++i) d[i] += g[i] * y[i] * (1.0 - y[i]);
      }
      return;
    }
    case Op::kAbs: {
      if (wants(0)) {
        double* d = gin(0).data();
        const double* x = in_val(0).data();
        for (std::int64_t i = 0; i < n.value.size(); ++i) {
          const double sgn = x[i] > 0 ? 1.0 : (x[i] < 0 ? -1.0 : 0.0);
          d[i] += g[i] * sgn;
        }
      }
      return;
    }
    case Op::kRelu: {
      if (wants(0)) {
        double* d = gin(0).data();
        const double* x = in_val(0).data();
        const std::int64_t count = n.value.size();
#pragma omp parallel for schedule(static) if (count >= kParallelElems)
        for (std::int64_t i = 0; i < count; ++i)
          if (x[i] > 0) d[i] += g[i];
      }
      return;
    }
    case Op::kPowConst: {
      if (wants(0)) {
        double* d = gin(0).data();
        const double* x = in_val(0).data();
        const double p = n.p0;
        for (std::int64_t i = 0; i < n.value.size(); ++i) {
          if (p == 0.0) continue;
          if (p == 1.0) {
            d[i] += g[i];
          } else if (x[i] > 0) {
            d[i] += g[i] * p * std::pow(x[i], p - 1.0);
          }  // x == 0: derivative taken as 0
        }
      }
      return;
    }
    case Op::kClamp: {
      if (wants(0)) {
        double* d = gin(0).data();
        const double* x = in_val(0).data();
        for (std::int64_t i = 0; i < n.value.size(); ++i)
          if (x[i] >= n.p0 && x[i] <= n.p1) d[i] += g[i];
      }
      return;
    }
    case Op::kSoftmaxRows: {
      if (wants(0)) {
        const int r = n.value.shape()[0], c = n.value.shape()[1];
        double* d = gin(0).data();
        const double* y = n.value.data();
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(r) * c >= kParallelElems)
        for (int i = 0; i < r; ++i) {
          const double* yr = y + static_cast<std::size_t>(i) * c;
          const double* gr = g + static_cast<std::size_t>(i) * c;
          double dot = 0;
          for (int j = 0; j < c; ++j) dot += gr[j] * yr[j];
          double* dr = d + static_cast<std::size_t>(i) * c;
          for (int j = 0; j < c; ++j) dr[j] += yr[j] * (gr[j] - dot);
        }
      }
      return;
    }
    case Op::kLayerNorm: {
      const Tensor& X = in_val(0);
      const Tensor& G = in_val(1);
      const int r = X.shape()[0], c = X.shape()[1];
      for (int i = 0; i < r; ++i) {
        const double mean = n.aux[2 * static_cast<std::size_t>(i)];
        const double inv = n.aux[2 * static_cast<std::size_t>(i) + 1];
        const double* xr = X.data() + static_cast<std::size_t>(i) * c;
        const double* gr = g + static_cast<std::size_t>(i) * c;
        // dxhat, plus reductions for the mean/variance paths
        double sum_dxhat = 0, sum_dxhat_xhat = 0;
        for (int j = 0; j < c; ++j) {
          const double xhat = (xr[j] - mean) * inv;
          const double dxhat = gr[j] * G.data()[j];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
        }
        if (wants(0)) {
          double* dx = gin(0).data() + static_cast<std::size_t>(i) * c;
          for (int j = 0; j < c; ++j) {
            const double xhat = (xr[j] - mean) * inv;
            const double dxhat = gr[j] * G.data()[j];
            dx[j] += inv * (dxhat - sum_dxhat / c - xhat * sum_dxhat_xhat / c);
          }
        }
        if (wants(1)) {
          double* dg = gin(1).data();
          for (int j = 0; j < c; ++j) dg[j] += gr[j] * (xr[j] - mean) * inv;
        }
        if (wants(2)) {
          double* db = gin(2).data();
          for (int j = 0; j < c; ++j) db[j] += gr[j];
        }
      }
      return;
    }
    case Op::kReduceMean: {
      if (wants(0)) {
        const Tensor& X = in_val(0);
        const int r = X.shape()[0], c = X.shape()[1];
        double* d = gin(0).data();
        if (n.i0 == 0) {
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) d[static_cast<std::size_t>(i) * c + j] += g[j] / r;
        } else {
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) d[static_cast<std::size_t>(i) * c + j] += g[i] / c;
        }
      }
      return;
    }
    case Op::kReduceSum: {
      if (wants(0)) {
        const Tensor& X = in_val(0);
        const int r = X.shape()[0], c = X.shape()[1];
        double* d = gin(0).data();
        if (n.i0 == 0) {
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) d[static_cast<std::size_t>(i) * c + j] += g[j];
        } else {
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) d[static_cast<std::size_t>(i) * c + j] += g[i];
        }
      }
      return;
    }
    case Op::kBlockMeanRows: {
      if (wants(0)) {
        const int block = n.i0;
        const int groups = n.value.shape()[0], c = n.value.shape()[1];
        double* d = gin(0).data();
        for (int gi = 0; gi < groups; ++gi)
          for (int i = 0; i < block; ++i) {
            double* row = d + static_cast<std::size_t>(gi * block + i) * c;
            const double* grow = g + static_cast<std::size_t>(gi) * c;
            for (int j = 0; j < c; ++j) row[j] += grow[j] / block;
          }
      }
      return;
    }
    case Op::kReshape: {
      if (wants(0)) {
        double* d = gin(0).data();
        for (std::int64_t i = 0; i < n.value.size(); ++i) d[i] += g[i];
      }
      return;
    }
    case Op::kSliceCols: {
      if (wants(0)) {
        const Tensor& X = in_val(0);
        const int r = X.shape()[0], c = X.shape()[1];
        double* d = gin(0).data();
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < n.i1; ++j)
            d[static_cast<std::size_t>(i) * c + n.i0 + j] +=
                g[static_cast<std::size_t>(i) * n.i1 + j];
      }
      return;
    }
    case Op::kConcatCols: {
      const int r = n.value.shape()[0], total = n.value.shape()[1];
      int off = 0;
      for (std::size_t slot = 0; slot < n.in.size(); ++slot) {
        const Tensor& X = nodes_[static_cast<std::size_t>(n.in[slot])].value;
        const int c = X.shape()[1];
        if (nodes_[static_cast<std::size_t>(n.in[slot])].requires_grad) {
          double* d = ensure_grad(n.in[slot]).data();
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
              d[static_cast<std::size_t>(i) * c + j] +=
                  g[static_cast<std::size_t>(i) * total + off + j];
        }
        off += c;
      }
      return;
    }
    case Op::kSliceRows: {
      if (wants(0)) {
        const int c = n.value.shape()[1];
        double* d = gin(0).data();
        for (int i = 0; i < n.i1; ++i)
          for (int j = 0; j < c; ++j)
            d[static_cast<std::size_t>(n.i0 + i) * c + j] +=
                g[static_cast<std::size_t>(i) * c + j];
      }
      return;
    }
    case Op::kInterleaveRows: {
      const int nstreams = static_cast<int>(n.in.size());
      const int c = n.value.shape()[1];
      const int r = n.value.shape()[0] / nstreams;
      for (int j = 0; j < nstreams; ++j) {
        if (!nodes_[static_cast<std::size_t>(n.in[static_cast<std::size_t>(j)])].requires_grad)
          continue;
        double* d = ensure_grad(n.in[static_cast<std::size_t>(j)]).data();
        for (int i = 0; i < r; ++i) {
          const double* grow = g + static_cast<std::size_t>(i * nstreams + j) * c;
          double* drow = d + static_cast<std::size_t>(i) * c;
          for (int kk = 0; kk < c; ++kk) drow[kk] += grow[kk];
        }
      }
      return;
    }
    case Op::kBroadcastAddRow: {
      const int r = n.value.shape()[0], c = n.value.shape()[1];
      if (wants(0)) {
        double* d = gin(0).data();
        for (std::int64_t i = 0; i < n.value.size(); ++i) d[i] += g[i];
      }
      if (wants(1)) {
        double* d = gin(1).data();
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) d[j] += g[static_cast<std::size_t>(i) * c + j];
      }
      return;
    }
    case Op::kTileRowsAdd: {
      const int r = n.value.shape()[0], c = n.value.shape()[1];
      const int period = in_val(1).shape()[0];
      if (wants(0)) {
        double* d = gin(0).data();
        for (std::int64_t i = 0; i < n.value.size(); ++i) d[i] += g[i];
      }
      if (wants(1)) {
        double* d = gin(1).data();
        for (int i = 0; i < r; ++i) {
          double* drow = d + static_cast<std::size_t>(i % period) * c;
          const double* grow = g + static_cast<std::size_t>(i) * c;
          for (int j = 0; j < c; ++j) drow[j] += grow[j];
        }
      }
      return;
    }
    case Op::kOuter: {
      const Tensor& U = in_val(0);
      const Tensor& V = in_val(1);
      const int r = U.shape()[0], c = V.shape()[0];
      if (wants(0)) {
        double* d = gin(0).data();
        for (int i = 0; i < r; ++i) {
          double acc = 0;
          for (int j = 0; j < c; ++j)
            acc += g[static_cast<std::size_t>(i) * c + j] * V[static_cast<std::size_t>(j)];
          d[i] += acc;
        }
      }
      if (wants(1)) {
        double* d = gin(1).data();
        for (int i = 0; i < r; ++i) {
          const double u = U[static_cast<std::size_t>(i)];
          for (int j = 0; j < c; ++j) d[j] += g[static_cast<std::size_t>(i) * c + j] * u;
        }
      }
      return;
    }
    case Op::kEmbedLookup: {
      if (wants(0)) {
        const int c = n.value.shape()[1];
        double* d = gin(0).data();
        for (std::size_t i = 0; i < n.idx.size(); ++i) {
          double* drow = d + static_cast<std::size_t>(n.idx[i]) * c;
          const double* grow = g + i * static_cast<std::size_t>(c);
          for (int j = 0; j < c; ++j) drow[j] += grow[j];
        }
      }
      return;
    }
    case Op::kL2NormalizeRows: {
      if (wants(0)) {
        const int r = n.value.shape()[0], c = n.value.shape()[1];
        double* d = gin(0).data();
        const double* y = n.value.data();
        for (int i = 0; i < r; ++i) {
          const double norm = n.aux[static_cast<std::size_t>(i)];
          const double* yr = y + static_cast<std::size_t>(i) * c;
          const double* gr = g + static_cast<std::size_t>(i) * c;
          double dot = 0;
          for (int j = 0; j < c; ++j) dot += gr[j] * yr[j];
          double* dr = d + static_cast<std::size_t>(i) * c;
          for (int j = 0; j < c; ++j) dr[j] += (gr[j] - yr[j] * dot) / norm;
        }
      }
      return;
    }
    case Op::kMaskedRowLSE: {
      if (wants(0)) {
        const Tensor& S = in_val(0);
        const int r = S.shape()[0], c = S.shape()[1];
        double* d = gin(0).data();
        for (int i = 0; i < r; ++i) {
          const std::uint8_t* m = n.mask.data() + static_cast<std::size_t>(i) * c;
          bool any = false;
          for (int j = 0; j < c; ++j) any = any || m[j];
          if (!any) continue;
          const double lse = n.value[static_cast<std::size_t>(i)];
          const double gi = g[i];
          const double* srow = S.data() + static_cast<std::size_t>(i) * c;
          double* drow = d + static_cast<std::size_t>(i) * c;
          for (int j = 0; j < c; ++j)
            if (m[j]) drow[j] += gi * std::exp(srow[j] - lse);
        }
      }
      return;
    }
    case Op::kSumAll: {
      if (wants(0)) {
        double* d = gin(0).data();
        const double gv = g[0];
        for (std::int64_t i = 0; i < in_val(0).size(); ++i) d[i] += gv;
      }
      return;
    }
  }
  throw ContractError("backprop: unhandled op");
}

// ---------------------------------------------------------------------------

double grad_check(const GradFn& f, const std::vector<Tensor*>& params,
                  const GradCheckOptions& opt) {
  if (!(opt.h > 0)) throw ContractError("grad_check: h must be > 0");
  std::vector<Tensor> analytic;
  f(&analytic);
  if (analytic.size() != params.size())
    throw ContractError("grad_check: gradient count does not match parameter count");
  double max_rel = 0;
  SplitMix64 rng(opt.sample_seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor* p = params[pi];
    if (!analytic[pi].same_shape(*p))
      throw ContractError("grad_check: gradient shape mismatch for parameter " +
                          std::to_string(pi));
    const std::int64_t count = p->size();
    std::vector<std::int64_t> coords;
    if (opt.max_coords_per_param > 0 && count > opt.max_coords_per_param) {
      coords.reserve(static_cast<std::size_t>(opt.max_coords_per_param));
      for (int c = 0; c < opt.max_coords_per_param; ++c)
        coords.push_back(static_cast<std::int64_t>(
            rng.next_below(static_cast<std::uint64_t>(count))));
    } else {
      coords.resize(static_cast<std::size_t>(count));
      for (std::int64_t i = 0; i < count; ++i) coords[static_cast<std::size_t>(i)] = i;
    }
    for (std::int64_t ci : coords) {
      const double orig = (*p)[static_cast<std::size_t>(ci)];
      (*p)[static_cast<std::size_t>(ci)] = orig + opt.h;
      const double fp = f(nullptr);
      (*p)[static_cast<std::size_t>(ci)] = orig - opt.h;
      const double fm = f(nullptr);
      (*p)[static_cast<std::size_t>(ci)] = orig;
      const double numeric = (fp - fm) / (2 * opt.h);
      const double ana = analytic[pi][static_cast<std::size_t>(ci)];
      const double rel = std::abs(numeric - ana) / std::max(1.0, std::abs(ana));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace dsekit
