#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dsekit/errors.hpp"

namespace dsekit {

/// Dense row-major array of 64-bit reals, up to 3 dims. Plain value type;
/// tape attachment happens through Tape::leaf / Tape::constant.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(count(shape_)), 0.0);
  }
  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != count(shape_))
      throw ContractError("Tensor: data length does not match shape");
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  int rows() const { return shape_.size() == 2 ? shape_[0] : (shape_.empty() ? 0 : shape_[0]); }
  int cols() const { return shape_.size() == 2 ? shape_[1] : 1; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
  double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

  std::string shape_str() const;

  bool operator==(const Tensor&) const = default;

 private:
  static std::int64_t count(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw ContractError("Tensor: nonpositive dim");
      n *= d;
    }
    return shape.empty() ? 0 : n;
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

/// Record-and-replay reverse-mode differentiation. Ops append nodes while
/// computing values eagerly; backward() runs one reverse sweep. A tape and
/// its tensors are confined to one thread during a forward/backward pair.
class Tape {
 public:
  struct Var {
    int id = -1;
    std::uint32_t gen = 0;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable leaf (parameter). Copies the tensor.
  Var leaf(const Tensor& t);
  /// Non-differentiable input.
  Var constant(Tensor t);

  // -- primitives ---------------------------------------------------------
  Var matmul(Var a, Var b);               ///< (r x k) @ (k x c)
  Var matmul_nt(Var a, Var b);            ///< (r x c) @ (s x c)^T -> r x s
  Var block_matmul_nt(Var a, Var b, int block);  ///< per-block A B^T
  Var block_matmul_nn(Var s, Var v, int block);  ///< per-block S V
  /// Fused x @ w + row-broadcast bias; numerically identical to the
  /// composition but touches the output once.
  Var affine(Var x, Var w, Var bias);
  /// Fused per-block multi-head attention over row groups of `block` tokens:
  /// softmax(Qh Kh^T / sqrt(dh)) Vh per head, heads re-concatenated.
  /// Numerically identical to the slice/block-matmul/softmax composition.
  Var mha(Var q, Var k, Var v, int n_heads, int block);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var exp(Var a);
  Var log(Var a);                         ///< domain error on x <= 0
  Var sigmoid(Var a);
  Var abs(Var a);
  Var relu(Var a);
  Var pow_const(Var a, double p);         ///< x >= 0; d/dx 0 at x=0
  Var clamp(Var a, double lo, double hi); ///< gradient 1 inside, 0 outside
  Var softmax_rows(Var a);
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
  Var reduce_mean(Var a, int axis);
  Var reduce_sum(Var a, int axis);
  Var block_mean_rows(Var a, int block);  ///< (G*T) x c -> G x c
  Var reshape(Var a, std::vector<int> shape);
  Var slice_cols(Var a, int off, int len);
  Var concat_cols(const std::vector<Var>& xs);
  Var slice_rows(Var a, int off, int len);
  Var interleave_rows(const std::vector<Var>& xs);  ///< out[i*n+j] = xs[j][i]
  Var broadcast_add_row(Var x, Var row);  ///< add a length-c vector to each row
  Var tile_rows_add(Var x, Var table);    ///< add table rows cyclically
  Var outer(Var col, Var row);            ///< (r) x (c) -> r x c
  Var embed_lookup(Var table, std::vector<int> indices);
  Var l2_normalize_rows(Var x);
  /// Row-wise log-sum-exp over entries with nonzero mask; empty-mask rows
  /// yield 0 and receive no gradient. mask is row-major r*c.
  Var masked_row_logsumexp(Var s, std::vector<std::uint8_t> mask);
  Var sum_all(Var a);                     ///< -> shape {1}

  // -- execution ----------------------------------------------------------
  const Tensor& value(Var v) const;
  /// Reverse sweep from a scalar loss. Leaf gradients become available via
  /// grad(). Throws ContractError on a non-scalar root, a stale Var, or a
  /// second call without reset().
  void backward(Var loss);
  const Tensor& grad(Var leaf) const;

  /// Clears all nodes; outstanding Vars become stale.
  void reset();
  std::size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op : std::uint8_t {
    kLeaf, kConst, kMatMul, kMatMulNT, kBlockMatMulNT, kBlockMatMulNN,
    kAdd, kSub, kMul, kScale, kExp, kLog, kSigmoid, kAbs, kRelu, kPowConst,
    kClamp, kSoftmaxRows, kLayerNorm, kReduceMean, kReduceSum,
    kBlockMeanRows, kReshape, kSliceCols, kConcatCols, kSliceRows,
    kInterleaveRows, kBroadcastAddRow, kTileRowsAdd, kOuter, kEmbedLookup,
    kL2NormalizeRows, kMaskedRowLSE, kSumAll, kAffine, kMha,
  };

  struct Node {
    Op op;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<int> in;
    Tensor value;
    Tensor grad;
    double p0 = 0, p1 = 0;
    int i0 = 0, i1 = 0;
    std::vector<double> aux;
    std::vector<int> idx;
    std::vector<std::uint8_t> mask;
  };

  Var push(Node n);
  Node& node(Var v);
  const Node& cnode(Var v) const;
  Tensor& ensure_grad(int id);
  void backprop(Node& n);

  std::vector<Node> nodes_;
  std::uint32_t gen_ = 1;
  bool backward_done_ = false;
};

/// Evaluates f (which must rebuild its graph on every call from the current
/// contents of `params`) and compares analytic gradients against central
/// differences. Returns the max relative error with denominator
/// max(1, |analytic|). When max_coords_per_param > 0, checks a deterministic
/// random subset of coordinates of each parameter instead of all of them.
struct GradCheckOptions {
  double h = 1e-6;
  int max_coords_per_param = 0;
  std::uint64_t sample_seed = 0;
};

using GradFn = std::function<double(std::vector<Tensor>* grads)>;

double grad_check(const GradFn& f, const std::vector<Tensor*>& params,
                  const GradCheckOptions& opt = {});

/// Caps the worker threads used by the heavy tensor kernels. Results are
/// bit-identical for any thread count (each output row is owned by exactly
/// one thread); no-op when built without OpenMP.
void set_tensor_threads(int n);

}  // namespace dsekit
