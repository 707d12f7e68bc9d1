#pragma once

// Dense small-tensor arithmetic with an explicit reverse-mode tape.
//
// Tensors are immutable values of rank 0, 1 or 2 stored row-major in double
// precision. A tensor is "tracked" when it was produced on a Tape; any op with
// a tracked input records a node on that tape. Untracked inputs are treated
// as constants. There is no global graph: a tape is created per rollout and
// consumed by a single backward pass.
//
// Broadcasting follows numpy rules restricted to rank <= 2 and is only
// implemented for the elementwise binary ops (add, subtract, hadamard,
// divide). A rank-1 tensor of length n broadcasts as a 1 x n row.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dukf/errors.hpp"

namespace dukf::ad {

class Tape;

struct Shape {
  std::array<std::size_t, 2> dims{1, 1};
  int rank = 0;

  static Shape scalar() { return {}; }
  static Shape vector(std::size_t n) { return {{n, 1}, 1}; }
  static Shape matrix(std::size_t r, std::size_t c) { return {{r, c}, 2}; }

  std::size_t size() const;
  // 2-D view used by broadcasting and matmul.
  std::size_t rows() const { return rank == 2 ? dims[0] : 1; }
  std::size_t cols() const {
    return rank == 0 ? 1 : (rank == 1 ? dims[0] : dims[1]);
  }
  std::vector<std::size_t> extents() const;
  std::string str() const;
  bool operator==(const Shape& o) const;
};

class Tensor {
 public:
  Tensor();
  explicit Tensor(double scalar);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double v);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values);
  static Tensor from_rows(
      std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_->size(); }
  std::span<const double> values() const { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  // Element (r, c) of the 2-D view.
  double at(std::size_t r, std::size_t c) const {
    return (*data_)[r * shape_.cols() + c];
  }
  double item() const;

  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }
  Tensor detach() const;

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

enum class OpKind : std::uint8_t {
  leaf,
  add,
  subtract,
  hadamard,
  divide,
  scale,
  offset,
  negate,
  matmul,
  transpose,
  tanh,
  sin,
  cos,
  atan,
  abs,
  square,
  sqrt_elementwise,
  clamp_min,
  sum,
  mean,
  slice,
  concat,
  outer,
  reshape,
  tril_from_entries,
  cholesky,
  lower_triangular_solve,
};

const char* op_name(OpKind kind);

// Op parameters that are not tensors.
struct OpAttrs {
  double scalar = 0.0;
  int axis = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  bool transpose = false;
  Shape shape{};
};

// Evaluates one op, checks its output is finite, and appends a node to the
// inputs' tape when any input is tracked.
Tensor record_op(OpKind kind, std::span<const Tensor> inputs,
                 const OpAttrs& attrs = {});

class ParameterSet;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a leaf variable and returns its tracked handle.
  Tensor watch(const Tensor& value);

  // Gradient of the scalar `loss` w.r.t. every node, indexed by node id.
  // Entries for nodes the loss does not depend on are empty. Consumes the
  // tape.
  std::vector<std::vector<double>> backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  std::size_t last_visit_count() const { return visits_; }
  bool consumed() const { return consumed_; }

 private:
  friend Tensor record_op(OpKind, std::span<const Tensor>, const OpAttrs&);

  struct Node {
    OpKind kind;
    std::vector<Tensor> inputs;
    Tensor output;
    OpAttrs attrs;
  };

  Tensor append(Node node);
  void propagate(const Node& node, const std::vector<double>& grad,
                 std::vector<std::vector<double>>& grads) const;

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
  bool consumed_ = false;
};

// Named collection of tensors; also used for gradient maps. Iteration order
// (and therefore the flat view) is lexicographic by name.
class ParameterSet {
 public:
  using Map = std::map<std::string, Tensor>;

  void add(const std::string& name, Tensor value);
  void set(const std::string& name, Tensor value);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::size_t size() const { return tensors_.size(); }
  bool empty() const { return tensors_.empty(); }
  std::size_t flat_size() const;
  std::vector<double> flat() const;
  void assign_flat(std::span<const double> values);

  // Copy whose tensors are leaves on `tape`.
  ParameterSet bind(Tape& tape) const;
  ParameterSet detach() const;
  // Tensors whose name starts with `prefix`.
  ParameterSet with_prefix(const std::string& prefix) const;
  void merge(const ParameterSet& other);
  ParameterSet zeros_like() const;

  Map::const_iterator begin() const { return tensors_.begin(); }
  Map::const_iterator end() const { return tensors_.end(); }

 private:
  Map tensors_;
};

// Gradients of `loss` for every tensor of `bound` (created by
// ParameterSet::bind). Unreachable parameters receive zeros.
ParameterSet backward(const Tensor& loss, const ParameterSet& bound);

// Tensor-valued loss evaluated on a (possibly tape-bound) parameter set.
using LossFn = std::function<Tensor(const ParameterSet&)>;

struct GradCheckOptions {
  double eps = 1e-6;
  std::size_t max_coordinates = 20;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst;
};

// Compares tape gradients against central differences on up to
// `max_coordinates` randomly sampled parameter coordinates.
GradCheckResult grad_check(const LossFn& f, const ParameterSet& params,
                           const GradCheckOptions& options = {});

// ---- typed op helpers ------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor offset(const Tensor& a, double c);
Tensor negate(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor atan(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor clamp_min(const Tensor& a, double lo);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Half-open range [begin, end) along `axis` (0 = rows, 1 = columns of the
// 2-D view; rank-1 tensors slice along their only axis with axis 0).
Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat(std::initializer_list<Tensor> parts, int axis);
Tensor outer(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& a, Shape shape);
// n x n lower-triangular matrix from its n(n+1)/2 row-major entries.
Tensor tril_from_entries(const Tensor& entries, std::size_t n);
// Lower factor of the symmetric part of `s`.
Tensor cholesky(const Tensor& s);
// Solves L X = B, or L^T X = B when `transpose_lower` is set. Only the lower
// triangle of L is read.
Tensor lower_triangular_solve(const Tensor& lower, const Tensor& b,
                              bool transpose_lower = false);

// Cholesky with diagonal jitter retries: delta, 10 delta, ... up to
// `retries` extra attempts before rethrowing.
Tensor cholesky_with_jitter(const Tensor& s, double delta, int retries);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a);
Tensor operator+(const Tensor& a, double c);
Tensor operator+(double c, const Tensor& a);
Tensor operator-(const Tensor& a, double c);
Tensor operator-(double c, const Tensor& a);
Tensor operator*(const Tensor& a, double s);
Tensor operator*(double s, const Tensor& a);
Tensor operator/(const Tensor& a, double s);
Tensor operator/(double c, const Tensor& a);

}  // namespace dukf::ad
