#include "dukf/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace dukf::ad {
namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

[[noreturn]] void shape_fail(OpKind kind, const std::string& what) {
  throw ShapeError(std::string("op '") + op_name(kind) + "': " + what);
}

// Strides of an operand broadcast into an (rows x cols) output.
struct Broadcast {
  std::size_t row_stride;
  std::size_t col_stride;
};

Broadcast broadcast_strides(const Shape& s) {
  return {s.rows() == 1 ? 0 : s.cols(), s.cols() == 1 ? std::size_t{0} : std::size_t{1}};
}

Shape broadcast_shape(OpKind kind, const Shape& a, const Shape& b) {
  auto join = [&](std::size_t x, std::size_t y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    shape_fail(kind, "cannot broadcast " + a.str() + " with " + b.str());
  };
  const std::size_t r = join(a.rows(), b.rows());
  const std::size_t c = join(a.cols(), b.cols());
  const int rank = std::max(a.rank, b.rank);
  if (rank == 2) return Shape::matrix(r, c);
  if (rank == 1) return Shape::vector(c);
  return Shape::scalar();
}

void check_finite(OpKind kind, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("non-finite output in op '") +
                         op_name(kind) + "'");
    }
  }
}

void require_arity(OpKind kind, std::span<const Tensor> in, std::size_t n) {
  if (in.size() != n) {
    shape_fail(kind, "expected " + std::to_string(n) + " inputs, got " +
                         std::to_string(in.size()));
  }
}

std::vector<double>& grad_slot(std::vector<std::vector<double>>& grads,
                               const Tensor& t) {
  auto& g = grads[static_cast<std::size_t>(t.node())];
  if (g.empty()) g.assign(t.size(), 0.0);
  return g;
}

double unary_forward(OpKind kind, double x, double s) {
  switch (kind) {
    case OpKind::scale: return s * x;
    case OpKind::offset: return x + s;
    case OpKind::negate: return -x;
    case OpKind::tanh: return std::tanh(x);
    case OpKind::sin: return std::sin(x);
    case OpKind::cos: return std::cos(x);
    case OpKind::atan: return std::atan(x);
    case OpKind::abs: return std::abs(x);
    case OpKind::square: return x * x;
    case OpKind::sqrt_elementwise: return std::sqrt(x);
    case OpKind::clamp_min: return std::max(x, s);
    default: return 0.0;
  }
}

// d(out)/d(in) for an elementwise unary op, given input x and output y.
double unary_derivative(OpKind kind, double x, double y, double s) {
  switch (kind) {
    case OpKind::scale: return s;
    case OpKind::offset: return 1.0;
    case OpKind::negate: return -1.0;
    case OpKind::tanh: return 1.0 - y * y;
    case OpKind::sin: return std::cos(x);
    case OpKind::cos: return -std::sin(x);
    case OpKind::atan: return 1.0 / (1.0 + x * x);
    case OpKind::abs: return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
    case OpKind::square: return 2.0 * x;
    case OpKind::sqrt_elementwise: return 0.5 / y;
    case OpKind::clamp_min: return x > s ? 1.0 : 0.0;
    default: return 0.0;
  }
}

bool is_unary(OpKind kind) {
  switch (kind) {
    case OpKind::scale:
    case OpKind::offset:
    case OpKind::negate:
    case OpKind::tanh:
    case OpKind::sin:
    case OpKind::cos:
    case OpKind::atan:
    case OpKind::abs:
    case OpKind::square:
    case OpKind::sqrt_elementwise:
    case OpKind::clamp_min:
      return true;
    default:
      return false;
  }
}

bool is_binary_elementwise(OpKind kind) {
  return kind == OpKind::add || kind == OpKind::subtract ||
         kind == OpKind::hadamard || kind == OpKind::divide;
}

// 2-D views used by matmul: rank-1 lhs is a row, rank-1 rhs is a column.
std::pair<std::size_t, std::size_t> lhs_view(const Shape& s) {
  return {s.rows(), s.cols()};
}
std::pair<std::size_t, std::size_t> rhs_view(const Shape& s) {
  if (s.rank == 1) return {s.dims[0], 1};
  return {s.rows(), s.cols()};
}

std::size_t tri_count(std::size_t n) { return n * (n + 1) / 2; }

std::vector<double> cholesky_forward(const Tensor& s) {
  const std::size_t n = s.shape().rows();
  const auto v = s.values();
  double scale = 1.0;
  for (double x : v) scale = std::max(scale, std::abs(x));
  std::vector<double> a(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double sij = v[i * n + j];
      const double sji = v[j * n + i];
      if (std::abs(sij - sji) > 1e-9 * scale) {
        throw ShapeError("op 'cholesky': input is not symmetric at (" +
                         std::to_string(i) + ", " + std::to_string(j) + ")");
      }
      a[i * n + j] = 0.5 * (sij + sji);
    }
  }
  std::vector<double> l(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= l[j * n + k] * l[j * n + k];
    if (!(d > 0.0) || !std::isfinite(d)) throw NotPositiveDefinite(j, d);
    const double ljj = std::sqrt(d);
    l[j * n + j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double x = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) x -= l[i * n + k] * l[j * n + k];
      l[i * n + j] = x / ljj;
    }
  }
  return l;
}

Shape infer_and_compute(OpKind kind, std::span<const Tensor> in,
                        const OpAttrs& attrs, std::vector<double>& out) {
  if (is_unary(kind)) {
    require_arity(kind, in, 1);
    const auto x = in[0].values();
    out.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      out[i] = unary_forward(kind, x[i], attrs.scalar);
    }
    return in[0].shape();
  }
  if (is_binary_elementwise(kind)) {
    require_arity(kind, in, 2);
    const Shape shape = broadcast_shape(kind, in[0].shape(), in[1].shape());
    const auto sa = broadcast_strides(in[0].shape());
    const auto sb = broadcast_strides(in[1].shape());
    const auto a = in[0].values();
    const auto b = in[1].values();
    const std::size_t rows = shape.rows(), cols = shape.cols();
    out.resize(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double x = a[r * sa.row_stride + c * sa.col_stride];
        const double y = b[r * sb.row_stride + c * sb.col_stride];
        double z = 0.0;
        switch (kind) {
          case OpKind::add: z = x + y; break;
          case OpKind::subtract: z = x - y; break;
          case OpKind::hadamard: z = x * y; break;
          default: z = x / y; break;
        }
        out[r * cols + c] = z;
      }
    }
    return shape;
  }
  switch (kind) {
    case OpKind::matmul: {
      require_arity(kind, in, 2);
      const auto& sa = in[0].shape();
      const auto& sb = in[1].shape();
      if (sa.rank == 0 || sb.rank == 0) shape_fail(kind, "scalar operand");
      const auto [m, k] = lhs_view(sa);
      const auto [k2, n] = rhs_view(sb);
      if (k != k2) shape_fail(kind, sa.str() + " x " + sb.str());
      out.assign(m * n, 0.0);
      Map(out.data(), m, n).noalias() =
          MapC(in[0].values().data(), m, k) * MapC(in[1].values().data(), k, n);
      if (sa.rank == 1 && sb.rank == 1) return Shape::scalar();
      if (sa.rank == 1) return Shape::vector(n);
      if (sb.rank == 1) return Shape::vector(m);
      return Shape::matrix(m, n);
    }
    case OpKind::transpose: {
      require_arity(kind, in, 1);
      const auto& s = in[0].shape();
      if (s.rank != 2) shape_fail(kind, "expected a matrix, got " + s.str());
      const std::size_t r = s.dims[0], c = s.dims[1];
      const auto x = in[0].values();
      out.resize(r * c);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
      return Shape::matrix(c, r);
    }
    case OpKind::sum:
    case OpKind::mean: {
      require_arity(kind, in, 1);
      const auto x = in[0].values();
      double acc = 0.0;
      for (double v : x) acc += v;
      if (kind == OpKind::mean) {
        if (x.empty()) shape_fail(kind, "empty tensor");
        acc /= static_cast<double>(x.size());
      }
      out.assign(1, acc);
      return Shape::scalar();
    }
    case OpKind::slice: {
      require_arity(kind, in, 1);
      const auto& s = in[0].shape();
      const auto x = in[0].values();
      if (attrs.begin > attrs.end) shape_fail(kind, "begin > end");
      if (s.rank == 1) {
        if (attrs.axis != 0 || attrs.end > s.dims[0])
          shape_fail(kind, "range out of bounds for " + s.str());
        out.assign(x.begin() + static_cast<std::ptrdiff_t>(attrs.begin),
                   x.begin() + static_cast<std::ptrdiff_t>(attrs.end));
        return Shape::vector(attrs.end - attrs.begin);
      }
      if (s.rank != 2) shape_fail(kind, "cannot slice a scalar");
      const std::size_t r = s.dims[0], c = s.dims[1];
      const std::size_t len = attrs.end - attrs.begin;
      if (attrs.axis == 0) {
        if (attrs.end > r) shape_fail(kind, "row range out of bounds");
        out.assign(x.begin() + static_cast<std::ptrdiff_t>(attrs.begin * c),
                   x.begin() + static_cast<std::ptrdiff_t>(attrs.end * c));
        return Shape::matrix(len, c);
      }
      if (attrs.axis != 1 || attrs.end > c)
        shape_fail(kind, "column range out of bounds");
      out.resize(r * len);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < len; ++j)
          out[i * len + j] = x[i * c + attrs.begin + j];
      return Shape::matrix(r, len);
    }
    case OpKind::concat: {
      if (in.empty()) shape_fail(kind, "no inputs");
      const int rank = in[0].shape().rank;
      if (rank == 0) shape_fail(kind, "cannot concatenate scalars");
      for (const auto& t : in)
        if (t.shape().rank != rank) shape_fail(kind, "rank mismatch");
      if (rank == 1) {
        if (attrs.axis != 0) shape_fail(kind, "vectors concatenate on axis 0");
        out.clear();
        for (const auto& t : in)
          out.insert(out.end(), t.values().begin(), t.values().end());
        return Shape::vector(out.size());
      }
      if (attrs.axis == 0) {
        const std::size_t c = in[0].shape().dims[1];
        std::size_t r = 0;
        out.clear();
        for (const auto& t : in) {
          if (t.shape().dims[1] != c) shape_fail(kind, "column mismatch");
          r += t.shape().dims[0];
          out.insert(out.end(), t.values().begin(), t.values().end());
        }
        return Shape::matrix(r, c);
      }
      if (attrs.axis != 1) shape_fail(kind, "axis must be 0 or 1");
      const std::size_t r = in[0].shape().dims[0];
      std::size_t c = 0;
      for (const auto& t : in) {
        if (t.shape().dims[0] != r) shape_fail(kind, "row mismatch");
        c += t.shape().dims[1];
      }
      out.resize(r * c);
      std::size_t col0 = 0;
      for (const auto& t : in) {
        const std::size_t tc = t.shape().dims[1];
        const auto x = t.values();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < tc; ++j)
            out[i * c + col0 + j] = x[i * tc + j];
        col0 += tc;
      }
      return Shape::matrix(r, c);
    }
    case OpKind::outer: {
      require_arity(kind, in, 2);
      if (in[0].shape().rank != 1 || in[1].shape().rank != 1)
        shape_fail(kind, "expected two vectors");
      const auto a = in[0].values();
      const auto b = in[1].values();
      out.resize(a.size() * b.size());
      for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j)
          out[i * b.size() + j] = a[i] * b[j];
      return Shape::matrix(a.size(), b.size());
    }
    case OpKind::reshape: {
      require_arity(kind, in, 1);
      if (attrs.shape.size() != in[0].size())
        shape_fail(kind, in[0].shape().str() + " -> " + attrs.shape.str());
      out.assign(in[0].values().begin(), in[0].values().end());
      return attrs.shape;
    }
    case OpKind::tril_from_entries: {
      require_arity(kind, in, 1);
      const std::size_t n = attrs.begin;
      if (in[0].size() != tri_count(n))
        shape_fail(kind, "expected " + std::to_string(tri_count(n)) +
                             " entries, got " + std::to_string(in[0].size()));
      const auto e = in[0].values();
      out.assign(n * n, 0.0);
      std::size_t k = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) out[i * n + j] = e[k++];
      return Shape::matrix(n, n);
    }
    case OpKind::cholesky: {
      require_arity(kind, in, 1);
      const auto& s = in[0].shape();
      if (s.rank != 2 || s.dims[0] != s.dims[1])
        shape_fail(kind, "expected a square matrix, got " + s.str());
      out = cholesky_forward(in[0]);
      return s;
    }
    case OpKind::lower_triangular_solve: {
      require_arity(kind, in, 2);
      const auto& sl = in[0].shape();
      const auto& sb = in[1].shape();
      if (sl.rank != 2 || sl.dims[0] != sl.dims[1])
        shape_fail(kind, "expected a square lower factor, got " + sl.str());
      const std::size_t n = sl.dims[0];
      const auto [br, bc] = rhs_view(sb);
      if (sb.rank == 0 || br != n) shape_fail(kind, sl.str() + " \\ " + sb.str());
      out.assign(in[1].values().begin(), in[1].values().end());
      MapC l(in[0].values().data(), n, n);
      Map x(out.data(), br, bc);
      if (attrs.transpose) {
        l.transpose().triangularView<Eigen::Upper>().solveInPlace(x);
      } else {
        l.triangularView<Eigen::Lower>().solveInPlace(x);
      }
      return sb;
    }
    default:
      shape_fail(kind, "unsupported op kind");
  }
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::subtract: return "subtract";
    case OpKind::hadamard: return "hadamard";
    case OpKind::divide: return "divide";
    case OpKind::scale: return "scale";
    case OpKind::offset: return "offset";
    case OpKind::negate: return "negate";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::tanh: return "tanh";
    case OpKind::sin: return "sin";
    case OpKind::cos: return "cos";
    case OpKind::atan: return "atan";
    case OpKind::abs: return "abs";
    case OpKind::square: return "square";
    case OpKind::sqrt_elementwise: return "sqrt_elementwise";
    case OpKind::clamp_min: return "clamp_min";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::slice: return "slice";
    case OpKind::concat: return "concat";
    case OpKind::outer: return "outer";
    case OpKind::reshape: return "reshape";
    case OpKind::tril_from_entries: return "tril_from_entries";
    case OpKind::cholesky: return "cholesky";
    case OpKind::lower_triangular_solve: return "lower_triangular_solve";
  }
  return "unknown";
}

// ---- Shape / Tensor ----------------------------------------------------------

std::size_t Shape::size() const {
  if (rank == 0) return 1;
  if (rank == 1) return dims[0];
  return dims[0] * dims[1];
}

std::vector<std::size_t> Shape::extents() const {
  if (rank == 0) return {};
  if (rank == 1) return {dims[0]};
  return {dims[0], dims[1]};
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(';
  const auto e = extents();
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (i) os << ", ";
    os << e[i];
  }
  if (e.size() == 1) os << ',';
  os << ')';
  return os.str();
}

bool Shape::operator==(const Shape& o) const {
  return rank == o.rank && extents() == o.extents();
}

Tensor::Tensor() : Tensor(0.0) {}

Tensor::Tensor(double scalar)
    : data_(std::make_shared<const std::vector<double>>(1, scalar)) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(shape) {
  if (shape.size() != values.size()) {
    throw ShapeError("tensor of shape " + shape.str() + " given " +
                     std::to_string(values.size()) + " values");
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::zeros(Shape shape) { return filled(shape, 0.0); }

Tensor Tensor::filled(Shape shape, double v) {
  return Tensor(shape, std::vector<double>(shape.size(), v));
}

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor(Shape::vector(n), std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> values) {
  return Tensor(Shape::matrix(rows, cols), std::move(values));
}

Tensor Tensor::from_rows(
    std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged rows");
    v.insert(v.end(), row.begin(), row.end());
  }
  return matrix(r, c, std::move(v));
}

Tensor Tensor::identity(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return matrix(n, n, std::move(v));
}

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_.str());
  }
  return (*data_)[0];
}

Tensor Tensor::detach() const {
  Tensor t = *this;
  t.tape_ = nullptr;
  t.node_ = -1;
  return t;
}

// ---- recording -----------------------------------------------------------------

Tensor record_op(OpKind kind, std::span<const Tensor> inputs,
                 const OpAttrs& attrs) {
  if (kind == OpKind::leaf) shape_fail(kind, "leaves are created by Tape::watch");
  Tape* tape = nullptr;
  for (const auto& t : inputs) {
    if (!t.tracked()) continue;
    if (tape && tape != t.tape()) {
      throw TapeError(std::string("op '") + op_name(kind) +
                      "' mixes tensors from different tapes");
    }
    tape = t.tape();
  }
  std::vector<double> out;
  const Shape shape = infer_and_compute(kind, inputs, attrs, out);
  check_finite(kind, out);
  Tensor result(shape, std::move(out));
  if (!tape) return result;
  if (tape->consumed()) throw TapeError("recording on a consumed tape");
  return tape->append(Tape::Node{
      kind, std::vector<Tensor>(inputs.begin(), inputs.end()), result, attrs});
}

Tensor Tape::watch(const Tensor& value) {
  if (consumed_) throw TapeError("watch on a consumed tape");
  return append(Node{OpKind::leaf, {}, value.detach(), {}});
}

Tensor Tape::append(Node node) {
  Tensor handle = node.output;
  handle.tape_ = this;
  handle.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(std::move(node));
  return handle;
}

std::vector<std::vector<double>> Tape::backward(const Tensor& loss) {
  if (consumed_) throw TapeError("tape already consumed");
  if (loss.tape() != this) throw TapeError("loss is not recorded on this tape");
  if (loss.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got " +
                     loss.shape().str());
  }
  consumed_ = true;
  std::vector<std::vector<double>> grads(nodes_.size());
  grads[static_cast<std::size_t>(loss.node())] = {1.0};
  visits_ = 0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    ++visits_;
    if (grads[i].empty() || nodes_[i].kind == OpKind::leaf) continue;
    propagate(nodes_[i], grads[i], grads);
  }
  return grads;
}

void Tape::propagate(const Node& node, const std::vector<double>& g,
                     std::vector<std::vector<double>>& grads) const {
  const auto& in = node.inputs;
  auto live = [&](std::size_t i) {
    return in[i].tape() == this && in[i].node() >= 0;
  };
  const OpKind kind = node.kind;

  if (is_unary(kind)) {
    if (!live(0)) return;
    auto& ga = grad_slot(grads, in[0]);
    const auto x = in[0].values();
    const auto y = node.output.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * unary_derivative(kind, x[i], y[i], node.attrs.scalar);
    }
    return;
  }
  if (is_binary_elementwise(kind)) {
    const Shape& so = node.output.shape();
    const auto sa = broadcast_strides(in[0].shape());
    const auto sb = broadcast_strides(in[1].shape());
    const auto a = in[0].values();
    const auto b = in[1].values();
    const std::size_t rows = so.rows(), cols = so.cols();
    std::vector<double>* ga = live(0) ? &grad_slot(grads, in[0]) : nullptr;
    std::vector<double>* gb = live(1) ? &grad_slot(grads, in[1]) : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t ia = r * sa.row_stride + c * sa.col_stride;
        const std::size_t ib = r * sb.row_stride + c * sb.col_stride;
        const double gi = g[r * cols + c];
        double da = 0.0, db = 0.0;
        switch (kind) {
          case OpKind::add: da = gi; db = gi; break;
          case OpKind::subtract: da = gi; db = -gi; break;
          case OpKind::hadamard: da = gi * b[ib]; db = gi * a[ia]; break;
          default:
            da = gi / b[ib];
            db = -gi * a[ia] / (b[ib] * b[ib]);
            break;
        }
        if (ga) (*ga)[ia] += da;
        if (gb) (*gb)[ib] += db;
      }
    }
    return;
  }

  switch (kind) {
    case OpKind::matmul: {
      const auto [m, k] = lhs_view(in[0].shape());
      const auto [k2, n] = rhs_view(in[1].shape());
      (void)k2;
      MapC gm(g.data(), m, n);
      if (live(0)) {
        auto& ga = grad_slot(grads, in[0]);
        Map(ga.data(), m, k).noalias() +=
            gm * MapC(in[1].values().data(), k, n).transpose();
      }
      if (live(1)) {
        auto& gb = grad_slot(grads, in[1]);
        Map(gb.data(), k, n).noalias() +=
            MapC(in[0].values().data(), m, k).transpose() * gm;
      }
      return;
    }
    case OpKind::transpose: {
      if (!live(0)) return;
      auto& ga = grad_slot(grads, in[0]);
      const std::size_t r = in[0].shape().dims[0], c = in[0].shape().dims[1];
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
      return;
    }
    case OpKind::sum:
    case OpKind::mean: {
      if (!live(0)) return;
      auto& ga = grad_slot(grads, in[0]);
      const double d =
          kind == OpKind::sum ? g[0] : g[0] / static_cast<double>(ga.size());
      for (double& v : ga) v += d;
      return;
    }
    case OpKind::slice: {
      if (!live(0)) return;
      auto& ga = grad_slot(grads, in[0]);
      const auto& s = in[0].shape();
      const auto& at = node.attrs;
      if (s.rank == 1 || at.axis == 0) {
        const std::size_t c = s.rank == 1 ? 1 : s.dims[1];
        for (std::size_t i = 0; i < g.size(); ++i) ga[at.begin * c + i] += g[i];
        return;
      }
      const std::size_t r = s.dims[0], c = s.dims[1], len = at.end - at.begin;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < len; ++j)
          ga[i * c + at.begin + j] += g[i * len + j];
      return;
    }
    case OpKind::concat: {
      const Shape& so = node.output.shape();
      if (so.rank == 1 || node.attrs.axis == 0) {
        std::size_t pos = 0;
        for (std::size_t t = 0; t < in.size(); ++t) {
          const std::size_t len = in[t].size();
          if (live(t)) {
            auto& gt = grad_slot(grads, in[t]);
            for (std::size_t i = 0; i < len; ++i) gt[i] += g[pos + i];
          }
          pos += len;
        }
        return;
      }
      const std::size_t r = so.dims[0], c = so.dims[1];
      std::size_t col0 = 0;
      for (std::size_t t = 0; t < in.size(); ++t) {
        const std::size_t tc = in[t].shape().dims[1];
        if (live(t)) {
          auto& gt = grad_slot(grads, in[t]);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < tc; ++j)
              gt[i * tc + j] += g[i * c + col0 + j];
        }
        col0 += tc;
      }
      return;
    }
    case OpKind::outer: {
      const auto a = in[0].values();
      const auto b = in[1].values();
      const std::size_t n = a.size(), m = b.size();
      if (live(0)) {
        auto& ga = grad_slot(grads, in[0]);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) ga[i] += g[i * m + j] * b[j];
      }
      if (live(1)) {
        auto& gb = grad_slot(grads, in[1]);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j] * a[i];
      }
      return;
    }
    case OpKind::reshape: {
      if (!live(0)) return;
      auto& ga = grad_slot(grads, in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      return;
    }
    case OpKind::tril_from_entries: {
      if (!live(0)) return;
      auto& ga = grad_slot(grads, in[0]);
      const std::size_t n = node.attrs.begin;
      std::size_t k = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) ga[k++] += g[i * n + j];
      return;
    }
    case OpKind::cholesky: {
      if (!live(0)) return;
      const std::size_t n = node.output.shape().dims[0];
      MapC l(node.output.values().data(), n, n);
      RowMat lbar = MapC(g.data(), n, n).triangularView<Eigen::Lower>();
      // P = Phi(L^T Lbar): lower triangle with halved diagonal.
      RowMat p = (l.transpose() * lbar).triangularView<Eigen::Lower>();
      p.diagonal() *= 0.5;
      // Sbar = L^-T P L^-1.
      l.transpose().triangularView<Eigen::Upper>().solveInPlace(p);
      RowMat pt = p.transpose();
      l.transpose().triangularView<Eigen::Upper>().solveInPlace(pt);
      RowMat sbar = pt.transpose();
      auto& ga = grad_slot(grads, in[0]);
      Map gs(ga.data(), n, n);
      gs += 0.5 * (sbar + sbar.transpose());
      return;
    }
    case OpKind::lower_triangular_solve: {
      const std::size_t n = in[0].shape().dims[0];
      const auto [br, bc] = rhs_view(in[1].shape());
      MapC l(in[0].values().data(), n, n);
      MapC x(node.output.values().data(), br, bc);
      RowMat bbar = MapC(g.data(), br, bc);
      if (node.attrs.transpose) {
        l.triangularView<Eigen::Lower>().solveInPlace(bbar);
      } else {
        l.transpose().triangularView<Eigen::Upper>().solveInPlace(bbar);
      }
      if (live(1)) {
        auto& gb = grad_slot(grads, in[1]);
        Map(gb.data(), br, bc) += bbar;
      }
      if (live(0)) {
        RowMat lbar = node.attrs.transpose ? RowMat(-(x * bbar.transpose()))
                                           : RowMat(-(bbar * x.transpose()));
        auto& gl = grad_slot(grads, in[0]);
        Map glm(gl.data(), n, n);
        glm += lbar.triangularView<Eigen::Lower>().toDenseMatrix();
      }
      return;
    }
    default:
      throw TapeError(std::string("no backward rule for op '") +
                      op_name(kind) + "'");
  }
}

// ---- ParameterSet ------------------------------------------------------------

void ParameterSet::add(const std::string& name, Tensor value) {
  if (!tensors_.emplace(name, std::move(value)).second) {
    throw Error("duplicate parameter name '" + name + "'");
  }
}

void ParameterSet::set(const std::string& name, Tensor value) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error("unknown parameter '" + name + "'");
  if (!(it->second.shape() == value.shape())) {
    throw ShapeError("parameter '" + name + "' has shape " +
                     it->second.shape().str() + ", got " +
                     value.shape().str());
  }
  it->second = std::move(value);
}

const Tensor& ParameterSet::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error("unknown parameter '" + name + "'");
  return it->second;
}

bool ParameterSet::contains(const std::string& name) const {
  return tensors_.count(name) != 0;
}

std::size_t ParameterSet::flat_size() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.size();
  return n;
}

std::vector<double> ParameterSet::flat() const {
  std::vector<double> out;
  out.reserve(flat_size());
  for (const auto& [_, t] : tensors_)
    out.insert(out.end(), t.values().begin(), t.values().end());
  return out;
}

void ParameterSet::assign_flat(std::span<const double> values) {
  if (values.size() != flat_size()) {
    throw ShapeError("flat view has " + std::to_string(flat_size()) +
                     " entries, got " + std::to_string(values.size()));
  }
  std::size_t pos = 0;
  for (auto& [_, t] : tensors_) {
    std::vector<double> v(values.begin() + static_cast<std::ptrdiff_t>(pos),
                          values.begin() +
                              static_cast<std::ptrdiff_t>(pos + t.size()));
    pos += t.size();
    t = Tensor(t.shape(), std::move(v));
  }
}

ParameterSet ParameterSet::bind(Tape& tape) const {
  ParameterSet out;
  for (const auto& [name, t] : tensors_) out.tensors_.emplace(name, tape.watch(t));
  return out;
}

ParameterSet ParameterSet::detach() const {
  ParameterSet out;
  for (const auto& [name, t] : tensors_) out.tensors_.emplace(name, t.detach());
  return out;
}

ParameterSet ParameterSet::with_prefix(const std::string& prefix) const {
  ParameterSet out;
  for (const auto& [name, t] : tensors_)
    if (name.rfind(prefix, 0) == 0) out.tensors_.emplace(name, t);
  return out;
}

void ParameterSet::merge(const ParameterSet& other) {
  for (const auto& [name, t] : other) add(name, t);
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (const auto& [name, t] : tensors_)
    out.tensors_.emplace(name, Tensor::zeros(t.shape()));
  return out;
}

ParameterSet backward(const Tensor& loss, const ParameterSet& bound) {
  if (!loss.tracked()) throw TapeError("loss is not tape-tracked");
  Tape& tape = *loss.tape();
  auto grads = tape.backward(loss);
  ParameterSet out;
  for (const auto& [name, t] : bound) {
    if (t.tape() != &tape) {
      throw TapeError("parameter '" + name + "' is not bound to the loss tape");
    }
    auto& g = grads[static_cast<std::size_t>(t.node())];
    if (g.empty()) g.assign(t.size(), 0.0);
    out.add(name, Tensor(t.shape(), std::move(g)));
  }
  return out;
}

GradCheckResult grad_check(const LossFn& f, const ParameterSet& params,
                           const GradCheckOptions& options) {
  if (!(options.eps > 0.0 && options.eps <= 1e-2)) {
    throw Error("grad_check eps must lie in (0, 1e-2]");
  }
  Tape tape;
  const ParameterSet bound = params.bind(tape);
  const Tensor loss = f(bound);
  const ParameterSet grads = backward(loss, bound);

  struct Coord {
    std::string name;
    std::size_t index;
  };
  std::vector<Coord> coords;
  for (const auto& [name, t] : params)
    for (std::size_t i = 0; i < t.size(); ++i) coords.push_back({name, i});
  if (coords.size() > options.max_coordinates) {
    std::mt19937_64 rng(options.seed);
    for (std::size_t i = 0; i < options.max_coordinates; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, coords.size() - 1);
      std::swap(coords[i], coords[pick(rng)]);
    }
    coords.resize(options.max_coordinates);
  }

  auto eval = [&](const std::string& name, std::size_t index, double value) {
    ParameterSet p = params.detach();
    std::vector<double> v(p.at(name).values().begin(),
                          p.at(name).values().end());
    v[index] = value;
    p.set(name, Tensor(p.at(name).shape(), std::move(v)));
    const double out = f(p).item();
    if (!std::isfinite(out)) throw NumericError("grad_check: f is non-finite");
    return out;
  };

  GradCheckResult result;
  result.coordinates = coords.size();
  for (const auto& c : coords) {
    const double x0 = params.at(c.name)[c.index];
    const double h = options.eps * std::max(1.0, std::abs(x0));
    const double diff =
        (eval(c.name, c.index, x0 + h) - eval(c.name, c.index, x0 - h)) /
        (2.0 * h);
    const double analytic = grads.at(c.name)[c.index];
    const double rel = std::abs(analytic - diff) /
                       std::max({std::abs(analytic), std::abs(diff), 1e-12});
    if (rel >= result.max_rel_error) {
      result.max_rel_error = rel;
      std::ostringstream os;
      os << c.name << '[' << c.index << "] tape " << analytic << " vs numeric "
         << diff;
      result.worst = os.str();
    }
  }
  return result;
}

// ---- helpers -------------------------------------------------------------------

namespace {
Tensor unary(OpKind kind, const Tensor& a, double s = 0.0) {
  OpAttrs at;
  at.scalar = s;
  return record_op(kind, std::span<const Tensor>(&a, 1), at);
}
Tensor binary(OpKind kind, const Tensor& a, const Tensor& b,
              const OpAttrs& at = {}) {
  const std::array<Tensor, 2> in{a, b};
  return record_op(kind, in, at);
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(OpKind::add, a, b); }
Tensor subtract(const Tensor& a, const Tensor& b) {
  return binary(OpKind::subtract, a, b);
}
Tensor hadamard(const Tensor& a, const Tensor& b) {
  return binary(OpKind::hadamard, a, b);
}
Tensor divide(const Tensor& a, const Tensor& b) {
  return binary(OpKind::divide, a, b);
}
Tensor scale(const Tensor& a, double s) { return unary(OpKind::scale, a, s); }
Tensor offset(const Tensor& a, double c) { return unary(OpKind::offset, a, c); }
Tensor negate(const Tensor& a) { return unary(OpKind::negate, a); }
Tensor matmul(const Tensor& a, const Tensor& b) {
  return binary(OpKind::matmul, a, b);
}
Tensor transpose(const Tensor& a) { return unary(OpKind::transpose, a); }
Tensor tanh(const Tensor& a) { return unary(OpKind::tanh, a); }
Tensor sin(const Tensor& a) { return unary(OpKind::sin, a); }
Tensor cos(const Tensor& a) { return unary(OpKind::cos, a); }
Tensor atan(const Tensor& a) { return unary(OpKind::atan, a); }
Tensor abs(const Tensor& a) { return unary(OpKind::abs, a); }
Tensor square(const Tensor& a) { return unary(OpKind::square, a); }
Tensor sqrt(const Tensor& a) { return unary(OpKind::sqrt_elementwise, a); }
Tensor clamp_min(const Tensor& a, double lo) {
  return unary(OpKind::clamp_min, a, lo);
}
Tensor sum(const Tensor& a) { return unary(OpKind::sum, a); }
Tensor mean(const Tensor& a) { return unary(OpKind::mean, a); }

Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end) {
  OpAttrs at;
  at.axis = axis;
  at.begin = begin;
  at.end = end;
  return record_op(OpKind::slice, std::span<const Tensor>(&a, 1), at);
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  OpAttrs at;
  at.axis = axis;
  return record_op(OpKind::concat, parts, at);
}

Tensor concat(std::initializer_list<Tensor> parts, int axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor outer(const Tensor& a, const Tensor& b) {
  return binary(OpKind::outer, a, b);
}

Tensor reshape(const Tensor& a, Shape shape) {
  OpAttrs at;
  at.shape = shape;
  return record_op(OpKind::reshape, std::span<const Tensor>(&a, 1), at);
}

Tensor tril_from_entries(const Tensor& entries, std::size_t n) {
  OpAttrs at;
  at.begin = n;
  return record_op(OpKind::tril_from_entries,
                   std::span<const Tensor>(&entries, 1), at);
}

Tensor cholesky(const Tensor& s) { return unary(OpKind::cholesky, s); }

Tensor lower_triangular_solve(const Tensor& lower, const Tensor& b,
                              bool transpose_lower) {
  OpAttrs at;
  at.transpose = transpose_lower;
  return binary(OpKind::lower_triangular_solve, lower, b, at);
}

Tensor cholesky_with_jitter(const Tensor& s, double delta, int retries) {
  try {
    return cholesky(s);
  } catch (const NotPositiveDefinite&) {
    if (retries <= 0) throw;
  }
  const std::size_t n = s.shape().rows();
  double jitter = delta;
  for (int attempt = 0;; ++attempt) {
    try {
      return cholesky(s + Tensor::identity(n) * jitter);
    } catch (const NotPositiveDefinite&) {
      if (attempt + 1 >= retries) throw;
    }
    jitter *= 10.0;
  }
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return subtract(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return hadamard(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return divide(a, b); }
Tensor operator-(const Tensor& a) { return negate(a); }
Tensor operator+(const Tensor& a, double c) { return offset(a, c); }
Tensor operator+(double c, const Tensor& a) { return offset(a, c); }
Tensor operator-(const Tensor& a, double c) { return offset(a, -c); }
Tensor operator-(double c, const Tensor& a) { return offset(negate(a), c); }
Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
Tensor operator/(const Tensor& a, double s) { return scale(a, 1.0 / s); }
Tensor operator/(double c, const Tensor& a) { return divide(Tensor(c), a); }

}  // namespace dukf::ad
