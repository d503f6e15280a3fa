#include "sge/tensor.hpp"

#include "sge/io_util.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace sge {

namespace {

double dummy_storage = 0.0;

double* ptr_of(Eigen::ArrayXd& a) { return a.size() ? a.data() : &dummy_storage; }
const double* ptr_of(const Eigen::ArrayXd& a) {
  return a.size() ? a.data() : &dummy_storage;
}

MatMap view(Eigen::ArrayXd& a, std::int64_t r, std::int64_t c) {
  return MatMap(ptr_of(a), r, c);
}
ConstMatMap view(const Eigen::ArrayXd& a, std::int64_t r, std::int64_t c) {
  return ConstMatMap(ptr_of(a), r, c);
}

void check_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected 2D tensor, got shape " +
                                shape_str(t.shape()));
  }
}

// Adds g into p's grad when p participates in differentiation.
void accum(TensorNode* p, const Eigen::ArrayXd& g) {
  if (!p->requires_grad) return;
  if (p->grad.size() == 0) p->grad = Eigen::ArrayXd::Zero(p->values.size());
  p->grad += g;
}

void ensure_grad(TensorNode* n) {
  if (n->grad.size() == 0) n->grad = Eigen::ArrayXd::Zero(n->values.size());
}

}  // namespace

std::int64_t shape_size(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor make_op_result(Shape shape, std::vector<Tensor> inputs, bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = Eigen::ArrayXd::Zero(shape_size(node->shape));
  node->requires_grad = requires_grad;
  node->is_leaf = false;
  node->parents.reserve(inputs.size());
  for (auto& t : inputs) node->parents.push_back(t.node_ptr());
  return Tensor(std::move(node));
}

namespace {

bool any_requires(std::initializer_list<const Tensor*> ts) {
  for (const auto* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

Tensor op_out(Shape shape, std::initializer_list<const Tensor*> inputs) {
  std::vector<Tensor> in;
  in.reserve(inputs.size());
  for (const auto* t : inputs) in.push_back(*t);
  return make_op_result(std::move(shape), std::move(in), any_requires(inputs));
}

}  // namespace

// ---- Tensor ----

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  node->values = Eigen::ArrayXd::Zero(shape_size(shape));
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  t.node_->values.setConstant(value);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return full({1}, value, requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  if (static_cast<std::int64_t>(values.size()) != shape_size(shape)) {
    throw std::invalid_argument("from_values: " + std::to_string(values.size()) +
                                " values for shape " + shape_str(shape));
  }
  Tensor t = zeros(std::move(shape), requires_grad);
  for (std::int64_t i = 0; i < t.size(); ++i) t.node_->values[i] = values[i];
  return t;
}

Tensor Tensor::from_matrix(const RowMat& m, bool requires_grad) {
  Tensor t = zeros({m.rows(), m.cols()}, requires_grad);
  t.mat_mut() = m;
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
int Tensor::ndim() const { return static_cast<int>(node_->shape.size()); }
std::int64_t Tensor::dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
std::int64_t Tensor::size() const { return node_->values.size(); }

std::int64_t Tensor::rows() const {
  if (ndim() >= 3) throw std::invalid_argument("rows(): tensor is " + shape_str(shape()));
  return ndim() == 2 ? dim(0) : 1;
}

std::int64_t Tensor::cols() const {
  if (ndim() >= 3) throw std::invalid_argument("cols(): tensor is " + shape_str(shape()));
  return ndim() == 2 ? dim(1) : size();
}

double Tensor::value() const {
  if (size() != 1) {
    throw std::invalid_argument("value(): tensor is not scalar, shape " + shape_str(shape()));
  }
  return node_->values[0];
}

const Eigen::ArrayXd& Tensor::values() const { return node_->values; }
Eigen::ArrayXd& Tensor::values_mut() { return node_->values; }

ConstMatMap Tensor::mat() const {
  const Eigen::ArrayXd& v = node_->values;
  return view(v, rows(), cols());
}
MatMap Tensor::mat_mut() { return view(node_->values, rows(), cols()); }

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
  if (!node_->is_leaf) {
    throw std::invalid_argument("set_requires_grad: only leaf tensors may be toggled");
  }
  node_->requires_grad = v;
  if (!v) node_->grad.resize(0);
}

bool Tensor::has_grad() const { return node_->grad.size() > 0; }

const Eigen::ArrayXd& Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("grad(): no gradient present");
  return node_->grad;
}

Eigen::ArrayXd Tensor::grad_or_zeros() const {
  if (has_grad()) return node_->grad;
  return Eigen::ArrayXd::Zero(size());
}

void Tensor::zero_grad() { node_->grad.resize(0); }

// ---- operations ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: inner extents disagree, " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()));
  }
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = op_out({m, n}, {&a, &b});
  view(out.node()->values, m, n).noalias() = a.mat() * b.mat();
  if (out.requires_grad()) {
    out.node()->backprop = [m, k, n](TensorNode& self) {
      TensorNode* pa = self.parents[0].get();
      TensorNode* pb = self.parents[1].get();
      auto g = view(self.grad, m, n);
      if (pa->requires_grad) {
        ensure_grad(pa);
        view(pa->grad, m, k).noalias() += g * view(pb->values, k, n).transpose();
      }
      if (pb->requires_grad) {
        ensure_grad(pb);
        view(pb->grad, k, n).noalias() += view(pa->values, m, k).transpose() * g;
      }
    };
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul_nt");
  check_2d(b, "matmul_nt");
  if (a.dim(1) != b.dim(1)) {
    throw std::invalid_argument("matmul_nt: inner extents disagree, " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()) + "^T");
  }
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor out = op_out({m, n}, {&a, &b});
  view(out.node()->values, m, n).noalias() = a.mat() * b.mat().transpose();
  if (out.requires_grad()) {
    out.node()->backprop = [m, k, n](TensorNode& self) {
      TensorNode* pa = self.parents[0].get();
      TensorNode* pb = self.parents[1].get();
      auto g = view(self.grad, m, n);
      if (pa->requires_grad) {
        ensure_grad(pa);
        view(pa->grad, m, k).noalias() += g * view(pb->values, n, k);
      }
      if (pb->requires_grad) {
        ensure_grad(pb);
        view(pb->grad, n, k).noalias() += g.transpose() * view(pa->values, m, k);
      }
    };
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("add: shape mismatch, " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  Tensor out = op_out(a.shape(), {&a, &b});
  out.node()->values = a.values() + b.values();
  if (out.requires_grad()) {
    out.node()->backprop = [](TensorNode& self) {
      accum(self.parents[0].get(), self.grad);
      accum(self.parents[1].get(), self.grad);
    };
  }
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  check_2d(x, "add_rowvec");
  if (v.ndim() != 1 || v.size() != x.dim(1)) {
    throw std::invalid_argument("add_rowvec: vector shape " + shape_str(v.shape()) +
                                " does not match columns of " + shape_str(x.shape()));
  }
  const std::int64_t r = x.dim(0), c = x.dim(1);
  Tensor out = op_out(x.shape(), {&x, &v});
  view(out.node()->values, r, c) =
      x.mat().rowwise() + Eigen::Map<const Eigen::RowVectorXd>(ptr_of(v.values()), c);
  if (out.requires_grad()) {
    out.node()->backprop = [r, c](TensorNode& self) {
      TensorNode* px = self.parents[0].get();
      TensorNode* pv = self.parents[1].get();
      accum(px, self.grad);
      if (pv->requires_grad) {
        ensure_grad(pv);
        Eigen::Map<Eigen::RowVectorXd>(ptr_of(pv->grad), c) +=
            view(self.grad, r, c).colwise().sum();
      }
    };
  }
  return out;
}

Tensor scale(const Tensor& x, double s) {
  Tensor out = op_out(x.shape(), {&x});
  out.node()->values = x.values() * s;
  if (out.requires_grad()) {
    out.node()->backprop = [s](TensorNode& self) {
      accum(self.parents[0].get(), Eigen::ArrayXd(self.grad * s));
    };
  }
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("hadamard: shape mismatch, " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  Tensor out = op_out(a.shape(), {&a, &b});
  out.node()->values = a.values() * b.values();
  if (out.requires_grad()) {
    out.node()->backprop = [](TensorNode& self) {
      TensorNode* pa = self.parents[0].get();
      TensorNode* pb = self.parents[1].get();
      if (pa->requires_grad) accum(pa, Eigen::ArrayXd(self.grad * pb->values));
      if (pb->requires_grad) accum(pb, Eigen::ArrayXd(self.grad * pa->values));
    };
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  Tensor out = op_out({1}, {&x});
  out.node()->values[0] = x.values().sum();
  if (out.requires_grad()) {
    out.node()->backprop = [](TensorNode& self) {
      TensorNode* p = self.parents[0].get();
      if (p->requires_grad) {
        ensure_grad(p);
        p->grad += self.grad[0];
      }
    };
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  check_2d(x, "softmax_rows");
  const std::int64_t r = x.dim(0), c = x.dim(1);
  Tensor out = op_out(x.shape(), {&x});
  auto xm = x.mat();
  auto ym = view(out.node()->values, r, c);
  for (std::int64_t i = 0; i < r; ++i) {
    const double mx = xm.row(i).maxCoeff();
    // scalar exp: Eigen's packet exp clamps large negative inputs to a
    // denormal, but additive masks rely on exact underflow to zero
    for (std::int64_t j = 0; j < c; ++j) ym(i, j) = std::exp(xm(i, j) - mx);
    ym.row(i) /= ym.row(i).sum();
  }
  if (out.requires_grad()) {
    out.node()->backprop = [r, c](TensorNode& self) {
      TensorNode* p = self.parents[0].get();
      if (!p->requires_grad) return;
      ensure_grad(p);
      auto y = view(self.values, r, c);
      auto g = view(self.grad, r, c);
      auto gx = view(p->grad, r, c);
      for (std::int64_t i = 0; i < r; ++i) {
        const double dot = (g.row(i).array() * y.row(i).array()).sum();
        gx.row(i).array() += y.row(i).array() * (g.row(i).array() - dot);
      }
    };
  }
  return out;
}

Tensor log_softmax_rows(const Tensor& x) {
  check_2d(x, "log_softmax_rows");
  const std::int64_t r = x.dim(0), c = x.dim(1);
  Tensor out = op_out(x.shape(), {&x});
  auto xm = x.mat();
  auto ym = view(out.node()->values, r, c);
  for (std::int64_t i = 0; i < r; ++i) {
    const double mx = xm.row(i).maxCoeff();
    const double lse = std::log((xm.row(i).array() - mx).exp().sum());
    ym.row(i) = xm.row(i).array() - mx - lse;
  }
  if (out.requires_grad()) {
    out.node()->backprop = [r, c](TensorNode& self) {
      TensorNode* p = self.parents[0].get();
      if (!p->requires_grad) return;
      ensure_grad(p);
      auto y = view(self.values, r, c);
      auto g = view(self.grad, r, c);
      auto gx = view(p->grad, r, c);
      for (std::int64_t i = 0; i < r; ++i) {
        const double gsum = g.row(i).sum();
        gx.row(i).array() += g.row(i).array() - y.row(i).array().exp() * gsum;
      }
    };
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.ndim() < 1) throw std::invalid_argument("layer_norm: scalar input");
  const std::int64_t d = x.shape().back();
  if (gain.ndim() != 1 || gain.size() != d || bias.ndim() != 1 || bias.size() != d) {
    throw std::invalid_argument("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                                shape_str(bias.shape()) + " do not match last extent of " +
                                shape_str(x.shape()));
  }
  const std::int64_t rows = x.size() / std::max<std::int64_t>(d, 1);
  Tensor out = op_out(x.shape(), {&x, &gain, &bias});
  auto xm = view(x.values(), rows, d);
  auto ym = view(out.node()->values, rows, d);
  auto gv = Eigen::Map<const Eigen::RowVectorXd>(ptr_of(gain.values()), d);
  auto bv = Eigen::Map<const Eigen::RowVectorXd>(ptr_of(bias.values()), d);
  std::vector<double> mean(static_cast<std::size_t>(rows));
  std::vector<double> inv_std(static_cast<std::size_t>(rows));
  for (std::int64_t i = 0; i < rows; ++i) {
    const double mu = xm.row(i).mean();
    const double var = (xm.row(i).array() - mu).square().mean();
    const double inv = 1.0 / std::sqrt(var + eps);
    mean[static_cast<std::size_t>(i)] = mu;
    inv_std[static_cast<std::size_t>(i)] = inv;
    ym.row(i) = (((xm.row(i).array() - mu) * inv) * gv.array()) + bv.array();
  }
  if (out.requires_grad()) {
    out.node()->backprop = [rows, d, mean, inv_std](TensorNode& self) {
      TensorNode* px = self.parents[0].get();
      TensorNode* pg = self.parents[1].get();
      TensorNode* pb = self.parents[2].get();
      auto g = view(self.grad, rows, d);
      auto xm2 = view(px->values, rows, d);
      auto gv2 = Eigen::Map<const Eigen::RowVectorXd>(ptr_of(pg->values), d);
      Eigen::RowVectorXd xhat(d), dxhat(d);
      for (std::int64_t i = 0; i < rows; ++i) {
        const double mu = mean[static_cast<std::size_t>(i)];
        const double inv = inv_std[static_cast<std::size_t>(i)];
        xhat = (xm2.row(i).array() - mu) * inv;
        if (pg->requires_grad) {
          ensure_grad(pg);
          Eigen::Map<Eigen::RowVectorXd>(ptr_of(pg->grad), d).array() +=
              g.row(i).array() * xhat.array();
        }
        if (pb->requires_grad) {
          ensure_grad(pb);
          Eigen::Map<Eigen::RowVectorXd>(ptr_of(pb->grad), d) += g.row(i);
        }
        if (px->requires_grad) {
          ensure_grad(px);
          dxhat = g.row(i).array() * gv2.array();
          const double m1 = dxhat.mean();
          const double m2 = (dxhat.array() * xhat.array()).mean();
          view(px->grad, rows, d).row(i).array() +=
              inv * (dxhat.array() - m1 - xhat.array() * m2);
        }
      }
    };
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = op_out(x.shape(), {&x});
  const auto& xv = x.values();
  auto& yv = out.node()->values;
  for (std::int64_t i = 0; i < x.size(); ++i) {
    yv[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * M_SQRT1_2));
  }
  if (out.requires_grad()) {
    out.node()->backprop = [](TensorNode& self) {
      TensorNode* p = self.parents[0].get();
      if (!p->requires_grad) return;
      ensure_grad(p);
      static const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * M_PI);
      const auto& xv2 = p->values;
      for (std::int64_t i = 0; i < xv2.size(); ++i) {
        const double cdf = 0.5 * (1.0 + std::erf(xv2[i] * M_SQRT1_2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xv2[i] * xv2[i]);
        p->grad[i] += self.grad[i] * (cdf + xv2[i] * pdf);
      }
    };
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::int64_t start, std::int64_t n) {
  check_2d(x, "slice_cols");
  if (start < 0 || n < 0 || start + n > x.dim(1)) {
    throw std::invalid_argument("slice_cols: [" + std::to_string(start) + ", " +
                                std::to_string(start + n) + ") out of " +
                                shape_str(x.shape()));
  }
  const std::int64_t r = x.dim(0);
  Tensor out = op_out({r, n}, {&x});
  view(out.node()->values, r, n) = x.mat().middleCols(start, n);
  if (out.requires_grad()) {
    const std::int64_t c = x.dim(1);
    out.node()->backprop = [r, c, start, n](TensorNode& self) {
      TensorNode* p = self.parents[0].get();
      if (!p->requires_grad) return;
      ensure_grad(p);
      view(p->grad, r, c).middleCols(start, n) += view(self.grad, r, n);
    };
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const std::int64_t r = parts[0].dim(0);
  std::int64_t c = 0;
  bool rg = false;
  std::vector<Tensor> in;
  for (const auto& p : parts) {
    check_2d(p, "concat_cols");
    if (p.dim(0) != r) {
      throw std::invalid_argument("concat_cols: row mismatch, " + shape_str(p.shape()));
    }
    c += p.dim(1);
    rg = rg || p.requires_grad();
    in.push_back(p);
  }
  Tensor out = make_op_result({r, c}, std::move(in), rg);
  auto om = view(out.node()->values, r, c);
  std::int64_t off = 0;
  std::vector<std::int64_t> widths;
  for (const auto& p : parts) {
    om.middleCols(off, p.dim(1)) = p.mat();
    widths.push_back(p.dim(1));
    off += p.dim(1);
  }
  if (rg) {
    out.node()->backprop = [r, c, widths](TensorNode& self) {
      auto g = view(self.grad, r, c);
      std::int64_t o = 0;
      for (std::size_t i = 0; i < widths.size(); ++i) {
        TensorNode* p = self.parents[i].get();
        if (p->requires_grad) {
          ensure_grad(p);
          view(p->grad, r, widths[i]) += g.middleCols(o, widths[i]);
        }
        o += widths[i];
      }
    };
  }
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const std::int64_t c = parts[0].dim(1);
  std::int64_t r = 0;
  bool rg = false;
  std::vector<Tensor> in;
  for (const auto& p : parts) {
    check_2d(p, "concat_rows");
    if (p.dim(1) != c) {
      throw std::invalid_argument("concat_rows: column mismatch, " + shape_str(p.shape()));
    }
    r += p.dim(0);
    rg = rg || p.requires_grad();
    in.push_back(p);
  }
  Tensor out = make_op_result({r, c}, std::move(in), rg);
  auto om = view(out.node()->values, r, c);
  std::int64_t off = 0;
  std::vector<std::int64_t> heights;
  for (const auto& p : parts) {
    if (p.dim(0) > 0) om.middleRows(off, p.dim(0)) = p.mat();
    heights.push_back(p.dim(0));
    off += p.dim(0);
  }
  if (rg) {
    out.node()->backprop = [r, c, heights](TensorNode& self) {
      auto g = view(self.grad, r, c);
      std::int64_t o = 0;
      for (std::size_t i = 0; i < heights.size(); ++i) {
        TensorNode* p = self.parents[i].get();
        if (p->requires_grad && heights[i] > 0) {
          ensure_grad(p);
          view(p->grad, heights[i], c) += g.middleRows(o, heights[i]);
        }
        o += heights[i];
      }
    };
  }
  return out;
}

Tensor embed_rows(const Tensor& table, const std::vector<int>& ids) {
  check_2d(table, "embed_rows");
  const std::int64_t v = table.dim(0), d = table.dim(1);
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw std::invalid_argument("embed_rows: id " + std::to_string(id) +
                                  " out of range [0, " + std::to_string(v) + ")");
    }
  }
  const auto n = static_cast<std::int64_t>(ids.size());
  Tensor out = op_out({n, d}, {&table});
  auto om = view(out.node()->values, n, d);
  auto tm = table.mat();
  for (std::int64_t i = 0; i < n; ++i) om.row(i) = tm.row(ids[static_cast<std::size_t>(i)]);
  if (out.requires_grad()) {
    out.node()->backprop = [v, d, n, ids](TensorNode& self) {
      TensorNode* p = self.parents[0].get();
      if (!p->requires_grad) return;
      ensure_grad(p);
      auto g = view(self.grad, n, d);
      auto tg = view(p->grad, v, d);
      for (std::int64_t i = 0; i < n; ++i) tg.row(ids[static_cast<std::size_t>(i)]) += g.row(i);
    };
  }
  return out;
}

Tensor spatial_to_rows(const Tensor& fmap) {
  if (fmap.ndim() != 3) {
    throw std::invalid_argument("spatial_to_rows: expected [d,h,w], got " +
                                shape_str(fmap.shape()));
  }
  const std::int64_t d = fmap.dim(0), h = fmap.dim(1), w = fmap.dim(2);
  const std::int64_t hw = h * w;
  Tensor out = op_out({hw, d}, {&fmap});
  // the [d, h*w] view of fmap is exactly the transpose of the output
  view(out.node()->values, hw, d) = view(fmap.values(), d, hw).transpose();
  if (out.requires_grad()) {
    out.node()->backprop = [d, hw](TensorNode& self) {
      TensorNode* p = self.parents[0].get();
      if (!p->requires_grad) return;
      ensure_grad(p);
      view(p->grad, d, hw) += view(self.grad, hw, d).transpose();
    };
  }
  return out;
}

namespace {

struct BilinearWeights {
  std::int64_t x0, x1, y0, y1;
  double w00, w01, w10, w11;  // (y0,x0), (y0,x1), (y1,x0), (y1,x1)
};

BilinearWeights bilinear_weights(double x, double y, std::int64_t h, std::int64_t w,
                                 const char* op) {
  if (!(x >= 0.0 && x <= static_cast<double>(w - 1)) ||
      !(y >= 0.0 && y <= static_cast<double>(h - 1))) {
    throw std::out_of_range(std::string(op) + ": coordinate (" + std::to_string(x) + ", " +
                            std::to_string(y) + ") outside [0, " + std::to_string(w - 1) +
                            "] x [0, " + std::to_string(h - 1) + "]");
  }
  BilinearWeights b;
  b.x0 = static_cast<std::int64_t>(std::floor(x));
  b.y0 = static_cast<std::int64_t>(std::floor(y));
  b.x1 = std::min(b.x0 + 1, w - 1);
  b.y1 = std::min(b.y0 + 1, h - 1);
  const double fx = x - static_cast<double>(b.x0);
  const double fy = y - static_cast<double>(b.y0);
  b.w00 = (1.0 - fy) * (1.0 - fx);
  b.w01 = (1.0 - fy) * fx;
  b.w10 = fy * (1.0 - fx);
  b.w11 = fy * fx;
  return b;
}

}  // namespace

Tensor bilinear_sample(const Tensor& fmap, double x, double y) {
  if (fmap.ndim() != 3) {
    throw std::invalid_argument("bilinear_sample: expected [d,h,w], got " +
                                shape_str(fmap.shape()));
  }
  const std::int64_t d = fmap.dim(0), h = fmap.dim(1), w = fmap.dim(2);
  const BilinearWeights b = bilinear_weights(x, y, h, w, "bilinear_sample");
  Tensor out = op_out({d}, {&fmap});
  const auto& fv = fmap.values();
  auto& ov = out.node()->values;
  const std::int64_t hw = h * w;
  for (std::int64_t c = 0; c < d; ++c) {
    const std::int64_t base = c * hw;
    ov[c] = b.w00 * fv[base + b.y0 * w + b.x0] + b.w01 * fv[base + b.y0 * w + b.x1] +
            b.w10 * fv[base + b.y1 * w + b.x0] + b.w11 * fv[base + b.y1 * w + b.x1];
  }
  if (out.requires_grad()) {
    out.node()->backprop = [d, h, w, b](TensorNode& self) {
      TensorNode* p = self.parents[0].get();
      if (!p->requires_grad) return;
      ensure_grad(p);
      const std::int64_t hw2 = h * w;
      for (std::int64_t c = 0; c < d; ++c) {
        const std::int64_t base = c * hw2;
        const double g = self.grad[c];
        p->grad[base + b.y0 * w + b.x0] += g * b.w00;
        p->grad[base + b.y0 * w + b.x1] += g * b.w01;
        p->grad[base + b.y1 * w + b.x0] += g * b.w10;
        p->grad[base + b.y1 * w + b.x1] += g * b.w11;
      }
    };
  }
  return out;
}

Tensor pool_points(const Tensor& fmap,
                   const std::vector<std::vector<std::pair<double, double>>>& points) {
  if (fmap.ndim() != 3) {
    throw std::invalid_argument("pool_points: expected [d,h,w], got " +
                                shape_str(fmap.shape()));
  }
  const std::int64_t d = fmap.dim(0), h = fmap.dim(1), w = fmap.dim(2);
  const auto n = static_cast<std::int64_t>(points.size());
  std::vector<std::vector<BilinearWeights>> weights(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].empty()) {
      throw std::invalid_argument("pool_points: empty point list for entity " +
                                  std::to_string(i));
    }
    weights[i].reserve(points[i].size());
    for (const auto& [px, py] : points[i]) {
      weights[i].push_back(bilinear_weights(px, py, h, w, "pool_points"));
    }
  }
  Tensor out = op_out({n, d}, {&fmap});
  auto om = view(out.node()->values, n, d);
  const auto& fv = fmap.values();
  const std::int64_t hw = h * w;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& ws = weights[static_cast<std::size_t>(i)];
    const double inv = 1.0 / static_cast<double>(ws.size());
    for (std::int64_t c = 0; c < d; ++c) {
      const std::int64_t base = c * hw;
      double acc = 0.0;
      for (const auto& b : ws) {
        acc += b.w00 * fv[base + b.y0 * w + b.x0] + b.w01 * fv[base + b.y0 * w + b.x1] +
               b.w10 * fv[base + b.y1 * w + b.x0] + b.w11 * fv[base + b.y1 * w + b.x1];
      }
      om(i, c) = acc * inv;
    }
  }
  if (out.requires_grad()) {
    out.node()->backprop = [d, h, w, n, weights](TensorNode& self) {
      TensorNode* p = self.parents[0].get();
      if (!p->requires_grad) return;
      ensure_grad(p);
      const std::int64_t hw2 = h * w;
      auto g = view(self.grad, n, d);
      for (std::int64_t i = 0; i < n; ++i) {
        const auto& ws = weights[static_cast<std::size_t>(i)];
        const double inv = 1.0 / static_cast<double>(ws.size());
        for (std::int64_t c = 0; c < d; ++c) {
          const std::int64_t base = c * hw2;
          const double gc = g(i, c) * inv;
          for (const auto& b : ws) {
            p->grad[base + b.y0 * w + b.x0] += gc * b.w00;
            p->grad[base + b.y0 * w + b.x1] += gc * b.w01;
            p->grad[base + b.y1 * w + b.x0] += gc * b.w10;
            p->grad[base + b.y1 * w + b.x1] += gc * b.w11;
          }
        }
      }
    };
  }
  return out;
}

Tensor masked_nll_next(const Tensor& log_probs, const std::vector<int>& targets,
                       const std::vector<std::uint8_t>& mask) {
  check_2d(log_probs, "masked_nll_next");
  const std::int64_t len = log_probs.dim(0), vocab = log_probs.dim(1);
  if (static_cast<std::int64_t>(targets.size()) != len ||
      static_cast<std::int64_t>(mask.size()) != len) {
    throw std::invalid_argument("masked_nll_next: targets/mask length mismatch vs " +
                                shape_str(log_probs.shape()));
  }
  std::vector<std::int64_t> positions;
  for (std::int64_t i = 0; i < len; ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    if (i == 0) {
      throw std::invalid_argument("masked_nll_next: position 0 cannot be supervised");
    }
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= vocab) {
      throw std::invalid_argument("masked_nll_next: target " + std::to_string(t) +
                                  " out of vocab " + std::to_string(vocab));
    }
    positions.push_back(i);
  }
  if (positions.empty()) {
    throw std::invalid_argument("masked_nll_next: no supervised positions");
  }
  Tensor out = op_out({1}, {&log_probs});
  auto lm = log_probs.mat();
  double acc = 0.0;
  for (auto i : positions) acc -= lm(i - 1, targets[static_cast<std::size_t>(i)]);
  const double inv = 1.0 / static_cast<double>(positions.size());
  out.node()->values[0] = acc * inv;
  if (out.requires_grad()) {
    out.node()->backprop = [len, vocab, positions, targets, inv](TensorNode& self) {
      TensorNode* p = self.parents[0].get();
      if (!p->requires_grad) return;
      ensure_grad(p);
      auto g = view(p->grad, len, vocab);
      const double go = self.grad[0] * inv;
      for (auto i : positions) g(i - 1, targets[static_cast<std::size_t>(i)]) -= go;
    };
  }
  return out;
}

void backward(const Tensor& loss, double seed_grad) {
  if (!loss.defined() || loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                (loss.defined() ? shape_str(loss.shape()) : "<empty>"));
  }
  TensorNode* root = loss.node();
  // reverse post-order DFS = topological order (consumers before producers)
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* parent = node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // interior grads are scratch for one sweep; only leaves accumulate across calls
  for (TensorNode* node : order) {
    if (!node->is_leaf) node->grad.resize(0);
  }
  ensure_grad(root);
  root->grad[0] += seed_grad;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (node->backprop && node->requires_grad) {
      ensure_grad(node);
      node->backprop(*node);
    }
  }
}

// ---- parameters ----

Parameter& ParamStore::add(const std::string& name, Tensor t) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->tensor = std::move(t);
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParamStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

const Parameter* ParamStore::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParamStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

void ParamStore::zero_grads() {
  for (auto& p : params_) p->tensor.zero_grad();
}

std::uint64_t tensor_checksum(const Tensor& t) {
  return fnv1a64(ptr_of(t.values()), static_cast<std::size_t>(t.size()) * sizeof(double));
}

std::uint64_t params_checksum(const ParamStore& store) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto* p : store.all()) {
    h = fnv1a64(p->name, h);
    h = fnv1a64(ptr_of(p->tensor.values()),
                static_cast<std::size_t>(p->tensor.size()) * sizeof(double), h);
  }
  return h;
}

}  // namespace sge
