#include "roifuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <Eigen/Core>

namespace roifuse::tensor {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using Strided = Eigen::OuterStride<>;
using ConstBlock = Eigen::Map<const RowMat, 0, Strided>;
using MutBlock = Eigen::Map<RowMat, 0, Strided>;

ConstMap as_matrix(const Tensor& t) { return ConstMap(t.data().data(), t.rows(), t.cols()); }

ConstMap grad_matrix(const Tensor& t) { return ConstMap(t.mutable_grad().data(), t.rows(), t.cols()); }

MutMap mutable_grad_matrix(const Tensor& t) { return MutMap(t.mutable_grad().data(), t.rows(), t.cols()); }

[[noreturn]] void shape_error(const std::string& op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(op + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

void require_rank2(const std::string& op, const Tensor& t) {
  if (t.rank() != 2) throw std::invalid_argument(op + ": expected a matrix, got " + to_string(t.shape()));
}

bool wants_grad(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

Tensor make_output(Shape shape, std::vector<double> data, bool grad) {
  for (double v : data) {
    if (!std::isfinite(v)) throw NonFiniteError("non-finite value produced by tensor op");
  }
  return Tensor(std::move(shape), std::move(data), grad);
}

}  // namespace

struct GradAccess {
  static bool has(const Tensor& t) { return t.impl_ && !t.impl_->grad.empty(); }
};

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Tensor ------------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) : impl_(std::make_shared<Impl>()) {
  for (auto d : shape) {
    if (d == 0) throw std::invalid_argument("tensor dimensions must be positive: " + to_string(shape));
  }
  if (numel(shape) != data.size()) {
    throw std::invalid_argument("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                                to_string(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::size() const { return impl_->data.size(); }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  return s.size() >= 2 ? s[0] : 1;
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  return s.size() >= 2 ? size() / s[0] : s[0];
}

std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() const { return impl_->data; }

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item() on tensor of shape " + to_string(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
void Tensor::set_requires_grad(bool on) { impl_->requires_grad = on; }
bool Tensor::has_grad() const { return GradAccess::has(*this); }
std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::mutable_grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() const {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data, false); }

// ---- Tape --------------------------------------------------------------------

void Tape::record(const Tensor& output, BackwardFn fn) { entries_.push_back({output, std::move(fn)}); }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
  const bool on_tape = std::any_of(entries_.begin(), entries_.end(),
                                   [&](const Entry& e) { return e.output.same(loss); });
  if (!on_tape) throw std::invalid_argument("backward: loss was not produced on this tape");
  Tensor seed = loss;
  seed.mutable_grad()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output.has_grad()) it->fn();
  }
  entries_.clear();
}

// ---- ops ---------------------------------------------------------------------

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  std::vector<double> out(a.rows() * b.cols());
  MutMap(out.data(), a.rows(), b.cols()).noalias() = as_matrix(a) * as_matrix(b);
  const bool grad = wants_grad(tape, {&a, &b});
  Tensor y = make_output({a.rows(), b.cols()}, std::move(out), grad);
  if (grad) {
    tape->record(y, [a, b, y]() mutable {
      const auto dy = grad_matrix(y);
      if (a.requires_grad()) mutable_grad_matrix(a).noalias() += dy * as_matrix(b).transpose();
      if (b.requires_grad()) mutable_grad_matrix(b).noalias() += as_matrix(a).transpose() * dy;
    });
  }
  return y;
}

Tensor linear(Tape* tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank2("linear", x);
  require_rank2("linear", weight);
  if (x.cols() != weight.rows()) shape_error("linear", x, weight);
  if (bias.size() != weight.cols()) shape_error("linear(bias)", weight, bias);
  const std::size_t n = x.rows(), m = weight.cols();
  std::vector<double> out(n * m);
  MutMap y_map(out.data(), n, m);
  y_map.noalias() = as_matrix(x) * as_matrix(weight);
  const Eigen::Map<const Eigen::RowVectorXd> b_row(bias.data().data(), m);
  y_map.rowwise() += b_row;
  const bool grad = wants_grad(tape, {&x, &weight, &bias});
  Tensor y = make_output({n, m}, std::move(out), grad);
  if (grad) {
    tape->record(y, [x, weight, bias, y]() mutable {
      const auto dy = grad_matrix(y);
      if (x.requires_grad()) mutable_grad_matrix(x).noalias() += dy * as_matrix(weight).transpose();
      if (weight.requires_grad()) mutable_grad_matrix(weight).noalias() += as_matrix(x).transpose() * dy;
      if (bias.requires_grad()) {
        Eigen::Map<Eigen::RowVectorXd> db(bias.mutable_grad().data(), bias.size());
        db += dy.colwise().sum();
      }
    });
  }
  return y;
}

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  const bool grad = wants_grad(tape, {&a, &b});
  Tensor y = make_output(a.shape(), std::move(out), grad);
  if (grad) {
    tape->record(y, [a, b, y]() mutable {
      const auto dy = y.grad();
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto g = t->mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
      }
    });
  }
  return y;
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  const bool grad = wants_grad(tape, {&a, &b});
  Tensor y = make_output(a.shape(), std::move(out), grad);
  if (grad) {
    tape->record(y, [a, b, y]() mutable {
      const auto dy = y.grad();
      if (a.requires_grad()) {
        auto g = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        auto g = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * a.data()[i];
      }
    });
  }
  return y;
}

Tensor scale(Tape* tape, const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * a.data()[i];
  const bool grad = wants_grad(tape, {&a});
  Tensor y = make_output(a.shape(), std::move(out), grad);
  if (grad) {
    tape->record(y, [a, y, s]() mutable {
      auto g = a.mutable_grad();
      const auto dy = y.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * dy[i];
    });
  }
  return y;
}

Tensor sum(Tape* tape, const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  const bool grad = wants_grad(tape, {&a});
  Tensor y = make_output({1}, {total}, grad);
  if (grad) {
    tape->record(y, [a, y]() mutable {
      const double dy = y.grad()[0];
      for (auto& g : a.mutable_grad()) g += dy;
    });
  }
  return y;
}

Tensor mean(Tape* tape, const Tensor& a) { return scale(tape, sum(tape, a), 1.0 / static_cast<double>(a.size())); }

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

namespace {
double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}
}  // namespace

Tensor gelu(Tape* tape, const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(a.data()[i]);
  const bool grad = wants_grad(tape, {&a});
  Tensor y = make_output(a.shape(), std::move(out), grad);
  if (grad) {
    tape->record(y, [a, y]() mutable {
      auto g = a.mutable_grad();
      const auto dy = y.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * gelu_derivative(a.data()[i]);
    });
  }
  return y;
}

Tensor softmax_rows(Tape* tape, const Tensor& x) {
  require_rank2("softmax_rows", x);
  const std::size_t n = x.rows(), m = x.cols();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < n; ++r) {
    const double* in = x.data().data() + r * m;
    double* o = out.data() + r * m;
    const double mx = *std::max_element(in, in + m);
    double z = 0.0;
    for (std::size_t c = 0; c < m; ++c) z += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < m; ++c) o[c] /= z;
  }
  const bool grad = wants_grad(tape, {&x});
  Tensor y = make_output(x.shape(), std::move(out), grad);
  if (grad) {
    tape->record(y, [x, y, n, m]() mutable {
      auto g = x.mutable_grad();
      const auto dy = y.grad();
      const auto yv = y.data();
      for (std::size_t r = 0; r < n; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < m; ++c) dot += dy[r * m + c] * yv[r * m + c];
        for (std::size_t c = 0; c < m; ++c) g[r * m + c] += yv[r * m + c] * (dy[r * m + c] - dot);
      }
    });
  }
  return y;
}

Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank2("layer_norm", x);
  const std::size_t n = x.rows(), d = x.cols();
  if (gamma.size() != d || beta.size() != d) shape_error("layer_norm", x, gamma);
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* in = x.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += in[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (in[c] - mu) * inv_std[r];
      out[r * d + c] = gamma.data()[c] * xhat[r * d + c] + beta.data()[c];
    }
  }
  const bool grad = wants_grad(tape, {&x, &gamma, &beta});
  Tensor y = make_output(x.shape(), std::move(out), grad);
  if (grad) {
    tape->record(y, [x, gamma, beta, y, xhat = std::move(xhat), inv_std = std::move(inv_std), n, d]() mutable {
      const auto dy = y.grad();
      if (gamma.requires_grad() || beta.requires_grad()) {
        auto gg = gamma.mutable_grad();
        auto gb = beta.mutable_grad();
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < d; ++c) {
            gg[c] += dy[r * d + c] * xhat[r * d + c];
            gb[c] += dy[r * d + c];
          }
        }
      }
      if (!x.requires_grad()) return;
      auto gx = x.mutable_grad();
      const auto gam = gamma.data();
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t r = 0; r < n; ++r) {
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          const double dxh = dy[r * d + c] * gam[c];
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * xhat[r * d + c];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        for (std::size_t c = 0; c < d; ++c) {
          const double dxh = dy[r * d + c] * gam[c];
          gx[r * d + c] += inv_std[r] * (dxh - mean_dxhat - xhat[r * d + c] * mean_dxhat_xhat);
        }
      }
    });
  }
  return y;
}

Tensor repeat_rows(Tape* tape, const Tensor& row, std::size_t n) {
  const std::size_t c = row.size();
  if (n == 0) throw std::invalid_argument("repeat_rows: count must be positive");
  std::vector<double> out(n * c);
  for (std::size_t r = 0; r < n; ++r) std::copy(row.data().begin(), row.data().end(), out.begin() + r * c);
  const bool grad = wants_grad(tape, {&row});
  Tensor y = make_output({n, c}, std::move(out), grad);
  if (grad) {
    tape->record(y, [row, y, n, c]() mutable {
      auto g = row.mutable_grad();
      const auto dy = y.grad();
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < c; ++j) g[j] += dy[r * c + j];
      }
    });
  }
  return y;
}

Tensor select_groups(Tape* tape, const std::vector<bool>& take_a, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("select_groups", a, b);
  const std::size_t groups = take_a.size();
  if (groups == 0 || a.rows() % groups != 0) {
    throw std::invalid_argument("select_groups: rows not divisible into " + std::to_string(groups) + " groups");
  }
  const std::size_t block = a.size() / groups;
  std::vector<double> out(a.size());
  for (std::size_t g = 0; g < groups; ++g) {
    const auto& src = take_a[g] ? a : b;
    std::copy_n(src.data().begin() + g * block, block, out.begin() + g * block);
  }
  const bool grad = wants_grad(tape, {&a, &b});
  Tensor y = make_output(a.shape(), std::move(out), grad);
  if (grad) {
    tape->record(y, [take_a, a, b, y, block]() mutable {
      const auto dy = y.grad();
      for (std::size_t g = 0; g < take_a.size(); ++g) {
        const Tensor& dst = take_a[g] ? a : b;
        if (!dst.requires_grad()) continue;
        auto gd = dst.mutable_grad();
        for (std::size_t i = g * block; i < (g + 1) * block; ++i) gd[i] += dy[i];
      }
    });
  }
  return y;
}

Tensor attention(Tape* tape, const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 std::size_t groups) {
  require_rank2("attention", q);
  require_rank2("attention", k);
  require_rank2("attention", v);
  const std::size_t c = q.cols();
  if (k.cols() != c || v.cols() != c) shape_error("attention", q, k);
  if (k.rows() != v.rows()) shape_error("attention", k, v);
  if (heads == 0 || c % heads != 0) {
    throw std::invalid_argument("attention: channels " + std::to_string(c) + " not divisible by heads " +
                                std::to_string(heads));
  }
  if (groups == 0 || q.rows() % groups != 0 || k.rows() % groups != 0) {
    throw std::invalid_argument("attention: rows not divisible into " + std::to_string(groups) + " groups");
  }
  const std::size_t nq = q.rows() / groups, nk = k.rows() / groups, d = c / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  std::vector<double> out(q.rows() * c);
  // Attention weights per (group, head), kept for the backward pass.
  std::vector<double> probs(groups * heads * nq * nk);
  RowMat scores(nq, nk);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t h = 0; h < heads; ++h) {
      const ConstBlock qb(q.data().data() + g * nq * c + h * d, nq, d, Strided(c));
      const ConstBlock kb(k.data().data() + g * nk * c + h * d, nk, d, Strided(c));
      const ConstBlock vb(v.data().data() + g * nk * c + h * d, nk, d, Strided(c));
      MutMap p(probs.data() + (g * heads + h) * nq * nk, nq, nk);
      scores.noalias() = (qb * kb.transpose()) * inv_sqrt_d;
      for (std::size_t r = 0; r < nq; ++r) {
        const double mx = scores.row(r).maxCoeff();
        p.row(r) = (scores.row(r).array() - mx).exp();
        p.row(r) /= p.row(r).sum();
      }
      MutBlock ob(out.data() + g * nq * c + h * d, nq, d, Strided(c));
      ob.noalias() = p * vb;
    }
  }
  const bool grad = wants_grad(tape, {&q, &k, &v});
  Tensor y = make_output({q.rows(), c}, std::move(out), grad);
  if (grad) {
    tape->record(y, [q, k, v, y, probs = std::move(probs), groups, heads, nq, nk, c, d, inv_sqrt_d]() mutable {
      RowMat dp(nq, nk), ds(nq, nk);
      const double* dy = y.grad().data();
      double* gq = q.requires_grad() ? q.mutable_grad().data() : nullptr;
      double* gk = k.requires_grad() ? k.mutable_grad().data() : nullptr;
      double* gv = v.requires_grad() ? v.mutable_grad().data() : nullptr;
      for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t h = 0; h < heads; ++h) {
          const ConstBlock qb(q.data().data() + g * nq * c + h * d, nq, d, Strided(c));
          const ConstBlock kb(k.data().data() + g * nk * c + h * d, nk, d, Strided(c));
          const ConstBlock vb(v.data().data() + g * nk * c + h * d, nk, d, Strided(c));
          const ConstBlock dyb(dy + g * nq * c + h * d, nq, d, Strided(c));
          const ConstMap p(probs.data() + (g * heads + h) * nq * nk, nq, nk);
          if (gv) MutBlock(gv + g * nk * c + h * d, nk, d, Strided(c)).noalias() += p.transpose() * dyb;
          dp.noalias() = dyb * vb.transpose();
          for (std::size_t r = 0; r < nq; ++r) {
            const double dot = dp.row(r).dot(p.row(r));
            ds.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
          }
          if (gq) MutBlock(gq + g * nq * c + h * d, nq, d, Strided(c)).noalias() += (ds * kb) * inv_sqrt_d;
          if (gk) MutBlock(gk + g * nk * c + h * d, nk, d, Strided(c)).noalias() += (ds.transpose() * qb) * inv_sqrt_d;
        }
      }
    });
  }
  return y;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double bce_logit_value(double logit, double y) {
  return std::max(logit, 0.0) - logit * y + std::log1p(std::exp(-std::abs(logit)));
}

double smooth_l1_value(double d) {
  const double a = std::abs(d);
  return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

Tensor bce_with_logits(Tape* tape, const Tensor& logits, std::span<const double> labels) {
  if (logits.size() != labels.size()) {
    throw std::invalid_argument("bce_with_logits: " + std::to_string(logits.size()) + " logits vs " +
                                std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = labels.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += bce_logit_value(logits.data()[i], labels[i]);
  const bool grad = wants_grad(tape, {&logits});
  Tensor y = make_output({1}, {total / static_cast<double>(n)}, grad);
  if (grad) {
    tape->record(y, [logits, y, lab = std::vector<double>(labels.begin(), labels.end()), n]() mutable {
      const double dy = y.grad()[0] / static_cast<double>(n);
      auto g = logits.mutable_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += dy * (sigmoid(logits.data()[i]) - lab[i]);
    });
  }
  return y;
}

Tensor smooth_l1_rows(Tape* tape, const Tensor& pred, std::span<const double> target,
                      const std::vector<bool>& mask) {
  require_rank2("smooth_l1_rows", pred);
  if (target.size() != pred.size() || mask.size() != pred.rows()) {
    throw std::invalid_argument("smooth_l1_rows: prediction " + to_string(pred.shape()) + " vs " +
                                std::to_string(target.size()) + " targets / " + std::to_string(mask.size()) +
                                " mask rows");
  }
  const std::size_t m = pred.cols();
  const auto selected = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  double total = 0.0;
  for (std::size_t r = 0; r < mask.size(); ++r) {
    if (!mask[r]) continue;
    for (std::size_t c = 0; c < m; ++c) total += smooth_l1_value(pred.data()[r * m + c] - target[r * m + c]);
  }
  const double denom = selected == 0 ? 1.0 : static_cast<double>(selected);
  const bool grad = wants_grad(tape, {&pred}) && selected > 0;
  Tensor y = make_output({1}, {total / denom}, grad);
  if (grad) {
    tape->record(y, [pred, y, tgt = std::vector<double>(target.begin(), target.end()), mask, m, denom]() mutable {
      const double dy = y.grad()[0] / denom;
      auto g = pred.mutable_grad();
      for (std::size_t r = 0; r < mask.size(); ++r) {
        if (!mask[r]) continue;
        for (std::size_t c = 0; c < m; ++c) {
          const double diff = pred.data()[r * m + c] - tgt[r * m + c];
          g[r * m + c] += dy * (std::abs(diff) < 1.0 ? diff : (diff > 0.0 ? 1.0 : -1.0));
        }
      }
    });
  }
  return y;
}

// ---- parameters ----------------------------------------------------------------

Tensor& ParameterSet::add(const std::string& name, Tensor tensor) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  tensor.set_requires_grad(true);
  params_.push_back({name, std::move(tensor)});
  return params_.back().tensor;
}

bool ParameterSet::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name == name; });
}

const Tensor& ParameterSet::get(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw std::out_of_range("no parameter named " + name);
}

Tensor& ParameterSet::get(const std::string& name) {
  return const_cast<Tensor&>(static_cast<const ParameterSet&>(*this).get(name));
}

std::size_t ParameterSet::num_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Tensor xavier_uniform(std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(fan_in * fan_out);
  for (auto& x : w) x = dist(rng);
  return Tensor({fan_in, fan_out}, std::move(w));
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace roifuse::tensor
