#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace roifuse::tensor {

using Shape = std::vector<std::size_t>;

/// Raised by any op whose output contains NaN or infinity.
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major float64 tensor. Copies share storage, so a Tensor held
/// by a Tape and by the caller refer to the same values and gradient.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t i) const { return shape().at(i); }
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  /// Row count / column count for rank-2 tensors (rank-1 is a single row).
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data() const;
  double item() const;
  double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad() const;
  void zero_grad() const;

  /// Fresh storage with the same values and no gradient participation.
  Tensor detach() const;
  /// Same storage identity.
  bool same(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;

  friend class Tape;
  friend struct GradAccess;
};

/// Ordered record of differentiable operations. Ops append entries in
/// execution order; backward() replays them in exact reverse and clears
/// the record.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  /// Records `fn` as the backward step producing `output`. Ops call this
  /// only when one of their inputs requires a gradient.
  void record(const Tensor& output, BackwardFn fn);

  /// Seeds d(loss)/d(loss) = 1 and propagates. Throws if the loss is not a
  /// single value or was not produced on this tape.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

 private:
  struct Entry {
    Tensor output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
};

// ---- differentiable operations -------------------------------------------
// A null tape means inference: nothing is recorded.

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);
/// x W + b with x [n x d_in], W [d_in x d_out], b [d_out].
Tensor linear(Tape* tape, const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& a, double s);
Tensor sum(Tape* tape, const Tensor& a);
Tensor mean(Tape* tape, const Tensor& a);
Tensor gelu(Tape* tape, const Tensor& a);
Tensor softmax_rows(Tape* tape, const Tensor& x);
Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
/// Repeats a [1 x C] row `n` times.
Tensor repeat_rows(Tape* tape, const Tensor& row, std::size_t n);
/// Row-blockwise select: block g of `rows_per_group` rows comes from `a`
/// where take_a[g] is true and from `b` otherwise.
Tensor select_groups(Tape* tape, const std::vector<bool>& take_a, const Tensor& a, const Tensor& b);

/// Scaled dot-product attention over already-projected inputs. Rows of q
/// are split into `groups` equal blocks, and likewise rows of k and v;
/// block g of q only attends to block g of k/v. Each of `heads` heads
/// works on a contiguous slice of C / heads columns.
Tensor attention(Tape* tape, const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 std::size_t groups = 1);

/// Mean binary cross entropy on logits (stable form). logits: [n x 1].
Tensor bce_with_logits(Tape* tape, const Tensor& logits, std::span<const double> labels);
/// Per-row sum of smooth-L1(pred - target) (unit threshold), averaged over
/// rows where mask is true; zero when no row is selected.
Tensor smooth_l1_rows(Tape* tape, const Tensor& pred, std::span<const double> target,
                      const std::vector<bool>& mask);

// ---- scalar helpers shared with oracles -----------------------------------

double gelu_value(double x);
double smooth_l1_value(double d);
double bce_logit_value(double logit, double y);
double sigmoid(double x);

// ---- parameters ------------------------------------------------------------

struct Parameter {
  std::string name;
  Tensor tensor;
};

/// Ordered, uniquely named set of learnable tensors.
class ParameterSet {
 public:
  Tensor& add(const std::string& name, Tensor tensor);
  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  std::vector<Parameter>& items() { return params_; }
  const std::vector<Parameter>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t num_values() const;
  void zero_grad();

 private:
  std::vector<Parameter> params_;
};

/// Uniform +-sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out);

/// Deterministic 64-bit mixing for deriving per-item seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace roifuse::tensor
