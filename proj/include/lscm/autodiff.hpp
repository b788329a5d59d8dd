#pragma once

// Reverse-mode differentiation over dense matrices.
//
// A Tape records matrix-valued nodes in creation order; backward() walks them
// in reverse. The op vocabulary is closed: every op below registers its own
// adjoint, and Tape::record refuses a node that needs a gradient but has no
// adjoint, so an unsupported primitive fails at construction time instead of
// silently producing zero gradients.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lscm/matrix.hpp"

namespace lscm::ad {

class Tape;

class Var {
 public:
  Var() = default;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Adjoint of one node: reads upstream gradient, accumulates into inputs.
  using Backward = std::function<void(Tape& tape, const Matrix& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);

  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);

  const Matrix& value(Var v) const { return nodes_[v.id()].value; }
  // Gradient of the last backward() target; empty matrix if never reached.
  const Matrix& grad(Var v) const { return nodes_[v.id()].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  // Accumulation buffer for an input's gradient, allocated on first use.
  Matrix& grad_buffer(Var v);

  void backward(Var scalar);
  std::size_t size() const { return nodes_.size(); }
  // Inside an adjoint: the value of the node being differentiated.
  const Matrix& active_value() const { return nodes_[active_].value; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  std::size_t active_ = 0;
};

// Elementwise binary ops accept equal shapes or a 1x1 operand on either side.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
// a[r x c] + bias[1 x c] broadcast over rows.
Var add_row(Var a, Var bias);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, std::size_t rows, std::size_t cols);
// Flat slice [begin, begin + count) as a 1 x count row.
Var slice(Var a, std::size_t begin, std::size_t count);
// Scatter a 1 x d(d-1)/2 row into the strictly lower triangle, row-major.
Var scatter_strict_lower(Var v, std::size_t d);

Var sum(Var a);
Var sum_squares(Var a);
Var dot(Var a, Var b);
// sum((a - target)^2) with a constant target.
Var sq_error_sum(Var a, const Matrix& target);

Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var square(Var a);
Var logistic(Var a);
// log(log(1 + 2 scale^2 / x^2)) with |x| clamped below at min_abs.
Var log_horseshoe_kernel(Var a, double scale, double min_abs);

// Per-row log-sum-exp as an r x 1 column.
Var logsumexp_rows(Var a);
Var log_normalize_rows(Var a);
Var log_normalize_cols(Var a);

Var stop_gradient(Var a);
// Forward value is `hard`; the adjoint passes straight through to `soft`.
Var straight_through(Var soft, const Matrix& hard);

// Batched ancestral sampling Z = Z * W_r + E_r, one row per data point, where
// W_r is w with the columns flagged in masks.row(r) zeroed and
// E_r = exp(log_sigma) * noise.row(r), except intervened coordinates take
// clamp_values when provided. w must have acyclic support.
Var ancestral_sample(Var w, Var log_sigma, const Matrix& noise, const Matrix& masks,
                     const Matrix* clamp_values = nullptr);

// Named parameter collections.
class ParamStore {
 public:
  void add(std::string name, Matrix value);
  bool contains(const std::string& name) const;
  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;
  const std::vector<std::pair<std::string, Matrix>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Matrix>>& entries() { return entries_; }
  std::size_t total_size() const;
  bool same_layout(const ParamStore& other) const;
  bool all_finite() const;
  // Same names and shapes, zero values.
  ParamStore zeros_like() const;

  bool operator==(const ParamStore&) const = default;

 private:
  std::vector<std::pair<std::string, Matrix>> entries_;
};

using GradStore = ParamStore;

// Parameters bound onto a tape as differentiable leaves.
class ParamVars {
 public:
  ParamVars(Tape& tape, const ParamStore& params);
  Var operator[](const std::string& name) const;
  bool contains(const std::string& name) const;
  GradStore gradients() const;

 private:
  const ParamStore* params_;
  std::vector<std::pair<std::string, Var>> vars_;
};

using LossProgram = std::function<Var(Tape&, const ParamVars&)>;

struct Evaluation {
  double value = 0.0;
  GradStore grads;
};

// Value and exact reverse-mode gradient of a scalar program.
Evaluation grad(const LossProgram& program, const ParamStore& params);
double evaluate(const LossProgram& program, const ParamStore& params);

struct AdamState {
  ParamStore m;
  ParamStore v;
  std::uint64_t step = 0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState adam_init(const ParamStore& params);

enum class Direction { descend, ascend };

// One Adam update. A non-finite gradient rejects the step (params and state
// untouched) with NumericalError naming the offending entry.
void adam_step(ParamStore& params, const GradStore& grads, AdamState& state, double lr,
               Direction direction = Direction::descend, const AdamConfig& config = {});

struct GradCheckOptions {
  // Coordinates are probed one by one up to this many entries; larger stores
  // are probed along random unit directions instead.
  std::size_t max_coordinates = 4096;
  std::size_t random_directions = 64;
  std::uint64_t seed = 0;
  // Denominator floor of the relative error, |a - n| / max(|a|, |n|, floor).
  double abs_floor = 1e-6;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;  // coordinate, or probe number for directions
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t probes = 0;
  bool passed = false;
};

// Central finite differences against the analytic gradient. `analytic`
// defaults to grad(program, params) and exists so corrupted gradients can be
// checked as a negative control.
GradCheckReport check_gradients(const LossProgram& program, const ParamStore& params,
                                double step, double tolerance, const GradCheckOptions& options = {},
                                const GradStore* analytic = nullptr);

}  // namespace lscm::ad
