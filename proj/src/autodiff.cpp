#include "lscm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lscm/errors.hpp"
#include "lscm/kernels.hpp"
#include "lscm/scm.hpp"

namespace lscm::ad {

const Matrix& Var::value() const { return tape_->value(*this); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.tape() != this) throw ArgumentError("autodiff: input belongs to a different tape");
    needs = needs || nodes_[in.id()].requires_grad;
  }
  if (needs && !backward) throw ArgumentError("autodiff: op has no adjoint");
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, needs});
  return Var(this, nodes_.size() - 1);
}

Matrix& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id()];
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var scalar) {
  if (scalar.tape() != this) throw ArgumentError("backward: variable from another tape");
  if (value(scalar).size() != 1) throw ArgumentError("backward: target must be 1x1");
  for (auto& n : nodes_) n.grad = Matrix();
  if (!nodes_[scalar.id()].requires_grad) return;
  nodes_[scalar.id()].grad = Matrix(1, 1, 1.0);
  for (std::size_t id = scalar.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    active_ = id;
    n.backward(*this, n.grad);
  }
}

namespace {

bool wants(Tape& t, Var v) { return t.requires_grad(v); }

void accumulate(Tape& t, Var v, const Matrix& g) {
  if (!wants(t, v)) return;
  Matrix& buf = t.grad_buffer(v);
  if (buf.size() == 1 && g.size() != 1) {
    double s = 0.0;
    for (double x : g.flat()) s += x;
    buf[0] += s;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

enum class Shape { same, a_scalar, b_scalar };

Shape broadcast_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.same_shape(b)) return Shape::same;
  if (a.size() == 1) return Shape::a_scalar;
  if (b.size() == 1) return Shape::b_scalar;
  throw ArgumentError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                      shape_string(b));
}

template <class F>
Matrix zip(const Matrix& a, const Matrix& b, Shape shape, F f) {
  const Matrix& big = shape == Shape::a_scalar ? b : a;
  Matrix out(big.rows(), big.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = shape == Shape::a_scalar ? a[0] : a[i];
    const double y = shape == Shape::b_scalar ? b[0] : b[i];
    out[i] = f(x, y);
  }
  return out;
}

// Elementwise unary op; df(x, y) is the local derivative given input and output.
template <class F, class DF>
Var unary(Var a, F f, DF df) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return a.tape()->record(std::move(y), {a},
                          [a, df](Tape& t, const Matrix& g) {
                            const Matrix& x = t.value(a);
                            const Matrix& y = t.active_value();
                            Matrix& ga = t.grad_buffer(a);
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
                          });
}

}  // namespace

Var add(Var a, Var b) {
  const Shape s = broadcast_shape(a.value(), b.value(), "add");
  Matrix out = zip(a.value(), b.value(), s, [](double x, double y) { return x + y; });
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    accumulate(t, a, g);
    accumulate(t, b, g);
  });
}

Var sub(Var a, Var b) {
  const Shape s = broadcast_shape(a.value(), b.value(), "sub");
  Matrix out = zip(a.value(), b.value(), s, [](double x, double y) { return x - y; });
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    accumulate(t, a, g);
    if (wants(t, b)) accumulate(t, b, g * -1.0);
  });
}

Var mul(Var a, Var b) {
  const Shape s = broadcast_shape(a.value(), b.value(), "mul");
  Matrix out = zip(a.value(), b.value(), s, [](double x, double y) { return x * y; });
  return a.tape()->record(std::move(out), {a, b}, [a, b, s](Tape& t, const Matrix& g) {
    auto times = [](double x, double y) { return x * y; };
    // g has the broadcast shape; a 1x1 partner is applied as a scalar and a
    // 1x1 receiver is reduced inside accumulate().
    if (wants(t, a)) {
      accumulate(t, a, zip(g, t.value(b), s == Shape::b_scalar ? Shape::b_scalar : Shape::same, times));
    }
    if (wants(t, b)) {
      accumulate(t, b, zip(g, t.value(a), s == Shape::a_scalar ? Shape::b_scalar : Shape::same, times));
    }
  });
}

Var operator+(Var a, Var b) { return add(a, b); }
Var operator-(Var a, Var b) { return sub(a, b); }
Var operator*(Var a, Var b) { return mul(a, b); }

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double s) {
  return a.tape()->record(a.value() * s, {a},
                          [a, s](Tape& t, const Matrix& g) { accumulate(t, a, g * s); });
}

Var add_scalar(Var a, double s) {
  Matrix out = a.value();
  for (auto& v : out.flat()) v += s;
  return a.tape()->record(std::move(out), {a},
                          [a](Tape& t, const Matrix& g) { accumulate(t, a, g); });
}

Var add_row(Var a, Var bias) {
  const Matrix& av = a.value();
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    throw ArgumentError("add_row: bias " + shape_string(bv) + " for " + shape_string(av));
  }
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
  }
  return a.tape()->record(std::move(out), {a, bias}, [a, bias](Tape& t, const Matrix& g) {
    accumulate(t, a, g);
    if (wants(t, bias)) {
      Matrix& gb = t.grad_buffer(bias);
      for (std::size_t r = 0; r < g.rows(); ++r) kernels::axpy(g.cols(), 1.0, g.row(r).data(), gb.data());
    }
  });
}

Var matmul(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ArgumentError("matmul: " + shape_string(av) + " x " + shape_string(bv));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Matrix out(m, n);
  kernels::gemm_nn(m, n, k, av.data(), bv.data(), out.data(), false);
  return a.tape()->record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Matrix& g) {
    if (wants(t, a)) {
      kernels::gemm_nt(m, k, n, g.data(), t.value(b).data(), t.grad_buffer(a).data(), true);
    }
    if (wants(t, b)) {
      kernels::gemm_tn(k, n, m, t.value(a).data(), g.data(), t.grad_buffer(b).data(), true);
    }
  });
}

Var transpose(Var a) {
  return a.tape()->record(a.value().transposed(), {a}, [a](Tape& t, const Matrix& g) {
    accumulate(t, a, g.transposed());
  });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  Matrix out = a.value();
  out.reshape(rows, cols);
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var slice(Var a, std::size_t begin, std::size_t count) {
  const Matrix& av = a.value();
  if (begin + count > av.size()) throw ArgumentError("slice: out of range");
  Matrix out(1, count);
  std::copy_n(av.data() + begin, count, out.data());
  return a.tape()->record(std::move(out), {a}, [a, begin](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[begin + i] += g[i];
  });
}

Var scatter_strict_lower(Var v, std::size_t d) {
  const Matrix& vv = v.value();
  if (vv.size() != scm::num_free_entries(d)) {
    throw ArgumentError("scatter_strict_lower: expected " +
                        std::to_string(scm::num_free_entries(d)) + " entries");
  }
  Matrix out(d, d);
  std::size_t idx = 0;
  for (std::size_t r = 1; r < d; ++r)
    for (std::size_t c = 0; c < r; ++c) out(r, c) = vv[idx++];
  return v.tape()->record(std::move(out), {v}, [v, d](Tape& t, const Matrix& g) {
    Matrix& gv = t.grad_buffer(v);
    std::size_t idx = 0;
    for (std::size_t r = 1; r < d; ++r)
      for (std::size_t c = 0; c < r; ++c) gv[idx++] += g(r, c);
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().flat()) s += x;
  return a.tape()->record(Matrix(1, 1, s), {a}, [a](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_buffer(a);
    for (auto& x : ga.flat()) x += g[0];
  });
}

Var sum_squares(Var a) {
  const Matrix& av = a.value();
  const double s = kernels::dot(av.size(), av.data(), av.data());
  return a.tape()->record(Matrix(1, 1, s), {a}, [a](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(a);
    kernels::axpy(av.size(), 2.0 * g[0], av.data(), t.grad_buffer(a).data());
  });
}

Var dot(Var a, Var b) {
  if (!a.value().same_shape(b.value())) throw ArgumentError("dot: shape mismatch");
  const double s = kernels::dot(a.value().size(), a.value().data(), b.value().data());
  return a.tape()->record(Matrix(1, 1, s), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (wants(t, a)) {
      kernels::axpy(t.value(b).size(), g[0], t.value(b).data(), t.grad_buffer(a).data());
    }
    if (wants(t, b)) {
      kernels::axpy(t.value(a).size(), g[0], t.value(a).data(), t.grad_buffer(b).data());
    }
  });
}

Var sq_error_sum(Var a, const Matrix& target) {
  const Matrix& av = a.value();
  if (!av.same_shape(target)) throw ArgumentError("sq_error_sum: shape mismatch");
  const double s = kernels::sum_sq_diff(av.size(), av.data(), target.data());
  // target is referenced, not copied: it must outlive the tape's backward pass.
  return a.tape()->record(Matrix(1, 1, s), {a}, [a, tp = &target](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(a);
    Matrix& ga = t.grad_buffer(a);
    const double c = 2.0 * g[0];
    for (std::size_t i = 0; i < av.size(); ++i) ga[i] += c * (av[i] - (*tp)[i]);
  });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(Var a) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  kernels::tanh(x.size(), x.data(), y.data());
  return a.tape()->record(std::move(y), {a}, [a](Tape& t, const Matrix& g) {
    const Matrix& y = t.active_value();
    Matrix& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var logistic(Var a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var log_horseshoe_kernel(Var a, double scale, double min_abs) {
  const double two_s2 = 2.0 * scale * scale;
  auto f = [two_s2, min_abs](double x) {
    const double ax = std::max(std::abs(x), min_abs);
    return std::log(std::log1p(two_s2 / (ax * ax)));
  };
  auto df = [two_s2, min_abs](double x, double) {
    const double ax = std::abs(x);
    if (ax <= min_abs) return 0.0;
    const double r = two_s2 / (ax * ax);
    // d/dx log(log(1 + r)) with dr/dx = -2 r / x
    return (1.0 / std::log1p(r)) * (1.0 / (1.0 + r)) * (-2.0 * r / x);
  };
  return unary(a, f, df);
}

namespace {

Matrix row_lse(const Matrix& x) {
  Matrix out(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - mx);
    out(r, 0) = mx + std::log(s);
  }
  return out;
}

Matrix col_lse(const Matrix& x) {
  Matrix out(1, x.cols());
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < x.rows(); ++r) mx = std::max(mx, x(r, c));
    double s = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) s += std::exp(x(r, c) - mx);
    out(0, c) = mx + std::log(s);
  }
  return out;
}

}  // namespace

Var logsumexp_rows(Var a) {
  Matrix out = row_lse(a.value());
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    const Matrix& lse = t.active_value();
    const Matrix& x = t.value(a);
    Matrix& ga = t.grad_buffer(a);
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) ga(r, c) += g(r, 0) * std::exp(x(r, c) - lse(r, 0));
  });
}

Var log_normalize_rows(Var a) {
  const Matrix lse = row_lse(a.value());
  Matrix y = a.value();
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) -= lse(r, 0);
  return a.tape()->record(std::move(y), {a}, [a](Tape& t, const Matrix& g) {
    const Matrix& y = t.active_value();
    Matrix& ga = t.grad_buffer(a);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) gs += g(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += g(r, c) - std::exp(y(r, c)) * gs;
    }
  });
}

Var log_normalize_cols(Var a) {
  const Matrix lse = col_lse(a.value());
  Matrix y = a.value();
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) -= lse(0, c);
  return a.tape()->record(std::move(y), {a}, [a](Tape& t, const Matrix& g) {
    const Matrix& y = t.active_value();
    Matrix& ga = t.grad_buffer(a);
    for (std::size_t c = 0; c < y.cols(); ++c) {
      double gs = 0.0;
      for (std::size_t r = 0; r < y.rows(); ++r) gs += g(r, c);
      for (std::size_t r = 0; r < y.rows(); ++r) ga(r, c) += g(r, c) - std::exp(y(r, c)) * gs;
    }
  });
}

Var stop_gradient(Var a) { return a.tape()->constant(a.value()); }

Var straight_through(Var soft, const Matrix& hard) {
  if (!soft.value().same_shape(hard)) throw ArgumentError("straight_through: shape mismatch");
  return soft.tape()->record(hard, {soft},
                             [soft](Tape& t, const Matrix& g) { accumulate(t, soft, g); });
}

Var ancestral_sample(Var w, Var log_sigma, const Matrix& noise, const Matrix& masks,
                     const Matrix* clamp_values) {
  const Matrix& wv = w.value();
  if (log_sigma.value().size() != 1) throw ArgumentError("ancestral_sample: log_sigma not 1x1");
  const double sigma = std::exp(log_sigma.value()[0]);
  Matrix z =
      scm::ancestral_sample_rows(wv, scm::NoiseScale{log_sigma.value()[0]}, noise, masks,
                                 clamp_values);
  const auto order = *scm::topological_order(wv);
  const bool clamped = clamp_values != nullptr;
  return w.tape()->record(
      std::move(z), {w, log_sigma},
      [w, log_sigma, noise, masks, clamped, sigma, order](Tape& t, const Matrix& g) {
        const Matrix& z = t.active_value();
        const Matrix& wv = t.value(w);
        const std::size_t d = wv.rows();
        const bool want_w = t.requires_grad(w);
        const bool want_s = t.requires_grad(log_sigma);
        Matrix gw_local(d, d);
        double gs = 0.0;
        std::vector<double> ge(d);
        for (std::size_t r = 0; r < z.rows(); ++r) {
          // Adjoint of z (I - W_r) = e: ge (I - W_r)^T = gz, in reverse order.
          for (std::size_t oi = d; oi-- > 0;) {
            const std::size_t i = order[oi];
            double acc = g(r, i);
            for (std::size_t k = 0; k < d; ++k) {
              if (masks(r, k) == 0.0) acc += wv(i, k) * ge[k];
            }
            ge[i] = acc;
          }
          for (std::size_t k = 0; k < d; ++k) {
            const bool intervened = masks(r, k) != 0.0;
            if (!intervened && want_w) {
              for (std::size_t j = 0; j < d; ++j) gw_local(j, k) += z(r, j) * ge[k];
            }
            if (!(intervened && clamped)) gs += ge[k] * sigma * noise(r, k);
          }
        }
        if (want_w) accumulate(t, w, gw_local);
        if (want_s) t.grad_buffer(log_sigma)[0] += gs;
      });
}

// ---------------------------------------------------------------------------

void ParamStore::add(std::string name, Matrix value) {
  if (contains(name)) throw ArgumentError("ParamStore: duplicate name '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(value));
}

bool ParamStore::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first == name; });
}

Matrix& ParamStore::at(const std::string& name) {
  for (auto& e : entries_)
    if (e.first == name) return e.second;
  throw ArgumentError("ParamStore: no entry named '" + name + "'");
}

const Matrix& ParamStore::at(const std::string& name) const {
  return const_cast<ParamStore*>(this)->at(name);
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

bool ParamStore::same_layout(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first != other.entries_[i].first) return false;
    if (!entries_[i].second.same_shape(other.entries_[i].second)) return false;
  }
  return true;
}

bool ParamStore::all_finite() const {
  return std::all_of(entries_.begin(), entries_.end(),
                     [](const auto& e) { return lscm::all_finite(e.second); });
}

ParamStore ParamStore::zeros_like() const {
  ParamStore out;
  for (const auto& [name, m] : entries_) out.add(name, Matrix(m.rows(), m.cols()));
  return out;
}

ParamVars::ParamVars(Tape& tape, const ParamStore& params) : params_(&params) {
  for (const auto& [name, m] : params.entries()) vars_.emplace_back(name, tape.variable(m));
}

Var ParamVars::operator[](const std::string& name) const {
  for (const auto& [n, v] : vars_)
    if (n == name) return v;
  throw ArgumentError("ParamVars: no parameter named '" + name + "'");
}

bool ParamVars::contains(const std::string& name) const { return params_->contains(name); }

GradStore ParamVars::gradients() const {
  GradStore out;
  for (const auto& [name, v] : vars_) {
    const Matrix& g = v.tape()->grad(v);
    out.add(name, g.empty() ? Matrix(v.rows(), v.cols()) : g);
  }
  return out;
}

Evaluation grad(const LossProgram& program, const ParamStore& params) {
  Tape tape;
  ParamVars vars(tape, params);
  Var loss = program(tape, vars);
  if (loss.value().size() != 1) throw ArgumentError("grad: program must return a 1x1 value");
  tape.backward(loss);
  return Evaluation{loss.value()[0], vars.gradients()};
}

double evaluate(const LossProgram& program, const ParamStore& params) {
  Tape tape;
  ParamVars vars(tape, params);
  return program(tape, vars).value()[0];
}

AdamState adam_init(const ParamStore& params) {
  return AdamState{params.zeros_like(), params.zeros_like(), 0};
}

void adam_step(ParamStore& params, const GradStore& grads, AdamState& state, double lr,
               Direction direction, const AdamConfig& config) {
  if (!params.same_layout(grads) || !params.same_layout(state.m)) {
    throw ArgumentError("adam_step: parameter/gradient layout mismatch");
  }
  if (!(lr > 0.0)) throw ArgumentError("adam_step: learning rate must be positive");
  for (const auto& [name, g] : grads.entries()) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw NumericalError("adam_step: non-finite gradient in '" + name + "' at index " +
                             std::to_string(i));
      }
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  const double sign = direction == Direction::ascend ? 1.0 : -1.0;
  auto& pe = params.entries();
  auto& me = state.m.entries();
  auto& ve = state.v.entries();
  const auto& ge = grads.entries();
  for (std::size_t e = 0; e < pe.size(); ++e) {
    Matrix& p = pe[e].second;
    Matrix& m = me[e].second;
    Matrix& v = ve[e].second;
    const Matrix& g = ge[e].second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] += sign * lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

GradCheckReport check_gradients(const LossProgram& program, const ParamStore& params,
                                double step, double tolerance, const GradCheckOptions& options,
                                const GradStore* analytic) {
  GradStore computed;
  if (analytic == nullptr) {
    computed = grad(program, params).grads;
    analytic = &computed;
  }
  if (!analytic->same_layout(params)) throw ArgumentError("check_gradients: layout mismatch");

  GradCheckReport report;
  auto consider = [&](double a, double n, const std::string& name, std::size_t index) {
    const double denom = std::max({std::abs(a), std::abs(n), options.abs_floor});
    const double rel = std::abs(a - n) / denom;
    if (report.probes == 0 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_param = name;
      report.worst_index = index;
      report.analytic = a;
      report.numeric = n;
    }
    ++report.probes;
  };

  ParamStore probe = params;
  if (params.total_size() <= options.max_coordinates) {
    for (std::size_t e = 0; e < params.entries().size(); ++e) {
      const auto& name = params.entries()[e].first;
      Matrix& m = probe.entries()[e].second;
      for (std::size_t i = 0; i < m.size(); ++i) {
        const double orig = m[i];
        m[i] = orig + step;
        const double fp = evaluate(program, probe);
        m[i] = orig - step;
        const double fm = evaluate(program, probe);
        m[i] = orig;
        consider(analytic->entries()[e].second[i], (fp - fm) / (2.0 * step), name, i);
      }
    }
  } else {
    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t k = 0; k < options.random_directions; ++k) {
      ParamStore dir = params.zeros_like();
      double norm2 = 0.0;
      for (auto& [name, m] : dir.entries())
        for (auto& v : m.flat()) {
          v = normal(rng);
          norm2 += v * v;
        }
      const double inv = 1.0 / std::sqrt(norm2);
      double directional = 0.0;
      for (std::size_t e = 0; e < dir.entries().size(); ++e) {
        Matrix& dm = dir.entries()[e].second;
        const Matrix& gm = analytic->entries()[e].second;
        for (std::size_t i = 0; i < dm.size(); ++i) {
          dm[i] *= inv;
          directional += dm[i] * gm[i];
        }
      }
      auto shifted = [&](double h) {
        ParamStore p = params;
        for (std::size_t e = 0; e < p.entries().size(); ++e) {
          Matrix& pm = p.entries()[e].second;
          const Matrix& dm = dir.entries()[e].second;
          for (std::size_t i = 0; i < pm.size(); ++i) pm[i] += h * dm[i];
        }
        return evaluate(program, p);
      };
      consider(directional, (shifted(step) - shifted(-step)) / (2.0 * step), "<direction>", k);
    }
  }
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace lscm::ad
