#ifndef GEOINV_INVERSE_HPP
#define GEOINV_INVERSE_HPP

#include <chrono>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>

#include "geoinv/cholesky.hpp"
#include "geoinv/exact_sum.hpp"
#include "geoinv/forward.hpp"

namespace geoinv {

// ---------------------------------------------------------------------------
// Model maps

enum class MapKind { identity, exp, vel_to_cond, slowness_squared };

/// Pointwise map from model values to the physical coefficient a forward
/// problem consumes, with its diagonal derivative.
struct ModelMap {
  MapKind kind = MapKind::identity;
  double a = 0.1, b = 1.0, c = 3.0;  ///< vel_to_cond parameters

  static ModelMap identity() { return {}; }
  static ModelMap exponential() { return {MapKind::exp}; }
  static ModelMap vel_to_cond(double a = 0.1, double b = 1.0, double c = 3.0) {
    return {MapKind::vel_to_cond, a, b, c};
  }
  static ModelMap slowness_squared() { return {MapKind::slowness_squared}; }

  struct Applied {
    Vector values;
    Vector derivative;
  };

  Applied apply(std::span<const double> m) const {
    Applied r{Vector(m.size()), Vector(m.size())};
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double x = m[i];
      require(std::isfinite(x), Errc::invalid_argument, "model values must be finite");
      switch (kind) {
        case MapKind::identity:
          r.values[i] = x;
          r.derivative[i] = 1.0;
          break;
        case MapKind::exp:
          r.values[i] = std::exp(x);
          r.derivative[i] = r.values[i];
          break;
        case MapKind::vel_to_cond: {
          // sigma(m) = (2 - m/c) ((b - a)/2 (tanh(10 (c - m)) + 1) + a)
          const double t = std::tanh(10.0 * (c - x));
          const double p = 2.0 - x / c;
          const double q = 0.5 * (b - a) * (t + 1.0) + a;
          r.values[i] = p * q;
          r.derivative[i] = -q / c + p * 0.5 * (b - a) * (-10.0) * (1.0 - t * t);
          break;
        }
        case MapKind::slowness_squared:
          require(x > 0.0, Errc::invalid_coefficient, "velocity must be positive for the slowness map");
          r.values[i] = 1.0 / (x * x);
          r.derivative[i] = -2.0 / (x * x * x);
          break;
      }
    }
    return r;
  }

  std::string name() const {
    switch (kind) {
      case MapKind::identity: return "identity";
      case MapKind::exp: return "exp";
      case MapKind::vel_to_cond: return "vel_to_cond";
      case MapKind::slowness_squared: return "slowness_squared";
    }
    return "?";
  }
};

inline ModelMap::Applied model_map_apply(const ModelMap& map, std::span<const double> m) { return map.apply(m); }

inline ModelMap model_map_from_string(const std::string& s) {
  if (s == "identity") return ModelMap::identity();
  if (s == "exp") return ModelMap::exponential();
  if (s == "vel_to_cond") return ModelMap::vel_to_cond();
  if (s == "slowness_squared") return ModelMap::slowness_squared();
  throw Error(Errc::invalid_argument, "unknown model map '" + s + "'");
}

// ---------------------------------------------------------------------------
// Misfits

enum class MisfitKind { weighted_l2, smooth_l1 };

struct MisfitValue {
  double value = 0.0;
  Vector residual;   ///< predicted - observed
  Vector gradient;   ///< d(value)/d(predicted)
  Vector gn_weight;  ///< diagonal second derivative (Gauss-Newton data weighting)
};

/// weighted_l2: 1/2 ||w o r||^2. smooth_l1: sum w (sqrt(r^2 + eps^2) - eps).
/// Complex data stored as (re, im) pairs is handled componentwise, which for
/// weighted_l2 is exactly 1/2 sum w^2 |r|^2.
inline MisfitValue misfit_eval(MisfitKind kind, std::span<const double> predicted, std::span<const double> observed,
                               std::span<const double> weights, double eps = 1e-3) {
  require(predicted.size() == observed.size() && observed.size() == weights.size(), Errc::dimension_mismatch,
          "predicted, observed and weights must have equal length");
  MisfitValue out;
  const std::size_t n = predicted.size();
  out.residual.resize(n);
  out.gradient.resize(n);
  out.gn_weight.resize(n);
  Vector parts(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = predicted[i] - observed[i];
    const double w = weights[i];
    require(w >= 0.0, Errc::invalid_argument, "misfit weights must be non-negative");
    out.residual[i] = r;
    if (kind == MisfitKind::weighted_l2) {
      parts[i] = 0.5 * w * w * r * r;
      out.gradient[i] = w * w * r;
      out.gn_weight[i] = w * w;
    } else {
      require(eps > 0.0, Errc::invalid_argument, "smooth l1 needs eps > 0");
      const double s = std::sqrt(r * r + eps * eps);
      parts[i] = w * (s - eps);
      out.gradient[i] = w * r / s;
      out.gn_weight[i] = w * eps * eps / (s * s * s);
    }
  }
  out.value = exact_sum(parts);
  return out;
}

/// One term of the objective: a forward problem with its data, weights,
/// model map and optional model-to-forward mesh transfer:
///   coefficients = map(T m),  term = phi(forward(coefficients), d, w).
class MisfitTerm {
 public:
  MisfitTerm(std::unique_ptr<ForwardProblem> forward, Vector observed, Vector weights, ModelMap map = {},
             std::optional<SparseMatrix> transfer = std::nullopt, MisfitKind kind = MisfitKind::weighted_l2,
             double eps = 1e-3, std::string label = {})
      : forward_(std::move(forward)),
        observed_(std::move(observed)),
        weights_(std::move(weights)),
        map_(map),
        transfer_(std::move(transfer)),
        kind_(kind),
        eps_(eps),
        label_(std::move(label)) {
    require(forward_ != nullptr, Errc::invalid_argument, "misfit term needs a forward problem");
    require(static_cast<Index>(observed_.size()) == forward_->data_size() && weights_.size() == observed_.size(),
            Errc::dimension_mismatch, "observed data / weights do not match the forward data layout");
    for (double w : weights_) require(w >= 0.0, Errc::invalid_argument, "misfit weights must be non-negative");
    if (transfer_)
      require(transfer_->rows() == forward_->mesh().num_cells(), Errc::dimension_mismatch,
              "mesh transfer rows must equal forward mesh cells");
    if (label_.empty()) label_ = forward_->physics();
  }

  MisfitTerm(const MisfitTerm& o)
      : MisfitTerm(o.forward_->clone(), o.observed_, o.weights_, o.map_, o.transfer_, o.kind_, o.eps_, o.label_) {}
  MisfitTerm& operator=(const MisfitTerm&) = delete;
  MisfitTerm(MisfitTerm&&) = default;
  MisfitTerm& operator=(MisfitTerm&&) = default;

  Index model_size() const { return transfer_ ? transfer_->cols() : forward_->mesh().num_cells(); }
  const ForwardProblem& forward() const { return *forward_; }
  ForwardProblem& forward() { return *forward_; }
  const Vector& observed() const { return observed_; }
  const Vector& weights() const { return weights_; }
  const ModelMap& map() const { return map_; }
  const std::optional<SparseMatrix>& transfer() const { return transfer_; }
  MisfitKind kind() const { return kind_; }
  const std::string& label() const { return label_; }

  /// Bytes to ship the term description (problem, data, weights, transfer).
  std::size_t payload_bytes() const {
    return forward_->payload_bytes() + 16 * observed_.size() + (transfer_ ? matrix_payload_bytes(*transfer_) : 0) + 32;
  }

  /// Simulates at m and caches what the gradient and Hessian products need.
  MisfitValue evaluate(std::span<const double> m) {
    require(static_cast<Index>(m.size()) == model_size(), Errc::dimension_mismatch,
            label_ + ": model length does not match the term");
    coef_ = map_.apply(to_forward(m));
    const auto predicted = forward_->simulate(coef_.values);
    auto mv = misfit_eval(kind_, predicted, observed_, weights_, eps_);
    data_gradient_ = mv.gradient;
    gn_weight_ = mv.gn_weight;
    model_hash_ = hash_values(m);
    evaluated_ = true;
    return mv;
  }

  /// T^T (map' o J^T dphi).
  Vector gradient(std::span<const double> m) const {
    check_warm(m);
    auto g = forward_->sens_tmatvec(coef_.values, data_gradient_);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= coef_.derivative[i];
    return from_forward(g);
  }

  /// Gauss-Newton product T^T map' J^T diag(phi'') J map' T v.
  Vector gn_hessian_matvec(std::span<const double> m, std::span<const double> v) const {
    check_warm(m);
    auto x = to_forward(v);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] *= coef_.derivative[i];
    auto jv = forward_->sens_matvec(coef_.values, x);
    for (std::size_t i = 0; i < jv.size(); ++i) jv[i] *= gn_weight_[i];
    auto y = forward_->sens_tmatvec(coef_.values, jv);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= coef_.derivative[i];
    return from_forward(y);
  }

  bool warm_for(std::span<const double> m) const { return evaluated_ && model_hash_ == hash_values(m); }

 private:
  Vector to_forward(std::span<const double> m) const {
    if (!transfer_) return Vector(m.begin(), m.end());
    return *transfer_ * m;
  }
  Vector from_forward(const Vector& f) const {
    if (!transfer_) return f;
    return transfer_->transpose_multiply(f);
  }
  void check_warm(std::span<const double> m) const {
    require(warm_for(m), Errc::stale_cache, label_ + ": sensitivity requested for a model that was not evaluated last");
  }

  std::unique_ptr<ForwardProblem> forward_;
  Vector observed_;
  Vector weights_;
  ModelMap map_;
  std::optional<SparseMatrix> transfer_;
  MisfitKind kind_;
  double eps_;
  std::string label_;

  ModelMap::Applied coef_;
  Vector data_gradient_;
  Vector gn_weight_;
  std::uint64_t model_hash_ = 0;
  bool evaluated_ = false;
};

// ---------------------------------------------------------------------------
// Regularizers

struct RegEval {
  double value = 0.0;
  Vector gradient;
  SparseMatrix hessian;
};

class Regularizer {
 public:
  virtual ~Regularizer() = default;
  virtual std::string name() const = 0;
  virtual double value(std::span<const double> m) const = 0;
  virtual Vector gradient(std::span<const double> m) const = 0;
  /// Hessian (or its lagged-diffusivity approximation) at m.
  virtual SparseMatrix hessian(std::span<const double> m) const = 0;

  RegEval eval(std::span<const double> m) const { return {value(m), gradient(m), hessian(m)}; }
};

/// R(m) = 1/2 (m - m_ref)^T L (m - m_ref), L = G^T diag(V_f) G.
class DiffusionRegularizer final : public Regularizer {
 public:
  DiffusionRegularizer(const TensorMesh& mesh, Vector m_ref) : m_ref_(std::move(m_ref)) {
    require(static_cast<Index>(m_ref_.size()) == mesh.num_cells(), Errc::dimension_mismatch, "reference model length");
    const auto g = gradient_operator(mesh);
    l_ = multiply(g.transpose(), g.scaled(mesh.face_volumes(), {}));
  }

  std::string name() const override { return "diffusion"; }
  double value(std::span<const double> m) const override {
    const auto d = diff(m);
    const auto ld = l_ * d;
    Vector parts(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) parts[i] = 0.5 * d[i] * ld[i];
    return exact_sum(parts);
  }
  Vector gradient(std::span<const double> m) const override { return l_ * diff(m); }
  SparseMatrix hessian(std::span<const double>) const override { return l_; }
  const SparseMatrix& laplacian() const { return l_; }

 private:
  Vector diff(std::span<const double> m) const {
    require(m.size() == m_ref_.size(), Errc::dimension_mismatch, "model length");
    Vector d(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) d[i] = m[i] - m_ref_[i];
    return d;
  }
  Vector m_ref_;
  SparseMatrix l_;
};

/// Smoothed total variation R(m) = sum_f V_f sqrt((G m)_f^2 + eps^2), with the
/// lagged-diffusivity Hessian G^T diag(V_f / sqrt(.)) G.
class TvRegularizer final : public Regularizer {
 public:
  TvRegularizer(const TensorMesh& mesh, double eps) : eps_(eps), g_(gradient_operator(mesh)), vf_(mesh.face_volumes()) {
    require(eps_ > 0.0, Errc::invalid_argument, "TV smoothing eps must be positive");
  }

  std::string name() const override { return "tv"; }
  double value(std::span<const double> m) const override {
    const auto gm = g_ * m;
    Vector parts(gm.size());
    for (std::size_t f = 0; f < gm.size(); ++f) parts[f] = vf_[f] * std::sqrt(gm[f] * gm[f] + eps_ * eps_);
    return exact_sum(parts);
  }
  Vector gradient(std::span<const double> m) const override {
    auto gm = g_ * m;
    for (std::size_t f = 0; f < gm.size(); ++f) gm[f] *= vf_[f] / std::sqrt(gm[f] * gm[f] + eps_ * eps_);
    return g_.transpose_multiply(gm);
  }
  SparseMatrix hessian(std::span<const double> m) const override {
    const auto gm = g_ * m;
    Vector s(gm.size());
    for (std::size_t f = 0; f < gm.size(); ++f) s[f] = vf_[f] / std::sqrt(gm[f] * gm[f] + eps_ * eps_);
    return multiply(g_.transpose(), g_.scaled(s, {}));
  }

 private:
  double eps_;
  SparseMatrix g_;
  Vector vf_;
};

inline RegEval diffusion_reg(const TensorMesh& mesh, std::span<const double> m, std::span<const double> m_ref) {
  return DiffusionRegularizer(mesh, Vector(m_ref.begin(), m_ref.end())).eval(m);
}
inline RegEval tv_reg(const TensorMesh& mesh, std::span<const double> m, double eps_tv) {
  return TvRegularizer(mesh, eps_tv).eval(m);
}

// ---------------------------------------------------------------------------
// Execution of misfit terms

struct MisfitSummary {
  double value = 0.0;
  std::vector<double> term_values;
};

/// Evaluates the sum of misfit terms and its derivatives. A call to
/// evaluate(m) warms per-term caches; gradient(m) and hessian_matvec(m, .)
/// must use the same m and reuse them.
class Executor {
 public:
  virtual ~Executor() = default;
  virtual Index model_size() const = 0;
  virtual std::size_t num_terms() const = 0;
  virtual MisfitSummary evaluate(std::span<const double> m) = 0;
  virtual Vector gradient(std::span<const double> m) = 0;
  virtual Vector hessian_matvec(std::span<const double> m, std::span<const double> v) = 0;
  /// Cumulative PDE (or triangular) solves across all terms.
  virtual Index pde_solves() const = 0;
};

/// All terms on the calling thread; the reference against which the
/// distributed executors are checked.
class SerialExecutor final : public Executor {
 public:
  explicit SerialExecutor(std::vector<MisfitTerm> terms) : terms_(std::move(terms)) {
    require(!terms_.empty(), Errc::invalid_argument, "at least one misfit term required");
    for (const auto& t : terms_)
      require(t.model_size() == terms_.front().model_size(), Errc::dimension_mismatch, "terms disagree on model size");
  }

  Index model_size() const override { return terms_.front().model_size(); }
  std::size_t num_terms() const override { return terms_.size(); }

  MisfitSummary evaluate(std::span<const double> m) override {
    MisfitSummary s;
    for (auto& t : terms_) s.term_values.push_back(t.evaluate(m).value);
    s.value = exact_sum(s.term_values);
    return s;
  }
  Vector gradient(std::span<const double> m) override {
    ExactVector acc(static_cast<std::size_t>(model_size()));
    for (const auto& t : terms_) acc.add(t.gradient(m));
    return acc.value();
  }
  Vector hessian_matvec(std::span<const double> m, std::span<const double> v) override {
    ExactVector acc(static_cast<std::size_t>(model_size()));
    for (const auto& t : terms_) acc.add(t.gn_hessian_matvec(m, v));
    return acc.value();
  }
  Index pde_solves() const override {
    Index n = 0;
    for (const auto& t : terms_) n += t.forward().pde_solves();
    return n;
  }
  std::vector<MisfitTerm>& terms() { return terms_; }

 private:
  std::vector<MisfitTerm> terms_;
};

// ---------------------------------------------------------------------------
// Bound-constrained optimization

struct Bounds {
  Vector lower, upper;

  static Bounds uniform(std::size_t n, double lo, double hi) { return {Vector(n, lo), Vector(n, hi)}; }
  static Bounds none(std::size_t n) {
    const double inf = std::numeric_limits<double>::infinity();
    return {Vector(n, -inf), Vector(n, inf)};
  }

  void validate(std::size_t n) const {
    require(lower.size() == n && upper.size() == n, Errc::dimension_mismatch, "bounds length does not match model");
    for (std::size_t i = 0; i < n; ++i)
      require(lower[i] <= upper[i], Errc::invalid_argument, "lower bound exceeds upper bound at " + std::to_string(i));
  }

  Vector project(std::span<const double> m) const {
    Vector p(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) p[i] = std::clamp(m[i], lower[i], upper[i]);
    return p;
  }

  bool contains(std::span<const double> m) const {
    for (std::size_t i = 0; i < m.size(); ++i)
      if (!(m[i] >= lower[i] && m[i] <= upper[i])) return false;
    return true;
  }
};

struct ArmijoResult {
  bool accepted = false;
  double step = 0.0;
  Vector model;
  double objective = 0.0;
  int evaluations = 0;
};

/// Backtracking along the projected path P(m + s d), s = 1, 1/2, 1/4, ...,
/// accepting the first s with f(P(m + s d)) <= f(m) + c1 <g, P(m + s d) - m>.
inline ArmijoResult projected_armijo(const std::function<double(const Vector&)>& f, std::span<const double> m,
                                     std::span<const double> direction, const Bounds& bounds,
                                     std::span<const double> gradient, double f0, double c1 = 1e-4,
                                     int max_backtracks = 10) {
  ArmijoResult r;
  double s = 1.0;
  for (int k = 0; k <= max_backtracks; ++k, s *= 0.5) {
    Vector trial(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) trial[i] = m[i] + s * direction[i];
    trial = bounds.project(trial);
    double slope = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) slope += gradient[i] * (trial[i] - m[i]);
    const double ft = f(trial);
    ++r.evaluations;
    if (std::isfinite(ft) && ft <= f0 + c1 * slope && slope < 0.0) {
      r.accepted = true;
      r.step = s;
      r.model = std::move(trial);
      r.objective = ft;
      return r;
    }
  }
  return r;
}

enum class GNStatus { running, max_iterations, converged, line_search_failure };

inline const char* to_string(GNStatus s) {
  switch (s) {
    case GNStatus::running: return "running";
    case GNStatus::max_iterations: return "max_iterations";
    case GNStatus::converged: return "converged";
    case GNStatus::line_search_failure: return "line_search_failure";
  }
  return "?";
}

enum class PcgPreconditioner { none, regularizer };

struct GNOptions {
  int max_gn = 10;
  int max_pcg = 8;
  double pcg_tol = 1e-2;
  double c1 = 1e-4;
  int max_backtracks = 10;
  double proj_grad_tol = 1e-3;  ///< relative to the initial projected-gradient norm
  double active_eps = 1e-12;    ///< relative to (upper - lower)
  double max_step = std::numeric_limits<double>::infinity();
  PcgPreconditioner preconditioner = PcgPreconditioner::regularizer;
  double precond_shift = 1e-3;  ///< relative to the largest regularizer-Hessian diagonal
};

struct GNIterationRecord {
  int iteration = 0;
  int stage = 0;
  double objective = 0.0;
  double misfit = 0.0;
  double reg = 0.0;
  double proj_grad_norm = 0.0;
  int pcg_iters = 0;
  int ls_steps = 0;
  Index active_count = 0;
  double wall_seconds = 0.0;
};

struct GNState {
  Vector model;
  Bounds bounds;
  int iteration = 0;
  double initial_objective = 0.0;
  double initial_proj_grad = 0.0;
  std::vector<double> objective_history;
  std::vector<double> proj_grad_history;
  std::vector<char> active;
  std::vector<GNIterationRecord> records;
  GNStatus status = GNStatus::running;
};

/// ||P(m - g) - m||_2.
inline double projected_gradient_norm(std::span<const double> m, std::span<const double> g, const Bounds& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double p = std::clamp(m[i] - g[i], b.lower[i], b.upper[i]) - m[i];
    s += p * p;
  }
  return std::sqrt(s);
}

/// Principal submatrix A(idx, idx).
inline SparseMatrix principal_submatrix(const SparseMatrix& a, const std::vector<Index>& idx) {
  std::vector<Index> pos(static_cast<std::size_t>(a.rows()), -1);
  for (std::size_t k = 0; k < idx.size(); ++k) pos[idx[k]] = static_cast<Index>(k);
  std::vector<Triplet<double>> t;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const Index i = idx[k];
    for (Index p = a.row_ptr()[i]; p < a.row_ptr()[i + 1]; ++p)
      if (pos[a.col_idx()[p]] >= 0) t.push_back({static_cast<Index>(k), pos[a.col_idx()[p]], a.values()[p]});
  }
  const auto n = static_cast<Index>(idx.size());
  return SparseMatrix::from_triplets(n, n, std::move(t));
}

struct PcgOutcome {
  Vector x;
  int iterations = 0;
};

/// Projected PCG on the free variables: approximately solves H_FF x_F = rhs_F
/// with x = 0 on the fixed variables, starting from zero.
inline PcgOutcome projected_pcg(const std::function<Vector(const Vector&)>& hmv, const Vector& rhs,
                                const std::vector<char>& free,
                                const std::function<Vector(const Vector&)>& precond, int max_iter, double tol) {
  const std::size_t n = rhs.size();
  auto mask = [&](Vector v) {
    for (std::size_t i = 0; i < n; ++i)
      if (!free[i]) v[i] = 0.0;
    return v;
  };
  PcgOutcome out{Vector(n, 0.0), 0};
  Vector r = mask(rhs);
  const double r0 = norm2<double>(r);
  if (r0 == 0.0) return out;
  Vector z = mask(precond(r));
  Vector p = z;
  double rz = dot(r, z);
  for (int k = 0; k < max_iter; ++k) {
    const Vector q = mask(hmv(p));
    const double pq = dot(p, q);
    if (!(pq > 0.0)) break;
    const double a = rz / pq;
    axpy(a, std::span<const double>(p), std::span<double>(out.x));
    axpy(-a, std::span<const double>(q), std::span<double>(r));
    out.iterations = k + 1;
    if (norm2<double>(r) <= tol * r0) break;
    z = mask(precond(r));
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  return out;
}

using IterationCallback = std::function<void(const GNIterationRecord&, const GNState&)>;

/// Projected Gauss-Newton for  min sum_i phi_i(m) + alpha R(m)  s.t.  lower <= m <= upper.
inline GNState projected_gauss_newton(Executor& exec, Vector m0, const Bounds& bounds, double alpha,
                                      const Regularizer& reg, const GNOptions& opts = {},
                                      const IterationCallback& on_iteration = {}, int stage = 0) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = m0.size();
  require(static_cast<Index>(n) == exec.model_size(), Errc::dimension_mismatch, "initial model length");
  require(alpha >= 0.0, Errc::invalid_argument, "alpha must be non-negative");
  bounds.validate(n);
  require(bounds.contains(m0), Errc::invalid_argument, "initial model violates the bounds");

  GNState st;
  st.bounds = bounds;
  st.model = std::move(m0);

  struct Objective {
    double total, misfit, reg;
  };
  auto objective = [&](const Vector& m) {
    const double mis = exec.evaluate(m).value;
    const double r = alpha * reg.value(m);
    return Objective{mis + r, mis, r};
  };
  auto full_gradient = [&](const Vector& m) {
    auto g = exec.gradient(m);
    const auto gr = reg.gradient(m);
    for (std::size_t i = 0; i < n; ++i) g[i] += alpha * gr[i];
    return g;
  };

  Objective cur = objective(st.model);
  Vector g = full_gradient(st.model);
  st.initial_objective = cur.total;
  st.initial_proj_grad = projected_gradient_norm(st.model, g, bounds);

  for (int it = 1; it <= opts.max_gn; ++it) {
    const double pg = projected_gradient_norm(st.model, g, bounds);
    if (pg <= opts.proj_grad_tol * st.initial_proj_grad || pg == 0.0) {
      st.status = GNStatus::converged;
      break;
    }

    st.active.assign(n, 0);
    std::vector<char> free(n, 1);
    Index n_active = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double width = bounds.upper[i] - bounds.lower[i];
      const double tol = std::isfinite(width) ? opts.active_eps * width : 0.0;
      const bool at_low = st.model[i] <= bounds.lower[i] + tol && g[i] > 0.0;
      const bool at_high = st.model[i] >= bounds.upper[i] - tol && g[i] < 0.0;
      if (at_low || at_high) {
        st.active[i] = 1;
        free[i] = 0;
        ++n_active;
      }
    }

    // Preconditioner: regularizer Hessian restricted to the free set.
    std::function<Vector(const Vector&)> precond = [](const Vector& r) { return r; };
    const auto hreg = reg.hessian(st.model);
    if (opts.preconditioner == PcgPreconditioner::regularizer && n_active < static_cast<Index>(n)) {
      std::vector<Index> idx;
      for (std::size_t i = 0; i < n; ++i)
        if (free[i]) idx.push_back(static_cast<Index>(i));
      auto sub = principal_submatrix(hreg, idx);
      double dmax = 0.0;
      for (double d : sub.diagonal_values()) dmax = std::max(dmax, std::abs(d));
      const double shift = dmax > 0.0 ? opts.precond_shift * dmax : 1.0;
      auto fac = std::make_shared<SparseLdlt<double>>(add(sub, SparseMatrix::identity(sub.rows()), 1.0, shift));
      precond = [fac, idx, n](const Vector& r) {
        Vector rs(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) rs[k] = r[idx[k]];
        const auto zs = fac->solve(rs);
        Vector z(n, 0.0);
        for (std::size_t k = 0; k < idx.size(); ++k) z[idx[k]] = zs[k];
        return z;
      };
    }

    const Vector& mcur = st.model;
    auto hmv = [&](const Vector& v) {
      auto h = exec.hessian_matvec(mcur, v);
      if (alpha > 0.0) {
        const auto hv = hreg * v;
        for (std::size_t i = 0; i < n; ++i) h[i] += alpha * hv[i];
      }
      return h;
    };
    Vector rhs(n);
    for (std::size_t i = 0; i < n; ++i) rhs[i] = -g[i];
    auto pcg = projected_pcg(hmv, rhs, free, precond, opts.max_pcg, opts.pcg_tol);
    Vector d = std::move(pcg.x);

    // Projected steepest descent on the active set, scaled to the free step.
    double dmax = norm_inf(d), gmax = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (st.active[i]) gmax = std::max(gmax, std::abs(g[i]));
    if (gmax > 0.0) {
      const double scale = dmax > 0.0 ? dmax / gmax : 1.0;
      for (std::size_t i = 0; i < n; ++i)
        if (st.active[i]) d[i] = -scale * g[i];
    }
    if (dmax == 0.0 && gmax == 0.0) {
      for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
    }
    const double dinf = norm_inf(d);
    if (dinf > opts.max_step)
      for (auto& x : d) x *= opts.max_step / dinf;

    Objective trial_obj{};
    auto ls = projected_armijo(
        [&](const Vector& m) {
          trial_obj = objective(m);
          return trial_obj.total;
        },
        st.model, d, bounds, g, cur.total, opts.c1, opts.max_backtracks);

    GNIterationRecord rec;
    rec.iteration = it;
    rec.stage = stage;
    rec.pcg_iters = pcg.iterations;
    rec.ls_steps = ls.evaluations;
    rec.active_count = n_active;
    if (!ls.accepted) {
      // Leave the executor warm at the current iterate.
      cur = objective(st.model);
      st.status = GNStatus::line_search_failure;
      break;
    }
    st.model = std::move(ls.model);
    cur = trial_obj;
    g = full_gradient(st.model);
    st.iteration = it;
    rec.objective = cur.total;
    rec.misfit = cur.misfit;
    rec.reg = cur.reg;
    rec.proj_grad_norm = projected_gradient_norm(st.model, g, bounds);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    st.objective_history.push_back(rec.objective);
    st.proj_grad_history.push_back(rec.proj_grad_norm);
    st.records.push_back(rec);
    if (on_iteration) on_iteration(rec, st);
  }
  if (st.status == GNStatus::running) st.status = GNStatus::max_iterations;
  return st;
}

}  // namespace geoinv

#endif  // GEOINV_INVERSE_HPP
