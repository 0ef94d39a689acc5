#pragma once

#include <functional>
#include <map>
#include <memory>
#include <utility>
#include <vector>

#include "twoscale/flow.hpp"
#include "twoscale/numerics.hpp"

namespace twoscale {

// A coefficient field A_i(t, tau, x), theta-periodic in tau.
using FieldEvaluator = std::function<Point(double t, double tau, const Point& x)>;

struct OscillatingExpansion {
  std::vector<FieldEvaluator> coefficients;
  // Set when no coefficient depends on t; lets the engine reuse averages.
  bool autonomous = false;

  int size() const { return static_cast<int>(coefficients.size()); }
  bool has(int i) const { return i >= 0 && i < size() && coefficients[i] != nullptr; }
  // Zero vector when coefficient i is absent.
  Point evaluate(int i, double t, double tau, const Point& x) const;
};

struct DivergenceReport {
  double max_divergence = 0.0;
  int order = -1;
  double t = 0.0;
  double tau = 0.0;
  Point where;
};

// Central-difference divergence of every coefficient at deterministic sample
// points of the grid box; reports the worst location.
DivergenceReport check_divergence(const OscillatingExpansion& expansion, const TensorGrid& grid,
                                  double horizon, int samples = 64, double h = 1e-4);

using InitialFunction = std::function<double(const Point&)>;

struct ExpansionProblem {
  GridPtr grid;
  FlowPtr flow;
  OscillatingExpansion expansion;
  ScalarField initial;
  // Optional closed form of `initial`, evaluated at the foot by the final-time
  // retrace instead of interpolating the samples.
  InitialFunction initial_function;
  double horizon = 1.0;
};

enum class TauRule { kTrapezoid, kSpectral };

struct EngineOptions {
  int order = 0;
  int checkpoints = 64;
  // Partial tau-integrals: spectral antiderivative of the trigonometric
  // interpolant, or the cumulative trapezoid rule.
  TauRule tau_rule = TauRule::kSpectral;
  // Re-evaluate the final-time V_k along full backward characteristics
  // instead of through the stepwise remaps.
  bool retrace_final = true;
  int trace_substeps = 4;
  // Evaluate a~_0 pointwise in the final-time retrace of V_0 instead of
  // interpolating its grid samples.
  bool exact_retrace_drift = false;
  // Keep W at the three middle checkpoints so residual_Uk can run.
  bool diagnostic_window = false;
  std::vector<int> retain_checkpoints;
  int workers = 0;
};

// Averaged-field formulas evaluated pointwise.
class ExpansionContext {
 public:
  explicit ExpansionContext(const ExpansionProblem& problem);

  const ExpansionProblem& problem() const { return *problem_; }
  const TensorGrid& grid() const { return *problem_->grid; }
  const FlowMap& flow() const { return *problem_->flow; }

  // alpha_i = J^{-1}(A_i(t, tau, X) - [i == 0] dX/dt), X = X(tau; x, t; 0).
  Point alpha(int i, double t, double tau, const Point& x) const;
  // Mean of alpha_i over the grid's tau nodes.
  Point a_tilde(int i, double t, const Point& x) const;
  // a_0 = J(-tau)^{-1}(a~_0(X(-tau)) - dX(-tau)/dt); a_i = J(-tau)^{-1} mean_s alpha_i(s, X(-tau)).
  Point a_field(int i, double t, double tau, const Point& x) const;
  VectorField a_tilde_field(int i, double t, int workers = 0) const;

  // Solves J y = rhs with the determinant guard.
  static Point solve_jacobian(const Matrix& jac, const Point& rhs);

 private:
  const ExpansionProblem* problem_;
};

// W-type family: one spatial slice per tau node, plus the value continued
// through one full period (the closure).
class TauFamily {
 public:
  TauFamily() = default;
  explicit TauFamily(GridPtr grid);

  const TensorGrid& grid() const { return *grid_; }
  const GridPtr& grid_ptr() const { return grid_; }
  int tau_points() const { return tau_points_; }
  std::size_t nodes() const { return nodes_; }

  const double* slice(int j) const { return data_.data() + static_cast<std::size_t>(j) * nodes_; }
  double* slice(int j) { return data_.data() + static_cast<std::size_t>(j) * nodes_; }
  ScalarField slice_field(int j) const;
  std::vector<double>& closure() { return closure_; }
  const std::vector<double>& closure() const { return closure_; }

  double max_abs() const;
  double closure_max() const;
  // closure_max / (1 + max_abs)
  double relative_closure() const;

  // Spatial slice at an arbitrary tau: trigonometric interpolation of the
  // periodic part after removing the linear closure drift.
  ScalarField at_tau(double tau) const;
  double evaluate(double tau, const Point& y) const;

 private:
  GridPtr grid_;
  int tau_points_ = 0;
  std::size_t nodes_ = 0;
  std::vector<double> data_;
  std::vector<double> closure_;
};

using FamilyPtr = std::shared_ptr<const TauFamily>;

class ExpansionState {
 public:
  int order() const { return order_; }
  const std::vector<double>& times() const { return times_; }
  int checkpoints() const { return static_cast<int>(times_.size()) - 1; }
  // Index of the checkpoint equal to t; InputError otherwise.
  int checkpoint_index(double t) const;

  const ScalarField& V(int k, int m) const;
  const std::vector<ScalarField>& V_series(int k) const;
  bool has_W(int k, int m) const;
  // W_0 is the zero family by convention.
  const TauFamily& W(int k, int m) const;
  const VectorField& a_tilde(int i, int m) const;
  const ScalarField& source(int k, int m) const;

  double w_closure_residual(int k) const;
  double w_closure_residual() const;
  double norm_drift() const { return norm_drift_; }
  double build_seconds() const { return build_seconds_; }

  const ExpansionProblem& problem() const { return *problem_; }
  const ExpansionContext& context() const { return *context_; }
  const EngineOptions& options() const { return options_; }

 private:
  friend class ExpansionEngine;

  std::shared_ptr<const ExpansionProblem> problem_;
  std::shared_ptr<const ExpansionContext> context_;
  EngineOptions options_;
  int order_ = -1;
  std::vector<double> times_;
  std::vector<std::vector<ScalarField>> V_;
  std::vector<std::vector<ScalarField>> sources_;
  // a_tilde_[i][m]; a single entry per order when the problem is autonomous.
  std::vector<std::vector<VectorField>> a_tilde_;
  std::map<std::pair<int, int>, FamilyPtr> W_;
  std::vector<double> w_closure_;
  FamilyPtr zero_family_;
  double norm_drift_ = 0.0;
  double build_seconds_ = 0.0;
};

// Breadth-first builder. compute_W / compute_R are memoized per (order,
// checkpoint); build() evicts entries that the sweep no longer needs.
class ExpansionEngine {
 public:
  ExpansionEngine(ExpansionProblem problem, EngineOptions options);

  const ExpansionContext& context() const { return *state_.context_; }
  const ExpansionState& state() const { return state_; }

  // Solves V_k on all checkpoints; orders must be solved in sequence.
  void solve_order(int k);
  ExpansionState build();

  // W_k at checkpoint m by the recursive definition, composing along X.
  FamilyPtr compute_W(int k, int m);
  // R_k on the tau nodes at the grid nodes.
  FamilyPtr compute_R(int k, int m);
  // Tau-mean term <dW_k/dt + sum_i alpha_i . grad W_{k-i}> at the grid nodes.
  const ScalarField& tau_mean(int k, int m);
  // Right-hand side of the V_k equation at checkpoint m.
  ScalarField source(int k, int m);
  // dW_k/dt at tau node l by differences across checkpoints.
  ScalarField dW_dt_slice(int k, int m, int l);

  // Same W_k built from the pulled-back form (no compositions); cross-check.
  FamilyPtr compute_W_pulled_back(int k, int m);

 private:
  void require_order(int k, const char* what) const;
  const VectorField& grad_V(int k, int m);
  const VectorField& a_tilde(int i, int m);
  void integrate_family(std::vector<double>& integrand, TauFamily& out) const;
  void evict_before(int k, int m);
  bool retained(int m) const;

  ExpansionState state_;
  std::map<std::pair<int, int>, FamilyPtr> cache_;
  std::map<std::pair<int, int>, ScalarField> means_;
  std::map<std::pair<int, int>, VectorField> grad_V_;
  Eigen::MatrixXd spectral_;
  int solved_ = -1;
};

ExpansionState build_expansion(const ExpansionProblem& problem, const EngineOptions& options);

// Backward semi-Lagrangian transport dV/dt + b . grad V = s on the checkpoint
// grid. `drift` has one entry (constant) or one per checkpoint; `source` is
// empty (zero) or one per checkpoint.
std::vector<ScalarField> solve_transport(const std::vector<VectorField>& drift,
                                         const std::vector<ScalarField>& source,
                                         const ScalarField& init,
                                         const std::vector<double>& t_grid, int workers = 0);

// Value at checkpoint m_end obtained by tracing each node back to t_grid[0]
// with RK4 substeps, interpolating init once (or evaluating init_exact) and
// integrating the source along the path. drift_exact, when set, replaces the
// interpolated drift.
using DriftFunction = std::function<Point(double t, const Point& x)>;
ScalarField retrace_transport(const std::vector<VectorField>& drift,
                              const std::vector<ScalarField>& source, const ScalarField& init,
                              const std::vector<double>& t_grid, int m_end, int substeps,
                              int workers = 0, const InitialFunction& init_exact = {},
                              const DriftFunction& drift_exact = {});

// U_k(t, tau, x) = V_k(t, X(-tau)) + W_k(t, tau, X(-tau)); t must be a checkpoint.
double reconstruct_U(const ExpansionState& state, int k, double t, double tau, const Point& x);
// U_k slice on the grid nodes.
ScalarField reconstruct_U_field(const ExpansionState& state, int k, double t, double tau);
// sum_{k<=K} eps^k U_k(t, t/eps mod theta, .) on the grid.
ScalarField assemble(const ExpansionState& state, double eps, int K, double t);
// Max-norm residual of dU_k/dt + a_0 . grad U_k - R_k + sum_i a_i . grad U_{k-i}
// at the middle checkpoint, over sampled tau nodes and interior grid nodes.
double residual_Uk(const ExpansionState& state, int k);

}  // namespace twoscale
