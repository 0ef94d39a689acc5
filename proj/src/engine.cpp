#include "twoscale/engine.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <string>

#include "twoscale/errors.hpp"
#include "twoscale/parallel.hpp"

namespace twoscale {
namespace {

double reduce_tau(double tau, double theta) {
  double r = std::fmod(tau, theta);
  if (r < 0.0) r += theta;
  if (r >= theta) r -= theta;
  return r;
}

// Cubic Lagrange weights in time over the checkpoint list (clamped stencil).
struct TimeStencil {
  int first = 0;
  int count = 1;
  std::array<double, 4> w{1.0, 0.0, 0.0, 0.0};
};

TimeStencil time_stencil(const std::vector<double>& times, double t) {
  TimeStencil ts;
  int n = static_cast<int>(times.size());
  if (n == 1) return ts;
  if (n < 4) {
    int i = 0;
    while (i < n - 2 && t > times[i + 1]) ++i;
    double s = (t - times[i]) / (times[i + 1] - times[i]);
    ts.first = i;
    ts.count = 2;
    ts.w = {1.0 - s, s, 0.0, 0.0};
    return ts;
  }
  int i = 0;
  while (i < n - 2 && t > times[i + 1]) ++i;
  int b = std::clamp(i - 1, 0, n - 4);
  ts.first = b;
  ts.count = 4;
  for (int a = 0; a < 4; ++a) {
    double w = 1.0;
    for (int c = 0; c < 4; ++c) {
      if (c != a) w *= (t - times[b + c]) / (times[b + a] - times[b + c]);
    }
    ts.w[a] = w;
  }
  return ts;
}

void check_transport_inputs(const std::vector<VectorField>& drift,
                            const std::vector<ScalarField>& source, const ScalarField& init,
                            const std::vector<double>& t_grid) {
  if (t_grid.empty()) throw InputError("transport: empty time grid");
  for (std::size_t i = 1; i < t_grid.size(); ++i) {
    if (!(t_grid[i] > t_grid[i - 1])) throw InputError("transport: times must increase");
  }
  if (drift.size() != 1 && drift.size() != t_grid.size()) {
    throw InputError("transport: drift needs one field or one per checkpoint");
  }
  if (!source.empty() && source.size() != t_grid.size()) {
    throw InputError("transport: source needs one field per checkpoint");
  }
  for (const auto& b : drift) {
    if (b.dims() != init.grid().dims()) throw InputError("transport: drift dimension mismatch");
  }
}

}  // namespace

// ---------------------------------------------------------------- expansion

Point OscillatingExpansion::evaluate(int i, double t, double tau, const Point& x) const {
  if (!has(i)) return Point::Zero(x.size());
  return coefficients[i](t, tau, x);
}

DivergenceReport check_divergence(const OscillatingExpansion& expansion, const TensorGrid& grid,
                                  double horizon, int samples, double h) {
  DivergenceReport rep;
  auto pts = box_samples(grid, samples, horizon, 2024u, 0.8);
  for (int i = 0; i < expansion.size(); ++i) {
    if (!expansion.has(i)) continue;
    for (int s = 0; s < samples; ++s) {
      double tau = grid.theta() * ((s * 0.6180339887498949) - std::floor(s * 0.6180339887498949));
      const Point& x = pts[s].x;
      double div = 0.0;
      for (int d = 0; d < grid.dims(); ++d) {
        Point xp = x, xm = x;
        xp[d] += h;
        xm[d] -= h;
        div += (expansion.evaluate(i, pts[s].t, tau, xp)[d] -
                expansion.evaluate(i, pts[s].t, tau, xm)[d]) / (2.0 * h);
      }
      if (std::abs(div) > rep.max_divergence || rep.order < 0) {
        rep.max_divergence = std::abs(div);
        rep.order = i;
        rep.t = pts[s].t;
        rep.tau = tau;
        rep.where = x;
      }
    }
  }
  return rep;
}

// ------------------------------------------------------------------ context

ExpansionContext::ExpansionContext(const ExpansionProblem& problem) : problem_(&problem) {}

Point ExpansionContext::solve_jacobian(const Matrix& jac, const Point& rhs) {
  double det = jac.determinant();
  if (!(std::abs(det - 1.0) <= 0.5)) {
    throw DegenerateFlowError("flow jacobian determinant " + std::to_string(det) +
                              " too far from 1");
  }
  return jac.partialPivLu().solve(rhs);
}

Point ExpansionContext::alpha(int i, double t, double tau, const Point& x) const {
  const FlowMap& f = flow();
  Point X = f.map(tau, x, t, 0.0);
  Matrix J = f.jacobian(tau, x, t, 0.0);
  Point rhs = problem_->expansion.evaluate(i, t, tau, X);
  if (i == 0) rhs -= f.dt(tau, x, t, 0.0);
  return solve_jacobian(J, rhs);
}

Point ExpansionContext::a_tilde(int i, double t, const Point& x) const {
  const TensorGrid& g = grid();
  Point acc = Point::Zero(x.size());
  for (int j = 0; j < g.tau_points(); ++j) acc += alpha(i, t, g.tau(j), x);
  return acc / g.tau_points();
}

Point ExpansionContext::a_field(int i, double t, double tau, const Point& x) const {
  const FlowMap& f = flow();
  Point y = f.map(-tau, x, t, 0.0);
  Matrix J = f.jacobian(-tau, x, t, 0.0);
  Point rhs = a_tilde(i, t, y);
  if (i == 0) rhs -= f.dt(-tau, x, t, 0.0);
  return solve_jacobian(J, rhs);
}

VectorField ExpansionContext::a_tilde_field(int i, double t, int workers) const {
  if (!problem_->expansion.has(i) && i > 0) return VectorField(problem_->grid);
  return VectorField::sample(problem_->grid, [&](const Point& x) { return a_tilde(i, t, x); },
                             workers);
}

// ---------------------------------------------------------------- TauFamily

TauFamily::TauFamily(GridPtr grid) : grid_(std::move(grid)) {
  tau_points_ = grid_->tau_points();
  nodes_ = grid_->size();
  data_.assign(static_cast<std::size_t>(tau_points_) * nodes_, 0.0);
  closure_.assign(nodes_, 0.0);
}

ScalarField TauFamily::slice_field(int j) const {
  return ScalarField(grid_, std::vector<double>(slice(j), slice(j) + nodes_));
}

double TauFamily::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

double TauFamily::closure_max() const {
  double m = 0.0;
  for (double v : closure_) m = std::max(m, std::abs(v));
  return m;
}

double TauFamily::relative_closure() const { return closure_max() / (1.0 + max_abs()); }

ScalarField TauFamily::at_tau(double tau) const {
  double theta = grid_->theta();
  double r = reduce_tau(tau, theta);
  double pos = r / grid_->tau_step();
  int j = static_cast<int>(std::lround(pos));
  if (std::abs(pos - j) < 1e-12) return slice_field(j % tau_points_);
  auto w = trig_interpolation_weights(tau_points_, theta, r);
  std::vector<double> out(nodes_, 0.0);
  for (std::size_t n = 0; n < nodes_; ++n) {
    double c = closure_[n] / theta;
    double acc = c * r;
    for (int l = 0; l < tau_points_; ++l) acc += w[l] * (slice(l)[n] - c * grid_->tau(l));
    out[n] = acc;
  }
  return ScalarField(grid_, std::move(out));
}

double TauFamily::evaluate(double tau, const Point& y) const {
  double theta = grid_->theta();
  double r = reduce_tau(tau, theta);
  Stencil st(*grid_, y);
  if (!st.inside()) return 0.0;
  double pos = r / grid_->tau_step();
  int j = static_cast<int>(std::lround(pos));
  if (std::abs(pos - j) < 1e-12) return st.apply(slice(j % tau_points_));
  auto w = trig_interpolation_weights(tau_points_, theta, r);
  double c = st.apply(closure_.data()) / theta;
  double acc = c * r;
  for (int l = 0; l < tau_points_; ++l) acc += w[l] * (st.apply(slice(l)) - c * grid_->tau(l));
  return acc;
}

// ------------------------------------------------------------------- state

int ExpansionState::checkpoint_index(double t) const {
  double span = times_.back() - times_.front();
  for (std::size_t m = 0; m < times_.size(); ++m) {
    if (std::abs(times_[m] - t) <= 1e-9 * std::max(1.0, span)) return static_cast<int>(m);
  }
  throw InputError("time " + std::to_string(t) + " is not a checkpoint");
}

const ScalarField& ExpansionState::V(int k, int m) const {
  if (k < 0 || k >= static_cast<int>(V_.size()) || V_[k].empty()) {
    throw SequencingError("V_" + std::to_string(k) + " has not been computed");
  }
  return V_[k].at(m);
}

const std::vector<ScalarField>& ExpansionState::V_series(int k) const {
  if (k < 0 || k >= static_cast<int>(V_.size()) || V_[k].empty()) {
    throw SequencingError("V_" + std::to_string(k) + " has not been computed");
  }
  return V_[k];
}

bool ExpansionState::has_W(int k, int m) const {
  if (k == 0) return true;
  return W_.count({k, m}) > 0;
}

const TauFamily& ExpansionState::W(int k, int m) const {
  if (k == 0) return *zero_family_;
  auto it = W_.find({k, m});
  if (it == W_.end()) {
    throw SequencingError("W_" + std::to_string(k) + " is not stored at checkpoint " +
                          std::to_string(m));
  }
  return *it->second;
}

const VectorField& ExpansionState::a_tilde(int i, int m) const {
  if (i < 0 || i >= static_cast<int>(a_tilde_.size())) {
    throw SequencingError("averaged field of order " + std::to_string(i) + " not available");
  }
  const auto& series = a_tilde_[i];
  const VectorField& f = series.size() == 1 ? series[0] : series.at(m);
  if (f.empty()) throw SequencingError("averaged field not computed");
  return f;
}

const ScalarField& ExpansionState::source(int k, int m) const {
  if (k < 1 || k >= static_cast<int>(sources_.size()) || sources_[k].empty()) {
    throw SequencingError("source of order " + std::to_string(k) + " not available");
  }
  return sources_[k].at(m);
}

double ExpansionState::w_closure_residual(int k) const {
  if (k <= 0 || k >= static_cast<int>(w_closure_.size())) return 0.0;
  return w_closure_[k];
}

double ExpansionState::w_closure_residual() const {
  double m = 0.0;
  for (double v : w_closure_) m = std::max(m, v);
  return m;
}

// ------------------------------------------------------------------ engine

ExpansionEngine::ExpansionEngine(ExpansionProblem problem, EngineOptions options) {
  if (!problem.grid) throw ConfigError("expansion: missing grid");
  if (!problem.flow) throw ConfigError("expansion: missing flow");
  if (problem.initial.empty()) throw ConfigError("expansion: missing initial data");
  if (!problem.initial.grid().same_layout(*problem.grid)) {
    throw ConfigError("expansion: initial data lives on a different grid");
  }
  if (problem.flow->dims() != problem.grid->dims()) {
    throw ConfigError("expansion: flow and grid dimensions differ");
  }
  if (std::abs(problem.flow->theta() - problem.grid->theta()) > 1e-12 * problem.grid->theta()) {
    throw ConfigError("expansion: flow period differs from the grid's theta");
  }
  if (!(problem.horizon > 0.0)) throw ConfigError("expansion: horizon must be positive");
  if (options.order < 0) throw ConfigError("expansion: order must be non-negative");
  if (options.checkpoints < 1) throw ConfigError("expansion: need at least one time step");
  if (options.order >= 1 && options.checkpoints < 2) {
    throw ConfigError("expansion: fewer than 3 checkpoints; cannot difference W in time");
  }
  if (options.trace_substeps < 1) throw ConfigError("expansion: trace_substeps must be >= 1");

  auto shared = std::make_shared<ExpansionProblem>(std::move(problem));
  state_.problem_ = shared;
  state_.context_ = std::make_shared<ExpansionContext>(*shared);
  state_.options_ = options;
  state_.order_ = -1;
  int M = options.checkpoints;
  state_.times_.resize(M + 1);
  for (int m = 0; m <= M; ++m) state_.times_[m] = shared->horizon * m / M;
  state_.V_.resize(options.order + 1);
  state_.sources_.resize(options.order + 1);
  state_.w_closure_.assign(options.order + 1, 0.0);
  bool autonomous = shared->expansion.autonomous && shared->flow->autonomous();
  state_.a_tilde_.assign(options.order + 1,
                         std::vector<VectorField>(autonomous ? 1 : M + 1));
  state_.zero_family_ = std::make_shared<TauFamily>(shared->grid);
  if (options.tau_rule == TauRule::kSpectral) {
    spectral_ = spectral_cumquad_matrix(shared->grid->tau_points(), shared->grid->theta());
  }
}

bool ExpansionEngine::retained(int m) const {
  const EngineOptions& o = state_.options_;
  int M = o.checkpoints;
  if (m == M) return true;
  if (o.diagnostic_window && M >= 2 && std::abs(m - M / 2) <= 1) return true;
  return std::find(o.retain_checkpoints.begin(), o.retain_checkpoints.end(), m) !=
         o.retain_checkpoints.end();
}

void ExpansionEngine::require_order(int k, const char* what) const {
  if (k > solved_) {
    throw SequencingError(std::string(what) + ": V_" + std::to_string(k) +
                          " has not been solved yet");
  }
}

const VectorField& ExpansionEngine::a_tilde(int i, int m) {
  if (i >= static_cast<int>(state_.a_tilde_.size())) {
    state_.a_tilde_.resize(i + 1, std::vector<VectorField>(state_.a_tilde_[0].size()));
  }
  auto& series = state_.a_tilde_[i];
  std::size_t idx = series.size() == 1 ? 0 : static_cast<std::size_t>(m);
  if (series[idx].empty()) {
    series[idx] = context().a_tilde_field(i, state_.times_[m], state_.options_.workers);
  }
  return series[idx];
}

const VectorField& ExpansionEngine::grad_V(int k, int m) {
  auto key = std::make_pair(k, m);
  auto it = grad_V_.find(key);
  if (it != grad_V_.end()) return it->second;
  require_order(k, "gradient");
  return grad_V_.emplace(key, gradient(state_.V_[k][m], state_.options_.workers)).first->second;
}

void ExpansionEngine::integrate_family(std::vector<double>& integrand, TauFamily& out) const {
  const TensorGrid& g = *state_.problem_->grid;
  int nt = g.tau_points();
  std::size_t n = g.size();
  double h = g.tau_step();
  int workers = state_.options_.workers;
  parallel_for(
      n,
      [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
          double s = 0.0;
          for (int l = 0; l < nt; ++l) s += integrand[l * n + i];
          out.closure()[i] = s * h;
        }
      },
      workers);
  if (state_.options_.tau_rule == TauRule::kSpectral) {
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RowMat> in(integrand.data(), nt, static_cast<Eigen::Index>(n));
    Eigen::Map<RowMat> res(out.slice(0), nt, static_cast<Eigen::Index>(n));
    res.noalias() = spectral_ * in;
    for (std::size_t i = 0; i < n; ++i) res(0, static_cast<Eigen::Index>(i)) = 0.0;
  } else {
    parallel_for(
        n,
        [&](std::size_t b, std::size_t e) {
          for (std::size_t i = b; i < e; ++i) {
            double acc = 0.0;
            out.slice(0)[i] = 0.0;
            for (int l = 1; l < nt; ++l) {
              acc += 0.5 * h * (integrand[(l - 1) * n + i] + integrand[l * n + i]);
              out.slice(l)[i] = acc;
            }
          }
        },
        workers);
  }
}

ScalarField ExpansionEngine::dW_dt_slice(int k, int m, int l) {
  const TensorGrid& g = *state_.problem_->grid;
  int M = state_.options_.checkpoints;
  if (M < 2) throw ConfigError("fewer than 3 checkpoints; cannot difference W in time");
  ScalarField out(state_.problem_->grid);
  if (k == 0) return out;
  double dt = state_.times_[1] - state_.times_[0];

  // Five-point 4th-order stencils (one-sided near the ends); three-point
  // 2nd-order ones when there are fewer than five checkpoints.
  int first = 0;
  std::vector<double> w;
  if (M >= 4) {
    static const double kStencils[5][5] = {{-25, 48, -36, 16, -3},
                                           {-3, -10, 18, -6, 1},
                                           {1, -8, 0, 8, -1},
                                           {-1, 6, -18, 10, 3},
                                           {3, -16, 36, -48, 25}};
    int row = m == 0 ? 0 : m == 1 ? 1 : m == M - 1 ? 3 : m == M ? 4 : 2;
    first = std::clamp(m - 2, 0, M - 4);
    for (double c : kStencils[row]) w.push_back(c / (12.0 * dt));
  } else {
    first = std::clamp(m - 1, 0, M - 2);
    if (m == 0) w = {-3.0, 4.0, -1.0};
    else if (m == M) w = {1.0, -4.0, 3.0};
    else w = {-1.0, 0.0, 1.0};
    for (double& c : w) c /= 2.0 * dt;
  }
  std::size_t n = g.size();
  auto& v = out.mutable_values();
  for (std::size_t a = 0; a < w.size(); ++a) {
    if (w[a] == 0.0) continue;
    auto f = compute_W(k, first + static_cast<int>(a));
    const double* src = f->slice(l);
    for (std::size_t i = 0; i < n; ++i) v[i] += w[a] * src[i];
  }
  return out;
}

const ScalarField& ExpansionEngine::tau_mean(int k, int m) {
  auto key = std::make_pair(k, m);
  auto it = means_.find(key);
  if (it != means_.end()) return it->second;
  const ExpansionProblem& pb = *state_.problem_;
  const TensorGrid& g = *pb.grid;
  ScalarField acc(pb.grid);
  if (k == 0) return means_.emplace(key, std::move(acc)).first->second;

  std::vector<FamilyPtr> W(k + 1);
  for (int j = 1; j <= k; ++j) W[j] = compute_W(j, m);
  double t = state_.times_[m];
  const FlowMap& flow = *pb.flow;
  std::size_t n = g.size();
  auto& out = acc.mutable_values();
  for (int l = 0; l < g.tau_points(); ++l) {
    double tau = g.tau(l);
    ScalarField dw = dW_dt_slice(k, m, l);
    // grads[i] = grad W_{k-i}(tau_l), i = 0 .. k-1
    std::vector<VectorField> grads(k);
    for (int i = 0; i < k; ++i) grads[i] = gradient(W[k - i]->slice_field(l), state_.options_.workers);
    parallel_for(
        n,
        [&](std::size_t b, std::size_t e) {
          for (std::size_t node = b; node < e; ++node) {
            Point x = g.node(node);
            Point X = flow.map(tau, x, t, 0.0);
            Matrix J = flow.jacobian(tau, x, t, 0.0);
            auto lu = J.partialPivLu();
            double det = J.determinant();
            if (!(std::abs(det - 1.0) <= 0.5)) {
              throw DegenerateFlowError("flow jacobian determinant too far from 1");
            }
            double s = dw[node];
            for (int i = 0; i < k; ++i) {
              Point rhs = pb.expansion.evaluate(i, t, tau, X);
              if (i == 0) rhs -= flow.dt(tau, x, t, 0.0);
              Point a = lu.solve(rhs);
              for (int d = 0; d < g.dims(); ++d) a[d] *= grads[i].component(d)[node];
              s += a.sum();
            }
            out[node] += s;
          }
        },
        state_.options_.workers);
  }
  for (auto& v : out) v /= g.tau_points();
  acc.check_finite("tau mean");
  return means_.emplace(key, std::move(acc)).first->second;
}

ScalarField ExpansionEngine::source(int k, int m) {
  const ExpansionProblem& pb = *state_.problem_;
  ScalarField s(pb.grid);
  if (k == 0) return s;
  require_order(k - 1, "source");
  const ScalarField& mean = tau_mean(k, m);
  auto& v = s.mutable_values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = -mean[i];
  for (int i = 1; i <= k; ++i) {
    if (!pb.expansion.has(i)) continue;
    const VectorField& at = a_tilde(i, m);
    const VectorField& gv = grad_V(k - i, m);
    for (int d = 0; d < pb.grid->dims(); ++d) {
      const auto& a = at.component(d).values();
      const auto& gd = gv.component(d).values();
      for (std::size_t n = 0; n < v.size(); ++n) v[n] -= a[n] * gd[n];
    }
  }
  s.check_finite("V source");
  return s;
}

FamilyPtr ExpansionEngine::compute_W(int k, int m) {
  if (k == 0) return state_.zero_family_;
  int M = state_.options_.checkpoints;
  if (m < 0 || m > M) throw InputError("compute_W: checkpoint out of range");
  auto key = std::make_pair(k, m);
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  if (auto it = state_.W_.find(key); it != state_.W_.end()) return it->second;
  require_order(k - 1, "compute_W");

  const ExpansionProblem& pb = *state_.problem_;
  const TensorGrid& g = *pb.grid;
  const FlowMap& flow = *pb.flow;
  int dims = g.dims();
  int nt = g.tau_points();
  std::size_t n = g.size();
  double t = state_.times_[m];
  int r = k - 1;  // order of the remainder term

  std::vector<const VectorField*> gv(k);
  std::vector<const VectorField*> at(k);
  std::vector<FamilyPtr> W(k);
  for (int j = 0; j < k; ++j) {
    gv[j] = &grad_V(j, m);
    at[j] = &a_tilde(j, m);
    if (j >= 1) W[j] = compute_W(j, m);
  }
  const ScalarField* mean = r >= 1 ? &tau_mean(r, m) : nullptr;

  std::vector<double> integrand(static_cast<std::size_t>(nt) * n, 0.0);
  for (int l = 0; l < nt; ++l) {
    double sigma = g.tau(l);
    // gw[j] = grad W_j(sigma), j = 1 .. k-1
    std::vector<VectorField> gw(k);
    for (int j = 1; j < k; ++j) gw[j] = gradient(W[j]->slice_field(l), state_.options_.workers);
    ScalarField dw = r >= 1 ? dW_dt_slice(r, m, l) : ScalarField();
    double* row = integrand.data() + static_cast<std::size_t>(l) * n;
    parallel_for(
        n,
        [&](std::size_t b, std::size_t e) {
          Point gu(dims), a(dims);
          for (std::size_t node = b; node < e; ++node) {
            Point x = g.node(node);
            Point z = flow.map(sigma, x, t, 0.0);
            Point p = flow.map(-sigma, z, t, 0.0);
            Matrix Jm = flow.jacobian(-sigma, z, t, 0.0);
            double det = Jm.determinant();
            if (!(std::abs(det - 1.0) <= 0.5)) {
              throw DegenerateFlowError("flow jacobian determinant too far from 1");
            }
            auto lu = Jm.partialPivLu();
            Stencil st(g, p);
            double value = 0.0;
            for (int j = 0; j < k; ++j) {
              int u = k - 1 - j;
              for (int d = 0; d < dims; ++d) {
                double gd = st.apply(gv[u]->component(d));
                if (u >= 1) gd += st.apply(gw[u].component(d));
                gu[d] = gd;
              }
              Point grad_U = Jm.transpose() * gu;
              for (int d = 0; d < dims; ++d) a[d] = st.apply(at[j]->component(d));
              if (j == 0) a -= flow.dt(-sigma, z, t, 0.0);
              Point aj = lu.solve(a);
              aj -= pb.expansion.evaluate(j, t, sigma, z);
              value += aj.dot(grad_U);
            }
            if (r >= 1) {
              double rv = st.apply(dw) - st.apply(*mean);
              for (int j = 0; j < r; ++j) {
                for (int d = 0; d < dims; ++d) {
                  rv += st.apply(at[j]->component(d)) * st.apply(gw[r - j].component(d));
                }
              }
              value -= rv;
            }
            row[node] = value;
          }
        },
        state_.options_.workers);
  }
  auto fam = std::make_shared<TauFamily>(pb.grid);
  integrate_family(integrand, *fam);
  for (int l = 0; l < nt; ++l) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(fam->slice(l)[i])) {
        throw DivergenceError("W_" + std::to_string(k) + ": non-finite value at checkpoint " +
                              std::to_string(m));
      }
    }
  }
  if (k < static_cast<int>(state_.w_closure_.size())) {
    state_.w_closure_[k] = std::max(state_.w_closure_[k], fam->relative_closure());
  }
  FamilyPtr ptr = fam;
  cache_[key] = ptr;
  if (retained(m)) state_.W_[key] = ptr;
  return ptr;
}

FamilyPtr ExpansionEngine::compute_W_pulled_back(int k, int m) {
  if (k == 0) return state_.zero_family_;
  require_order(k - 1, "compute_W_pulled_back");
  const ExpansionProblem& pb = *state_.problem_;
  const TensorGrid& g = *pb.grid;
  const FlowMap& flow = *pb.flow;
  int dims = g.dims();
  int nt = g.tau_points();
  std::size_t n = g.size();
  double t = state_.times_[m];
  int r = k - 1;

  std::vector<const VectorField*> gv(k), at(k);
  std::vector<FamilyPtr> W(k);
  for (int j = 0; j < k; ++j) {
    gv[j] = &grad_V(j, m);
    at[j] = &a_tilde(j, m);
    if (j >= 1) W[j] = compute_W(j, m);
  }
  const ScalarField* mean = r >= 1 ? &tau_mean(r, m) : nullptr;
  std::vector<double> integrand(static_cast<std::size_t>(nt) * n, 0.0);
  for (int l = 0; l < nt; ++l) {
    double sigma = g.tau(l);
    std::vector<VectorField> gw(k);
    for (int j = 1; j < k; ++j) gw[j] = gradient(W[j]->slice_field(l), state_.options_.workers);
    ScalarField dw = r >= 1 ? dW_dt_slice(r, m, l) : ScalarField();
    double* row = integrand.data() + static_cast<std::size_t>(l) * n;
    parallel_for(
        n,
        [&](std::size_t b, std::size_t e) {
          for (std::size_t node = b; node < e; ++node) {
            Point x = g.node(node);
            Point X = flow.map(sigma, x, t, 0.0);
            Matrix J = flow.jacobian(sigma, x, t, 0.0);
            auto lu = J.partialPivLu();
            double value = 0.0;
            for (int i = 0; i < k; ++i) {
              int u = k - 1 - i;
              Point rhs = pb.expansion.evaluate(i, t, sigma, X);
              if (i == 0) rhs -= flow.dt(sigma, x, t, 0.0);
              Point al = lu.solve(rhs);
              for (int d = 0; d < dims; ++d) {
                value += (at[i]->component(d)[node] - al[d]) * gv[u]->component(d)[node];
                if (u >= 1) value -= al[d] * gw[u].component(d)[node];
              }
            }
            if (r >= 1) value += (*mean)[node] - dw[node];
            row[node] = value;
          }
        },
        state_.options_.workers);
  }
  auto fam = std::make_shared<TauFamily>(pb.grid);
  integrate_family(integrand, *fam);
  return fam;
}

FamilyPtr ExpansionEngine::compute_R(int k, int m) {
  const ExpansionProblem& pb = *state_.problem_;
  const TensorGrid& g = *pb.grid;
  auto fam = std::make_shared<TauFamily>(pb.grid);
  if (k == 0) return fam;
  if (state_.options_.checkpoints < 2) {
    throw ConfigError("compute_R: fewer than 3 checkpoints");
  }
  require_order(k, "compute_R");
  const FlowMap& flow = *pb.flow;
  int dims = g.dims();
  std::size_t n = g.size();
  double t = state_.times_[m];
  std::vector<FamilyPtr> W(k + 1);
  std::vector<const VectorField*> at(k + 1);
  for (int j = 0; j <= k; ++j) {
    at[j] = &a_tilde(j, m);
    if (j >= 1) W[j] = compute_W(j, m);
  }
  const ScalarField& mean = tau_mean(k, m);
  for (int l = 0; l < g.tau_points(); ++l) {
    double tau = g.tau(l);
    std::vector<VectorField> gw(k + 1);
    for (int j = 1; j <= k; ++j) gw[j] = gradient(W[j]->slice_field(l), state_.options_.workers);
    ScalarField dw = dW_dt_slice(k, m, l);
    double* row = fam->slice(l);
    parallel_for(
        n,
        [&](std::size_t b, std::size_t e) {
          for (std::size_t node = b; node < e; ++node) {
            Point p = flow.map(-tau, g.node(node), t, 0.0);
            Stencil st(g, p);
            double rv = st.apply(dw) - st.apply(mean);
            for (int j = 0; j < k; ++j) {
              for (int d = 0; d < dims; ++d) {
                rv += st.apply(at[j]->component(d)) * st.apply(gw[k - j].component(d));
              }
            }
            row[node] = rv;
          }
        },
        state_.options_.workers);
  }
  return fam;
}

void ExpansionEngine::evict_before(int k, int m) {
  for (auto it = cache_.begin(); it != cache_.end();) {
    int j = it->first.first, mm = it->first.second;
    if (mm < m - (k - j) - 2) {
      it = cache_.erase(it);
    } else {
      ++it;
    }
  }
  for (auto it = means_.begin(); it != means_.end();) {
    int j = it->first.first, mm = it->first.second;
    if (mm < m - (k - j) - 2) {
      it = means_.erase(it);
    } else {
      ++it;
    }
  }
  for (auto it = grad_V_.begin(); it != grad_V_.end();) {
    if (it->first.second < m - k - 2) {
      it = grad_V_.erase(it);
    } else {
      ++it;
    }
  }
}

void ExpansionEngine::solve_order(int k) {
  if (k != solved_ + 1) {
    throw SequencingError("orders must be solved in sequence; next is " +
                          std::to_string(solved_ + 1));
  }
  if (k > state_.options_.order) {
    throw SequencingError("order " + std::to_string(k) + " exceeds the configured order");
  }
  const ExpansionProblem& pb = *state_.problem_;
  int M = state_.options_.checkpoints;
  int workers = state_.options_.workers;
  const auto& times = state_.times_;

  std::vector<VectorField> drift;
  if (state_.a_tilde_[0].size() == 1) {
    drift.push_back(a_tilde(0, 0));
  } else {
    for (int m = 0; m <= M; ++m) drift.push_back(a_tilde(0, m));
  }

  bool trivial = pb.initial.max_abs() == 0.0;
  if (k == 0) {
    if (trivial) {
      state_.V_[0].assign(M + 1, pb.initial);
    } else {
      state_.V_[0] = solve_transport(drift, {}, pb.initial, times, workers);
      if (state_.options_.retrace_final && M > 1) {
        DriftFunction exact_drift;
        bool zero_drift = true;
        for (const auto& f : drift) {
          for (int d = 0; d < f.dims(); ++d) zero_drift = zero_drift && f.component(d).max_abs() == 0.0;
        }
        if (state_.options_.exact_retrace_drift && !zero_drift) {
          const ExpansionContext* ctx = state_.context_.get();
          exact_drift = [ctx](double t, const Point& y) { return ctx->a_tilde(0, t, y); };
        }
        state_.V_[0][M] = retrace_transport(drift, {}, pb.initial, times, M,
                                            state_.options_.trace_substeps, workers,
                                            pb.initial_function, exact_drift);
      }
    }
    double n0 = norm(state_.V_[0][0]);
    double drift_max = 0.0;
    for (int m = 0; m <= M; ++m) {
      drift_max = std::max(drift_max, std::abs(norm(state_.V_[0][m]) - n0));
    }
    state_.norm_drift_ = n0 > 0.0 ? drift_max / n0 : 0.0;
    solved_ = 0;
    state_.order_ = 0;
    return;
  }

  ScalarField zero(pb.grid);
  if (trivial) {
    state_.V_[k].assign(M + 1, zero);
    state_.sources_[k].assign(M + 1, zero);
    for (int m = 0; m <= M; ++m) {
      if (retained(m)) state_.W_[{k, m}] = state_.zero_family_;
    }
    solved_ = k;
    state_.order_ = k;
    return;
  }

  std::vector<ScalarField> sources;
  sources.reserve(M + 1);
  for (int m = 0; m <= M; ++m) {
    sources.push_back(source(k, m));
    evict_before(k, m);
  }
  state_.V_[k] = solve_transport(drift, sources, zero, times, workers);
  if (state_.options_.retrace_final && M > 1) {
    state_.V_[k][M] = retrace_transport(drift, sources, zero, times, M,
                                        state_.options_.trace_substeps, workers);
  }
  state_.sources_[k] = std::move(sources);
  solved_ = k;
  state_.order_ = k;
}

ExpansionState ExpansionEngine::build() {
  auto start = std::chrono::steady_clock::now();
  for (int k = solved_ + 1; k <= state_.options_.order; ++k) solve_order(k);
  cache_.clear();
  means_.clear();
  grad_V_.clear();
  state_.build_seconds_ =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return state_;
}

ExpansionState build_expansion(const ExpansionProblem& problem, const EngineOptions& options) {
  ExpansionEngine engine(problem, options);
  return engine.build();
}

// --------------------------------------------------------------- transport

std::vector<ScalarField> solve_transport(const std::vector<VectorField>& drift,
                                         const std::vector<ScalarField>& source,
                                         const ScalarField& init,
                                         const std::vector<double>& t_grid, int workers) {
  check_transport_inputs(drift, source, init, t_grid);
  const TensorGrid& g = init.grid();
  int dims = g.dims();
  std::vector<ScalarField> out;
  out.reserve(t_grid.size());
  out.push_back(init);
  auto b_at = [&](std::size_t m) -> const VectorField& {
    return drift.size() == 1 ? drift[0] : drift[m];
  };
  for (std::size_t m = 1; m < t_grid.size(); ++m) {
    double dt = t_grid[m] - t_grid[m - 1];
    const VectorField& b0 = b_at(m - 1);
    const VectorField& b1 = b_at(m);
    const ScalarField& prev = out.back();
    ScalarField next(init.grid_ptr());
    auto& v = next.mutable_values();
    parallel_for(
        g.size(),
        [&](std::size_t b, std::size_t e) {
          Point half(dims), foot(dims), mid(dims);
          for (std::size_t node = b; node < e; ++node) {
            Point x = g.node(node);
            for (int d = 0; d < dims; ++d) half[d] = x[d] - 0.5 * dt * b1.component(d)[node];
            Stencil sh(g, half);
            for (int d = 0; d < dims; ++d) {
              double bm = 0.5 * (sh.apply(b0.component(d)) + sh.apply(b1.component(d)));
              foot[d] = x[d] - dt * bm;
            }
            double val = Stencil(g, foot).apply(prev);
            if (!source.empty()) {
              mid = 0.5 * (x + foot);
              Stencil sm(g, mid);
              val += dt * 0.5 * (sm.apply(source[m - 1]) + sm.apply(source[m]));
            }
            v[node] = val;
          }
        },
        workers);
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!std::isfinite(v[i])) {
        throw DivergenceError("transport: non-finite value at step " + std::to_string(m));
      }
    }
    out.push_back(std::move(next));
  }
  return out;
}

ScalarField retrace_transport(const std::vector<VectorField>& drift,
                              const std::vector<ScalarField>& source, const ScalarField& init,
                              const std::vector<double>& t_grid, int m_end, int substeps,
                              int workers, const InitialFunction& init_exact,
                              const DriftFunction& drift_exact) {
  check_transport_inputs(drift, source, init, t_grid);
  if (m_end < 0 || m_end >= static_cast<int>(t_grid.size())) {
    throw InputError("retrace: checkpoint out of range");
  }
  if (substeps < 1) throw InputError("retrace: substeps must be positive");
  const TensorGrid& g = init.grid();
  int dims = g.dims();
  ScalarField out(init.grid_ptr());
  if (m_end == 0) return init;
  auto& v = out.mutable_values();
  bool constant = drift.size() == 1;

  parallel_for(
      g.size(),
      [&](std::size_t b, std::size_t e) {
        Point tmp(dims);
        auto eval = [&](double t, const Point& y, Point& bv, double* sv) {
          if (drift_exact && !sv) {
            bv = drift_exact(t, y);
            return;
          }
          Stencil st(g, y);
          if (constant) {
            for (int d = 0; d < dims; ++d) bv[d] = st.apply(drift[0].component(d));
            if (sv) {
              TimeStencil ts = time_stencil(t_grid, t);
              double s = 0.0;
              for (int a = 0; a < ts.count; ++a) s += ts.w[a] * st.apply(source[ts.first + a]);
              *sv = s;
            }
            return;
          }
          TimeStencil ts = time_stencil(t_grid, t);
          bv.setZero();
          double s = 0.0;
          for (int a = 0; a < ts.count; ++a) {
            const VectorField& f = drift[ts.first + a];
            for (int d = 0; d < dims; ++d) bv[d] += ts.w[a] * st.apply(f.component(d));
            if (sv) s += ts.w[a] * st.apply(source[ts.first + a]);
          }
          if (sv) *sv = s;
        };
        bool with_source = !source.empty();
        Point k1(dims), k2(dims), k3(dims), k4(dims), bnew(dims), ymid(dims), bmid(dims);
        for (std::size_t node = b; node < e; ++node) {
          Point y = g.node(node);
          double acc = 0.0;
          double s_now = 0.0;
          eval(t_grid[m_end], y, k1, with_source ? &s_now : nullptr);
          for (int m = m_end; m >= 1; --m) {
            double h = (t_grid[m] - t_grid[m - 1]) / substeps;
            for (int s = 0; s < substeps; ++s) {
              double t0 = t_grid[m] - s * h;
              eval(t0 - 0.5 * h, y - 0.5 * h * k1, k2, nullptr);
              eval(t0 - 0.5 * h, y - 0.5 * h * k2, k3, nullptr);
              eval(t0 - h, y - h * k3, k4, nullptr);
              Point ynew = y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
              double s_new = 0.0;
              eval(t0 - h, ynew, bnew, with_source ? &s_new : nullptr);
              if (with_source) {
                // Hermite midpoint of the path, then Simpson in time.
                ymid = 0.5 * (y + ynew) - (h / 8.0) * (k1 - bnew);
                double s_mid = 0.0;
                eval(t0 - 0.5 * h, ymid, bmid, &s_mid);
                acc += h / 6.0 * (s_now + 4.0 * s_mid + s_new);
              }
              y = ynew;
              k1 = bnew;
              s_now = s_new;
            }
          }
          v[node] = (init_exact ? init_exact(y) : Stencil(g, y).apply(init)) + acc;
        }
      },
      workers);
  out.check_finite("retraced transport");
  return out;
}

// ----------------------------------------------------------- reconstruction

double reconstruct_U(const ExpansionState& state, int k, double t, double tau, const Point& x) {
  if (k < 0 || k > state.order()) {
    throw SequencingError("reconstruct_U: order " + std::to_string(k) + " not computed");
  }
  int m = state.checkpoint_index(t);
  const ExpansionProblem& pb = state.problem();
  double r = reduce_tau(tau, pb.grid->theta());
  Point y = pb.flow->map(-r, x, t, 0.0);
  double v = interpolate(state.V(k, m), y);
  if (k >= 1) v += state.W(k, m).evaluate(r, y);
  return v;
}

ScalarField reconstruct_U_field(const ExpansionState& state, int k, double t, double tau) {
  if (k < 0 || k > state.order()) {
    throw SequencingError("reconstruct_U: order " + std::to_string(k) + " not computed");
  }
  int m = state.checkpoint_index(t);
  const ExpansionProblem& pb = state.problem();
  double r = reduce_tau(tau, pb.grid->theta());
  ScalarField base = state.V(k, m);
  if (k >= 1) {
    ScalarField w = state.W(k, m).at_tau(r);
    auto& bv = base.mutable_values();
    for (std::size_t i = 0; i < bv.size(); ++i) bv[i] += w[i];
  }
  const TensorGrid& g = *pb.grid;
  ScalarField out(pb.grid);
  auto& v = out.mutable_values();
  parallel_for(
      g.size(),
      [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
          v[i] = Stencil(g, pb.flow->map(-r, g.node(i), t, 0.0)).apply(base);
        }
      },
      state.options().workers);
  return out;
}

ScalarField assemble(const ExpansionState& state, double eps, int K, double t) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw InputError("assemble: eps must be positive");
  if (K < 0 || K > state.order()) {
    throw SequencingError("assemble: order " + std::to_string(K) + " not computed");
  }
  int m = state.checkpoint_index(t);
  const ExpansionProblem& pb = state.problem();
  double theta = pb.grid->theta();
  double r = reduce_tau(t / eps, theta);
  ScalarField combined(pb.grid);
  auto& c = combined.mutable_values();
  double scale = 1.0;
  for (int k = 0; k <= K; ++k) {
    const auto& vk = state.V(k, m).values();
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += scale * vk[i];
    if (k >= 1) {
      ScalarField w = state.W(k, m).at_tau(r);
      for (std::size_t i = 0; i < c.size(); ++i) c[i] += scale * w[i];
    }
    scale *= eps;
  }
  const TensorGrid& g = *pb.grid;
  ScalarField out(pb.grid);
  auto& v = out.mutable_values();
  parallel_for(
      g.size(),
      [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
          v[i] = Stencil(g, pb.flow->map(-r, g.node(i), t, 0.0)).apply(combined);
        }
      },
      state.options().workers);
  return out;
}

double residual_Uk(const ExpansionState& state, int k) {
  if (k < 0 || k > state.order()) throw SequencingError("residual_Uk: order not computed");
  int M = state.checkpoints();
  if (M < 2) throw ConfigError("residual_Uk: needs at least 3 checkpoints");
  int md = M / 2;
  for (int j = 0; j <= k; ++j) {
    for (int m = md - 1; m <= md + 1; ++m) {
      if (!state.has_W(j, m)) {
        throw SequencingError("residual_Uk: W not stored around the middle checkpoint");
      }
    }
  }
  const ExpansionProblem& pb = state.problem();
  const ExpansionContext& ctx = state.context();
  const TensorGrid& g = *pb.grid;
  const FlowMap& flow = *pb.flow;
  int dims = g.dims();
  double t = state.times()[md];
  double dt = state.times()[1] - state.times()[0];
  int nt = g.tau_points();
  int tau_stride = std::max(1, nt / 8);
  auto samples = box_samples(g, 48, 0.0, 4242u, 0.5);

  // Gradients of W_j at every tau node (for the averaged terms of R_k).
  std::vector<std::vector<VectorField>> gw(k + 1);
  for (int j = 1; j <= k; ++j) {
    for (int l = 0; l < nt; ++l) gw[j].push_back(gradient(state.W(j, md).slice_field(l)));
  }
  auto dW = [&](int l, const Stencil& st) {
    if (k == 0) return 0.0;
    return (st.apply(state.W(k, md + 1).slice(l)) - st.apply(state.W(k, md - 1).slice(l))) /
           (2.0 * dt);
  };
  auto R_at = [&](int l, const Point& x) {
    if (k == 0) return 0.0;
    Point p = flow.map(-g.tau(l), x, t, 0.0);
    Stencil st(g, p);
    double mean = 0.0;
    for (int s = 0; s < nt; ++s) {
      mean += dW(s, st);
      for (int j = 0; j < k; ++j) {
        Point a = ctx.alpha(j, t, g.tau(s), p);
        for (int d = 0; d < dims; ++d) mean += a[d] * st.apply(gw[k - j][s].component(d));
      }
    }
    mean /= nt;
    double rv = dW(l, st) - mean;
    for (int j = 0; j < k; ++j) {
      for (int d = 0; d < dims; ++d) {
        rv += st.apply(state.a_tilde(j, md).component(d)) * st.apply(gw[k - j][l].component(d));
      }
    }
    return rv;
  };

  double worst = 0.0;
  for (int l = 0; l < nt; l += tau_stride) {
    double tau = g.tau(l);
    std::vector<VectorField> gu(k + 1);
    for (int j = 0; j <= k; ++j) gu[j] = gradient(reconstruct_U_field(state, j, t, tau));
    for (const auto& smp : samples) {
      const Point& x = smp.x;
      double du = (reconstruct_U(state, k, state.times()[md + 1], tau, x) -
                   reconstruct_U(state, k, state.times()[md - 1], tau, x)) / (2.0 * dt);
      double res = du - R_at(l, x);
      for (int i = 0; i <= k; ++i) {
        Point a = ctx.a_field(i, t, tau, x);
        Point grad = interpolate(gu[k - i], x);
        res += a.dot(grad);
      }
      worst = std::max(worst, std::abs(res));
    }
  }
  return worst;
}

}  // namespace twoscale
