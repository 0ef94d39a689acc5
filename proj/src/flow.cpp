#include "twoscale/flow.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "twoscale/errors.hpp"

namespace twoscale {
namespace {

int step_count(double sigma, double tau, int substeps_per_unit) {
  if (substeps_per_unit < 8) throw InputError("flow: substeps_per_unit must be at least 8");
  double span = std::abs(tau - sigma);
  return std::max(1, static_cast<int>(std::ceil(span * substeps_per_unit - 1e-9)));
}

void check_state(const Point& y, int step) {
  if (!y.allFinite()) {
    throw DivergenceError("flow integration: non-finite state at step " + std::to_string(step));
  }
}

}  // namespace

AnalyticFlow::AnalyticFlow(int dims, double theta, MapFn map, JacFn jacobian, MapFn dt,
                           bool autonomous)
    : dims_(dims),
      theta_(theta),
      map_(std::move(map)),
      jacobian_(std::move(jacobian)),
      dt_(std::move(dt)),
      autonomous_(autonomous) {}

Point AnalyticFlow::map(double tau, const Point& x, double t, double sigma) const {
  return map_(tau, x, t, sigma);
}

Matrix AnalyticFlow::jacobian(double tau, const Point& x, double t, double sigma) const {
  return jacobian_(tau, x, t, sigma);
}

Point AnalyticFlow::dt(double tau, const Point& x, double t, double sigma) const {
  if (!dt_) return Point::Zero(dims_);
  return dt_(tau, x, t, sigma);
}

Point integrate_flow(const FastField& field, double t, double sigma, double tau, const Point& x,
                     int substeps_per_unit) {
  if (!x.allFinite()) throw InputError("flow: non-finite start point");
  if (tau == sigma) return x;
  int n = step_count(sigma, tau, substeps_per_unit);
  double h = (tau - sigma) / n;
  Point y = x;
  for (int i = 0; i < n; ++i) {
    double s = sigma + i * h;
    Point k1 = field(t, s, y);
    Point k2 = field(t, s + 0.5 * h, y + 0.5 * h * k1);
    Point k3 = field(t, s + 0.5 * h, y + 0.5 * h * k2);
    Point k4 = field(t, s + h, y + h * k3);
    y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    check_state(y, i + 1);
  }
  return y;
}

Matrix finite_difference_jacobian(const FastField& field, double t, double tau, const Point& x,
                                  double h) {
  int n = static_cast<int>(x.size());
  Matrix j(n, n);
  for (int c = 0; c < n; ++c) {
    Point xp = x, xm = x;
    xp[c] += h;
    xm[c] -= h;
    j.col(c) = (field(t, tau, xp) - field(t, tau, xm)) / (2.0 * h);
  }
  return j;
}

void integrate_flow_with_jacobian(const FastField& field, const FastJacobian& field_jacobian,
                                  double t, double sigma, double tau, const Point& x,
                                  int substeps_per_unit, Point& state, Matrix& jac) {
  int dims = static_cast<int>(x.size());
  state = x;
  jac = Matrix::Identity(dims, dims);
  if (tau == sigma) return;
  auto dl = [&](double s, const Point& y) -> Matrix {
    return field_jacobian ? field_jacobian(t, s, y) : finite_difference_jacobian(field, t, s, y);
  };
  int n = step_count(sigma, tau, substeps_per_unit);
  double h = (tau - sigma) / n;
  for (int i = 0; i < n; ++i) {
    double s = sigma + i * h;
    const Point& y = state;
    Point k1 = field(t, s, y);
    Matrix m1 = dl(s, y) * jac;
    Point y2 = y + 0.5 * h * k1;
    Point k2 = field(t, s + 0.5 * h, y2);
    Matrix m2 = dl(s + 0.5 * h, y2) * (jac + 0.5 * h * m1);
    Point y3 = y + 0.5 * h * k2;
    Point k3 = field(t, s + 0.5 * h, y3);
    Matrix m3 = dl(s + 0.5 * h, y3) * (jac + 0.5 * h * m2);
    Point y4 = y + h * k3;
    Point k4 = field(t, s + h, y4);
    Matrix m4 = dl(s + h, y4) * (jac + h * m3);
    state += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    jac += (h / 6.0) * (m1 + 2.0 * m2 + 2.0 * m3 + m4);
    check_state(state, i + 1);
    if (!jac.allFinite()) {
      throw DivergenceError("flow jacobian: non-finite value at step " + std::to_string(i + 1));
    }
  }
}

NumericFlow::NumericFlow(int dims, double theta, FastField field, FastJacobian field_jacobian,
                         NumericFlowOptions options)
    : dims_(dims),
      theta_(theta),
      field_(std::move(field)),
      field_jacobian_(std::move(field_jacobian)),
      options_(options) {
  if (options_.substeps_per_unit < 8) {
    throw ConfigError("numeric flow: substeps_per_unit must be at least 8");
  }
}

double NumericFlow::h_t() const {
  return options_.h_t > 0.0 ? options_.h_t : 1e-4 * std::max(options_.horizon, 1e-8);
}

Point NumericFlow::map(double tau, const Point& x, double t, double sigma) const {
  return integrate_flow(field_, t, sigma, tau, x, options_.substeps_per_unit);
}

Matrix NumericFlow::jacobian(double tau, const Point& x, double t, double sigma) const {
  Point y;
  Matrix j;
  integrate_flow_with_jacobian(field_, field_jacobian_, t, sigma, tau, x,
                               options_.substeps_per_unit, y, j);
  return j;
}

Point NumericFlow::dt(double tau, const Point& x, double t, double sigma) const {
  if (options_.autonomous) return Point::Zero(dims_);
  return flow_dt(*this, tau, x, t, sigma, h_t());
}

Matrix flow_jacobian(const FlowMap& flow, double tau, const Point& x, double t, double sigma) {
  return flow.jacobian(tau, x, t, sigma);
}

Point flow_dt(const FlowMap& flow, double tau, const Point& x, double t, double sigma,
              double h_t) {
  if (!(h_t > 0.0)) throw InputError("flow_dt: h_t must be positive");
  if (flow.kind() == FlowKind::kAnalytic) return flow.dt(tau, x, t, sigma);
  return (flow.map(tau, x, t + h_t, sigma) - flow.map(tau, x, t - h_t, sigma)) / (2.0 * h_t);
}

double check_periodicity(const FlowMap& flow, const std::vector<FlowSample>& samples) {
  double worst = 0.0;
  for (const auto& s : samples) {
    worst = std::max(worst, (flow.map(flow.theta(), s.x, s.t, 0.0) - s.x).norm());
  }
  return worst;
}

double volume_defect(const FlowMap& flow, const std::vector<FlowSample>& samples,
                     const std::vector<double>& taus) {
  double worst = 0.0;
  for (const auto& s : samples) {
    for (double tau : taus) {
      worst = std::max(worst, std::abs(flow.jacobian(tau, s.x, s.t, 0.0).determinant() - 1.0));
    }
  }
  return worst;
}

double inverse_defect(const FlowMap& flow, const std::vector<FlowSample>& samples,
                      const std::vector<double>& taus) {
  double worst = 0.0;
  for (const auto& s : samples) {
    for (double tau : taus) {
      Point y = flow.map(tau, s.x, s.t, 0.0);
      worst = std::max(worst, (flow.map(0.0, y, s.t, tau) - s.x).norm());
    }
  }
  return worst;
}

std::vector<FlowSample> box_samples(const TensorGrid& grid, int count, double t_max,
                                    unsigned seed, double shrink) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<FlowSample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    FlowSample s;
    s.t = t_max * u(rng);
    s.x = Point(grid.dims());
    for (int d = 0; d < grid.dims(); ++d) {
      const Axis& a = grid.axis(d);
      double mid = 0.5 * (a.lower + a.upper), half = 0.5 * (a.upper - a.lower) * shrink;
      s.x[d] = mid + half * (2.0 * u(rng) - 1.0);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace twoscale
