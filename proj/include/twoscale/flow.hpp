#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "twoscale/numerics.hpp"

namespace twoscale {

// Fast field L(t, tau, x) and its spatial Jacobian.
using FastField = std::function<Point(double t, double tau, const Point& x)>;
using FastJacobian = std::function<Matrix(double t, double tau, const Point& x)>;

enum class FlowKind { kAnalytic, kNumeric };

// Characteristic map X(tau; x, t; sigma) of d/dtau X = L(t, tau, X), X(sigma) = x.
class FlowMap {
 public:
  virtual ~FlowMap() = default;

  virtual int dims() const = 0;
  virtual double theta() const = 0;
  virtual FlowKind kind() const = 0;
  // True when X does not depend on t.
  virtual bool autonomous() const = 0;

  virtual Point map(double tau, const Point& x, double t, double sigma) const = 0;
  virtual Matrix jacobian(double tau, const Point& x, double t, double sigma) const = 0;
  virtual Point dt(double tau, const Point& x, double t, double sigma) const = 0;
};

using FlowPtr = std::shared_ptr<const FlowMap>;

// Closed-form flow given by callables.
class AnalyticFlow : public FlowMap {
 public:
  using MapFn = std::function<Point(double tau, const Point& x, double t, double sigma)>;
  using JacFn = std::function<Matrix(double tau, const Point& x, double t, double sigma)>;

  AnalyticFlow(int dims, double theta, MapFn map, JacFn jacobian, MapFn dt, bool autonomous);

  int dims() const override { return dims_; }
  double theta() const override { return theta_; }
  FlowKind kind() const override { return FlowKind::kAnalytic; }
  bool autonomous() const override { return autonomous_; }
  Point map(double tau, const Point& x, double t, double sigma) const override;
  Matrix jacobian(double tau, const Point& x, double t, double sigma) const override;
  Point dt(double tau, const Point& x, double t, double sigma) const override;

 private:
  int dims_;
  double theta_;
  MapFn map_;
  JacFn jacobian_;
  MapFn dt_;
  bool autonomous_;
};

struct NumericFlowOptions {
  int substeps_per_unit = 64;
  // Step for the central difference in t; 0 means 1e-4 * horizon.
  double h_t = 0.0;
  double horizon = 1.0;
  bool autonomous = false;
};

// RK4-integrated flow. The Jacobian comes from the variational equation;
// when no analytic dL is supplied it is approximated by central differences.
class NumericFlow : public FlowMap {
 public:
  NumericFlow(int dims, double theta, FastField field, FastJacobian field_jacobian,
              NumericFlowOptions options);

  int dims() const override { return dims_; }
  double theta() const override { return theta_; }
  FlowKind kind() const override { return FlowKind::kNumeric; }
  bool autonomous() const override { return options_.autonomous; }
  Point map(double tau, const Point& x, double t, double sigma) const override;
  Matrix jacobian(double tau, const Point& x, double t, double sigma) const override;
  Point dt(double tau, const Point& x, double t, double sigma) const override;

  double h_t() const;
  const FastField& field() const { return field_; }

 private:
  int dims_;
  double theta_;
  FastField field_;
  FastJacobian field_jacobian_;
  NumericFlowOptions options_;
};

// Classical RK4 from sigma to tau with fixed step <= 1 / substeps_per_unit.
Point integrate_flow(const FastField& field, double t, double sigma, double tau, const Point& x,
                     int substeps_per_unit);

// State and Jacobian together (variational equation with the same RK4 steps).
void integrate_flow_with_jacobian(const FastField& field, const FastJacobian& field_jacobian,
                                  double t, double sigma, double tau, const Point& x,
                                  int substeps_per_unit, Point& state, Matrix& jac);

// Central-difference Jacobian of a fast field.
Matrix finite_difference_jacobian(const FastField& field, double t, double tau, const Point& x,
                                  double h = 1e-6);

Matrix flow_jacobian(const FlowMap& flow, double tau, const Point& x, double t, double sigma);
// Closed form for analytic flows; central difference with step h_t otherwise.
Point flow_dt(const FlowMap& flow, double tau, const Point& x, double t, double sigma,
              double h_t);

struct FlowSample {
  double t = 0.0;
  Point x;
};

// max ||X(theta; x, t; 0) - x|| over the samples.
double check_periodicity(const FlowMap& flow, const std::vector<FlowSample>& samples);
// max |det J(tau; x, t; 0) - 1| over the samples and the given tau values.
double volume_defect(const FlowMap& flow, const std::vector<FlowSample>& samples,
                     const std::vector<double>& taus);
// max ||X(0; X(tau; x, t; 0), t; tau) - x||.
double inverse_defect(const FlowMap& flow, const std::vector<FlowSample>& samples,
                      const std::vector<double>& taus);

// Deterministic sample points inside the grid box (fixed seed).
std::vector<FlowSample> box_samples(const TensorGrid& grid, int count, double t_max,
                                    unsigned seed = 12345, double shrink = 0.5);

}  // namespace twoscale
