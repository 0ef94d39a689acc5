#pragma once

#include <functional>
#include <vector>

#include "twoscale/engine.hpp"
#include "twoscale/flow.hpp"
#include "twoscale/numerics.hpp"

namespace twoscale {

// Slow field A_eps(t, x).
using SlowField = std::function<Point(double t, const Point& x)>;
// Scalar source f_eps(t, x); the solver applies the 1/eps factor.
using SourceField = std::function<double(double t, const Point& x)>;

struct StiffProblem {
  double eps = 0.0;
  SlowField slow;  // null means zero
  FastField fast;
  double theta = 0.0;
  ScalarField initial;
  // Optional closed form of `initial`, evaluated at the feet of the first
  // output segment instead of interpolating the samples.
  InitialFunction initial_function;
  double horizon = 1.0;
  int n_fast = 64;
  // Output times in (0, horizon]; empty means {horizon}. Rounded to the
  // nearest step.
  std::vector<double> output_times;
  // Step count is rounded up to a multiple of this, so that horizon * m /
  // step_multiple falls on a step.
  int step_multiple = 1;
  int workers = 0;
  double memory_limit_bytes = 4.0e9;
};

// A_eps(t, x) = sum_i eps^i A_i(t, t/eps, x).
SlowField slow_field_from_expansion(const OscillatingExpansion& expansion, double eps);

struct ReferenceSolution {
  std::vector<double> times;
  std::vector<ScalarField> fields;
  // max_j |norm(u(t_j)) - norm(u0)| / norm(u0) over the output times
  double norm_drift = 0.0;
  long steps = 0;
  double dt = 0.0;
  double seconds = 0.0;

  const ScalarField& final_field() const { return fields.back(); }
};

// Bytes held by the solver for this problem.
double reference_memory_estimate(const StiffProblem& problem);

// Backward characteristics of A_eps + L(t, t/eps, .)/eps traced with RK4 at
// step eps*theta/n_fast; the previous output is interpolated once at the foot.
ReferenceSolution solve_direct(const StiffProblem& problem);
// Same with the right-hand side f_eps/eps integrated along each path.
ReferenceSolution solve_direct_with_source(const StiffProblem& problem, const SourceField& source);

}  // namespace twoscale
