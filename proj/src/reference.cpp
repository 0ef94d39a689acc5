#include "twoscale/reference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

#include "twoscale/errors.hpp"
#include "twoscale/parallel.hpp"

namespace twoscale {
namespace {

void validate(const StiffProblem& pb) {
  if (!(pb.eps > 0.0) || !std::isfinite(pb.eps)) throw ConfigError("reference: eps must be positive");
  if (!pb.fast) throw ConfigError("reference: missing fast field");
  if (!(pb.theta > 0.0)) throw ConfigError("reference: theta must be positive");
  if (pb.initial.empty()) throw ConfigError("reference: missing initial data");
  if (!(pb.horizon > 0.0)) throw ConfigError("reference: horizon must be positive");
  if (pb.n_fast < 32) throw ConfigError("reference: n_fast must be at least 32");
  if (pb.step_multiple < 1) throw ConfigError("reference: step_multiple must be positive");
  for (double t : pb.output_times) {
    if (!(t > 0.0) || t > pb.horizon * (1.0 + 1e-12)) {
      throw ConfigError("reference: output time " + std::to_string(t) + " outside (0, T]");
    }
  }
  double mem = reference_memory_estimate(pb);
  if (mem > pb.memory_limit_bytes) {
    throw ConfigError("reference: memory estimate " + std::to_string(mem) +
                      " bytes exceeds the limit");
  }
}

ReferenceSolution solve(const StiffProblem& pb, const SourceField* source) {
  validate(pb);
  auto start = std::chrono::steady_clock::now();
  const TensorGrid& g = pb.initial.grid();
  double eps = pb.eps;
  long steps = static_cast<long>(std::ceil(pb.horizon / (eps * pb.theta / pb.n_fast) - 1e-9));
  long multiple = std::max(1, pb.step_multiple);
  steps = std::max(1L, (steps + multiple - 1) / multiple) * multiple;
  double dt = pb.horizon / steps;

  std::vector<long> marks;
  std::vector<double> requested = pb.output_times;
  if (requested.empty()) requested.push_back(pb.horizon);
  std::sort(requested.begin(), requested.end());
  for (double t : requested) {
    long n = std::clamp(std::lround(t / dt), 1L, steps);
    if (marks.empty() || n > marks.back()) marks.push_back(n);
  }

  auto velocity = [&](double t, const Point& x) {
    Point b = pb.fast(t, t / eps, x) / eps;
    if (pb.slow) b += pb.slow(t, x);
    return b;
  };

  ReferenceSolution out;
  out.dt = dt;
  out.steps = steps;
  ScalarField current = pb.initial;
  double n0 = norm(pb.initial);
  long prev = 0;
  for (long mark : marks) {
    ScalarField next(pb.initial.grid_ptr());
    auto& v = next.mutable_values();
    parallel_for(
        g.size(),
        [&](std::size_t b, std::size_t e) {
          for (std::size_t node = b; node < e; ++node) {
            Point y = g.node(node);
            double acc = 0.0;
            double t0 = mark * dt;
            Point k1 = velocity(t0, y);
            double s_now = source ? (*source)(t0, y) : 0.0;
            for (long n = mark; n > prev; --n) {
              double t = n * dt;
              Point k2 = velocity(t - 0.5 * dt, y - 0.5 * dt * k1);
              Point k3 = velocity(t - 0.5 * dt, y - 0.5 * dt * k2);
              Point k4 = velocity(t - dt, y - dt * k3);
              Point ynew = y - (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
              Point bnew = velocity(t - dt, ynew);
              if (source) {
                Point ymid = 0.5 * (y + ynew) - (dt / 8.0) * (k1 - bnew);
                double s_mid = (*source)(t - 0.5 * dt, ymid);
                double s_new = (*source)(t - dt, ynew);
                acc += dt / 6.0 * (s_now + 4.0 * s_mid + s_new);
                s_now = s_new;
              }
              y = ynew;
              k1 = bnew;
            }
            if (!y.allFinite()) {
              throw DivergenceError("reference: non-finite characteristic at node " +
                                    std::to_string(node));
            }
            double u = prev == 0 && pb.initial_function ? pb.initial_function(y)
                                                          : Stencil(g, y).apply(current);
            v[node] = u + acc / eps;
          }
        },
        pb.workers);
    next.check_finite("reference solution");
    out.times.push_back(mark * dt);
    out.fields.push_back(next);
    if (n0 > 0.0) out.norm_drift = std::max(out.norm_drift, std::abs(norm(next) - n0) / n0);
    current = std::move(next);
    prev = mark;
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace

SlowField slow_field_from_expansion(const OscillatingExpansion& expansion, double eps) {
  return [expansion, eps](double t, const Point& x) {
    Point a = Point::Zero(x.size());
    double scale = 1.0;
    double tau = t / eps;
    for (int i = 0; i < expansion.size(); ++i) {
      if (expansion.has(i)) a += scale * expansion.evaluate(i, t, tau, x);
      scale *= eps;
    }
    return a;
  };
}

double reference_memory_estimate(const StiffProblem& problem) {
  if (problem.initial.empty()) return 0.0;
  double outputs = std::max<std::size_t>(1, problem.output_times.size());
  return 8.0 * static_cast<double>(problem.initial.size()) * (outputs + 2.0);
}

ReferenceSolution solve_direct(const StiffProblem& problem) { return solve(problem, nullptr); }

ReferenceSolution solve_direct_with_source(const StiffProblem& problem, const SourceField& source) {
  if (!source) return solve(problem, nullptr);
  return solve(problem, &source);
}

}  // namespace twoscale
