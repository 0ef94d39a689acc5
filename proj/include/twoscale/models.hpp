#pragma once

#include <Eigen/Dense>

#include <array>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "twoscale/engine.hpp"
#include "twoscale/flow.hpp"
#include "twoscale/numerics.hpp"

namespace twoscale {

// ---------------------------------------------------------------------------
// Analytic field forms referenced from config files.

enum class FormKind { kZero, kConstant, kMode, kGaussianMode };

// zero                      0
// constant   c              c
// mode       c m p          c cos(m tau) p(y)
// gaussian   c m p w        c cos(m tau) p(y) exp(-|y|^2 / (2 w^2))
// p is a polynomial of degree <= 2 in the form's variables, coefficients
// ordered as 1, y_1 .. y_d, then y_i y_j for i <= j.
struct FieldForm {
  FormKind kind = FormKind::kZero;
  double amplitude = 0.0;
  int mode = 0;
  std::vector<double> poly{1.0};
  double width = 1.0;

  double evaluate(double tau, std::span<const double> y) const;
  bool is_zero() const;
  // Same syntax as parse_field_form accepts.
  std::string describe() const;
};

// Parses e.g. "gaussian_mode c=0.5 m=1 p=0,1 w=2". `variables` bounds the
// polynomial length. Throws ConfigError.
FieldForm parse_field_form(const std::string& text, int variables);

// ---------------------------------------------------------------------------
// Presets.

enum class PresetId { kBeam, kGC4D, kFLR4D };

struct PresetInfo {
  PresetId id;
  std::string name;
  int dims;
  double theta;
  std::string variables;
  // Field components per order, in config order.
  std::vector<std::string> components;
  std::string description;
};

const std::vector<PresetInfo>& preset_catalog();
const PresetInfo& preset_info(PresetId id);
// ConfigError on unknown names.
PresetId parse_preset(const std::string& name);

struct PresetFields {
  // orders[i][c]: component c of the order-i field (beam: E; gc4d and flr4d:
  // Ex, Ey, Bz). Missing orders are zero.
  std::vector<std::vector<FieldForm>> orders;
  // Parallel advection speed of the full FLR model; x_par is not a
  // coordinate of the 4D reduction so it has no effect there.
  double v_parallel = 0.0;
};

// J(s; x)^{-1} A_j(t, s + shift, X(s; x)) in closed form (all preset flows
// are autonomous, so the dX/dt term vanishes).
using ClosedAlpha = std::function<Point(int j, double t, double s, double shift, const Point& x)>;

struct LimitModel {
  PresetId preset = PresetId::kBeam;
  int dims = 2;
  double theta = 0.0;
  int order = 0;
  OscillatingExpansion expansion;
  FastField fast;
  FastJacobian fast_jacobian;
  FlowPtr flow;          // closed form
  FlowPtr numeric_flow;  // RK4 on `fast`
  ClosedAlpha alpha;
};

// Generic-engine inputs for a preset. The expansion carries every given
// field order (it also drives the reference solver). ConfigError when K or a
// field order is outside 0..3 or a component count does not match the preset.
LimitModel preset_limit_model(PresetId preset, const PresetFields& fields, int order,
                              int substeps_per_unit = 64);

// Fields used by the shipped configs and the invariant suite: a single tau
// mode with a Gaussian envelope in every electric component.
PresetFields default_preset_fields(PresetId preset);

// Box used when a config gives no bounds.
std::vector<Axis> default_axes(PresetId preset, int points);

// ---------------------------------------------------------------------------
// Closed-form averaged operators.

// E(t, tau, r)
using BeamProfile = std::function<double(double t, double tau, double r)>;

// which = 1: -mean sin(tau) E(t, tau, r cos tau + v sin tau); which = 2: cos.
double beam_J(int which, const BeamProfile& E, double t, double r, double v, int tau_points);

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// L(t, tau, x, v) = E + v x B in three dimensions.
using Lorentz3 = std::function<Vec3(double t, double tau, const Vec3& x, const Vec3& v)>;

// Gyration matrix R(t, tau, x) and its derivatives.
struct GCRotation {
  std::function<Mat3(double t, double tau, const Vec3& x)> R;
  std::function<Mat3(double t, double tau, const Vec3& x)> dR_dt;
  // dR_dx(t, tau, x)[k] = dR/dx_k
  std::function<std::array<Mat3, 3>(double t, double tau, const Vec3& x)> dR_dx;
  double theta = 0.0;
};

// beta = e_z: R(tau) = [[cos, sin, 0], [-sin, cos, 0], [0, 0, 1]].
GCRotation gc_rotation_ez();
// R = exp(B~) with B~ v = v x beta~(t, tau, x); derivatives by central
// differences with step h.
GCRotation gc_rotation_from_beta_tilde(std::function<Vec3(double t, double tau, const Vec3& x)> beta_tilde,
                                       double theta, double h = 1e-5);
// Matrix of v -> v x b.
Mat3 cross_matrix_right(const Vec3& b);

// J_1 = mean R.
Mat3 gc_J1(const GCRotation& rot, double t, const Vec3& x, int tau_points);
// J_2 = mean R^{-1}[-dR/dt v - (grad_x R v) R v + L_0(t, tau, x, R v)].
Vec3 gc_J2(const GCRotation& rot, const Lorentz3& L0, double t, const Vec3& x, const Vec3& v,
           int tau_points);
// J_3 = mean R^{-1} L_j(t, tau, x, R v).
Vec3 gc_J3(const GCRotation& rot, const Lorentz3& Lj, double t, const Vec3& x, const Vec3& v,
           int tau_points);

Mat3 flr_R1(double tau);
Mat3 flr_R2(double tau);
// which = 1, 2: mean R_which(-tau) L(t, tau, x + R_1(tau) v, R_2(tau) v).
Vec3 flr_J(int which, const Lorentz3& L, double t, const Vec3& x, const Vec3& v, int tau_points);

// ---------------------------------------------------------------------------
// Preset-form recursion, used to cross-check the generic engine.

// W_k from the preset recursion
//   int_0^tau sum_j (J_j - alpha_j)(sigma) . (grad V_{k-1-j} + grad W_{k-1-j}(sigma))
//             - (dW_{k-1}/dt(sigma) - <dW_{k-1}/dt>) dsigma
// with alpha_j and J_j = <alpha_j> taken from the closed forms. Lower-order
// V and W are read from the engine.
FamilyPtr specialized_W(const LimitModel& model, ExpansionEngine& engine, int k, int m);

// R_k = dU_k/dt + sum_{j<=k} a_j . grad U_{k-j} on the tau nodes, with
// a_j(tau, x) = mean_s alpha_j(s; shift tau). Needs V_k solved and W_0..W_k
// retained at checkpoints m-1, m, m+1.
FamilyPtr specialized_R(const LimitModel& model, const ExpansionState& state, int k, int m);

}  // namespace twoscale
