#include "twoscale/models.hpp"

#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>

#include "twoscale/errors.hpp"
#include "twoscale/parallel.hpp"

namespace twoscale {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double parse_number(const std::string& text, const std::string& what) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw ConfigError(what + ": '" + text + "' is not a number");
  }
  return v;
}

std::string shortest(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::size_t poly_terms(int variables) {
  return 1 + variables + variables * (variables + 1) / 2;
}

Matrix rot2(double s) {
  Matrix r(2, 2);
  r << std::cos(s), std::sin(s), -std::sin(s), std::cos(s);
  return r;
}

Matrix flr_r1_2d(double s) {
  Matrix r(2, 2);
  r << std::sin(s), 1.0 - std::cos(s), std::cos(s) - 1.0, std::sin(s);
  return r;
}

// Field forms of one order bound to their component layout.
struct OrderFields {
  std::vector<FieldForm> comps;

  double beam_E(double tau, double r) const {
    double y[1] = {r};
    return comps[0].evaluate(tau, y);
  }
  // (Ex + vy Bz, Ey - vx Bz) at planar position (x, y).
  void lorentz(double tau, double x, double y, double vx, double vy, double& lx,
               double& ly) const {
    double p[2] = {x, y};
    double ex = comps[0].evaluate(tau, p);
    double ey = comps[1].evaluate(tau, p);
    double bz = comps[2].evaluate(tau, p);
    lx = ex + vy * bz;
    ly = ey - vx * bz;
  }
};

struct ModelData {
  PresetId preset;
  std::vector<OrderFields> orders;

  bool has(int j) const {
    if (j < 0 || j >= static_cast<int>(orders.size())) return false;
    for (const auto& f : orders[j].comps) {
      if (!f.is_zero()) return true;
    }
    return false;
  }
};

void check_preset_fields(const PresetInfo& info, const PresetFields& fields) {
  if (fields.orders.size() > 4) {
    throw ConfigError(info.name + ": field orders above 3 are not supported");
  }
  for (std::size_t i = 0; i < fields.orders.size(); ++i) {
    const auto& comps = fields.orders[i];
    if (!comps.empty() && comps.size() != info.components.size()) {
      throw ConfigError(info.name + ": order " + std::to_string(i) + " needs " +
                        std::to_string(info.components.size()) + " field components, got " +
                        std::to_string(comps.size()));
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------

double FieldForm::evaluate(double tau, std::span<const double> y) const {
  if (kind == FormKind::kZero) return 0.0;
  if (kind == FormKind::kConstant) return amplitude;
  double p = poly.empty() ? 0.0 : poly[0];
  std::size_t d = y.size();
  std::size_t idx = 1;
  for (std::size_t i = 0; i < d && idx < poly.size(); ++i, ++idx) p += poly[idx] * y[i];
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d && idx < poly.size(); ++j, ++idx) p += poly[idx] * y[i] * y[j];
  }
  double v = amplitude * std::cos(mode * tau) * p;
  if (kind == FormKind::kGaussianMode) {
    double r2 = 0.0;
    for (double c : y) r2 += c * c;
    v *= std::exp(-r2 / (2.0 * width * width));
  }
  return v;
}

bool FieldForm::is_zero() const {
  if (kind == FormKind::kZero || amplitude == 0.0) return true;
  if (kind == FormKind::kConstant) return false;
  for (double c : poly) {
    if (c != 0.0) return false;
  }
  return true;
}

std::string FieldForm::describe() const {
  switch (kind) {
    case FormKind::kZero:
      return "zero";
    case FormKind::kConstant:
      return "constant c=" + shortest(amplitude);
    default:
      break;
  }
  std::string s = kind == FormKind::kMode ? "mode" : "gaussian_mode";
  s += " c=" + shortest(amplitude) + " m=" + std::to_string(mode) + " p=";
  for (std::size_t i = 0; i < poly.size(); ++i) s += (i ? "," : "") + shortest(poly[i]);
  if (kind == FormKind::kGaussianMode) s += " w=" + shortest(width);
  return s;
}

FieldForm parse_field_form(const std::string& text, int variables) {
  std::istringstream in(text);
  std::string name;
  if (!(in >> name)) throw ConfigError("empty field form");
  FieldForm f;
  if (name == "zero") {
    f.kind = FormKind::kZero;
  } else if (name == "constant") {
    f.kind = FormKind::kConstant;
  } else if (name == "mode") {
    f.kind = FormKind::kMode;
  } else if (name == "gaussian_mode") {
    f.kind = FormKind::kGaussianMode;
  } else {
    throw ConfigError("unknown field form '" + name +
                      "' (expected zero, constant, mode or gaussian_mode)");
  }
  std::string token;
  while (in >> token) {
    auto eq = token.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("field form '" + name + "': expected key=value, got '" + token + "'");
    }
    std::string key = token.substr(0, eq), value = token.substr(eq + 1);
    bool allowed = (key == "c" && f.kind != FormKind::kZero) ||
                   ((key == "m" || key == "p") &&
                    (f.kind == FormKind::kMode || f.kind == FormKind::kGaussianMode)) ||
                   (key == "w" && f.kind == FormKind::kGaussianMode);
    if (!allowed) throw ConfigError("field form '" + name + "': unknown parameter '" + key + "'");
    if (key == "c") {
      f.amplitude = parse_number(value, "c");
    } else if (key == "m") {
      double m = parse_number(value, "m");
      if (m < 0 || m != std::floor(m) || m > 64) {
        throw ConfigError("field form '" + name + "': m must be an integer in 0..64");
      }
      f.mode = static_cast<int>(m);
    } else if (key == "w") {
      f.width = parse_number(value, "w");
      if (!(f.width > 0.0)) throw ConfigError("field form '" + name + "': w must be positive");
    } else {
      f.poly.clear();
      std::stringstream ps(value);
      std::string c;
      while (std::getline(ps, c, ',')) f.poly.push_back(parse_number(c, "p"));
      if (f.poly.empty() || f.poly.size() > poly_terms(variables)) {
        throw ConfigError("field form '" + name + "': p takes 1 to " +
                          std::to_string(poly_terms(variables)) + " coefficients");
      }
    }
  }
  return f;
}

// ---------------------------------------------------------------------------

const std::vector<PresetInfo>& preset_catalog() {
  static const std::vector<PresetInfo> catalog = {
      {PresetId::kBeam, "beam", 2, kTwoPi, "r,v_r", {"E"}, "axisymmetric beam, fast rotation (v, -r)"},
      {PresetId::kGC4D, "gc4d", 4, kTwoPi, "x,y,v_x,v_y", {"Ex", "Ey", "Bz"},
       "guiding-centre reduction, beta = e_z, fast gyration of v"},
      {PresetId::kFLR4D, "flr4d", 4, kTwoPi, "x,y,v_x,v_y", {"Ex", "Ey", "Bz"},
       "finite Larmor radius reduction, fast gyration of (x, v)"},
  };
  return catalog;
}

const PresetInfo& preset_info(PresetId id) {
  for (const auto& p : preset_catalog()) {
    if (p.id == id) return p;
  }
  throw ConfigError("unknown preset");
}

PresetId parse_preset(const std::string& name) {
  for (const auto& p : preset_catalog()) {
    if (p.name == name) return p.id;
  }
  throw ConfigError("unknown preset '" + name + "' (expected beam, gc4d or flr4d)");
}

PresetFields default_preset_fields(PresetId preset) {
  PresetFields f;
  if (preset == PresetId::kBeam) {
    f.orders.push_back({parse_field_form("gaussian_mode c=1 m=1 w=2", 1)});
  } else {
    f.orders.push_back({parse_field_form("gaussian_mode c=0.3 m=1 p=0,1 w=2", 2),
                        parse_field_form("gaussian_mode c=0.3 m=1 p=0,0,1 w=2", 2),
                        parse_field_form("constant c=0.2", 2)});
  }
  return f;
}

std::vector<Axis> default_axes(PresetId preset, int points) {
  if (preset == PresetId::kBeam) return {{-6, 6, points}, {-6, 6, points}};
  return std::vector<Axis>(4, Axis{-5, 5, points});
}

LimitModel preset_limit_model(PresetId preset, const PresetFields& fields, int order,
                              int substeps_per_unit) {
  const PresetInfo& info = preset_info(preset);
  if (order < 0 || order > 3) {
    throw ConfigError(info.name + ": order K = " + std::to_string(order) + " not supported (0..3)");
  }
  check_preset_fields(info, fields);

  auto data = std::make_shared<ModelData>();
  data->preset = preset;
  for (const auto& comps : fields.orders) {
    OrderFields of;
    of.comps = comps.empty() ? std::vector<FieldForm>(info.components.size()) : comps;
    data->orders.push_back(of);
  }

  LimitModel model;
  model.preset = preset;
  model.dims = info.dims;
  model.theta = info.theta;
  model.order = order;
  model.expansion.autonomous = true;
  int nfields = std::max<int>(static_cast<int>(data->orders.size()), 1);

  if (preset == PresetId::kBeam) {
    model.fast = [](double, double, const Point& x) {
      Point b(2);
      b << x[1], -x[0];
      return b;
    };
    model.fast_jacobian = [](double, double, const Point&) {
      Matrix j(2, 2);
      j << 0, 1, -1, 0;
      return j;
    };
    model.flow = std::make_shared<AnalyticFlow>(
        2, kTwoPi,
        [](double tau, const Point& x, double, double sigma) -> Point { return rot2(tau - sigma) * x; },
        [](double tau, const Point&, double, double sigma) -> Matrix { return rot2(tau - sigma); },
        nullptr, true);
    for (int j = 0; j < nfields; ++j) {
      if (!data->has(j)) {
        model.expansion.coefficients.push_back(nullptr);
        continue;
      }
      model.expansion.coefficients.push_back([data, j](double, double tau, const Point& x) {
        Point a(2);
        a << 0.0, data->orders[j].beam_E(tau, x[0]);
        return a;
      });
    }
    model.alpha = [data](int j, double, double s, double shift, const Point& x) {
      Point a = Point::Zero(2);
      if (!data->has(j)) return a;
      double e = data->orders[j].beam_E(s + shift, x[0] * std::cos(s) + x[1] * std::sin(s));
      a << -std::sin(s) * e, std::cos(s) * e;
      return a;
    };
  } else if (preset == PresetId::kGC4D) {
    model.fast = [](double, double, const Point& x) {
      Point b(4);
      b << 0.0, 0.0, x[3], -x[2];
      return b;
    };
    model.fast_jacobian = [](double, double, const Point&) {
      Matrix j = Matrix::Zero(4, 4);
      j(2, 3) = 1.0;
      j(3, 2) = -1.0;
      return j;
    };
    model.flow = std::make_shared<AnalyticFlow>(
        4, kTwoPi,
        [](double tau, const Point& x, double, double sigma) -> Point {
          Point y = x;
          y.tail(2) = rot2(tau - sigma) * x.tail(2);
          return y;
        },
        [](double tau, const Point&, double, double sigma) -> Matrix {
          Matrix j = Matrix::Identity(4, 4);
          j.block(2, 2, 2, 2) = rot2(tau - sigma);
          return j;
        },
        nullptr, true);
    for (int j = 0; j < std::max(nfields, 1); ++j) {
      if (j > 0 && !data->has(j)) {
        model.expansion.coefficients.push_back(nullptr);
        continue;
      }
      model.expansion.coefficients.push_back([data, j](double, double tau, const Point& x) {
        Point a = Point::Zero(4);
        if (j == 0) a.head(2) = x.tail(2);
        if (data->has(j)) data->orders[j].lorentz(tau, x[0], x[1], x[2], x[3], a[2], a[3]);
        return a;
      });
    }
    model.alpha = [data](int j, double, double s, double shift, const Point& x) {
      Point a = Point::Zero(4);
      Point w = rot2(s) * x.tail(2);
      if (j == 0) a.head(2) = w;
      if (data->has(j)) {
        Point l(2);
        data->orders[j].lorentz(s + shift, x[0], x[1], w[0], w[1], l[0], l[1]);
        a.tail(2) = rot2(-s) * l;
      }
      return a;
    };
  } else {
    model.fast = [](double, double, const Point& x) {
      Point b(4);
      b << x[2], x[3], x[3], -x[2];
      return b;
    };
    model.fast_jacobian = [](double, double, const Point&) {
      Matrix j = Matrix::Zero(4, 4);
      j(0, 2) = 1.0;
      j(1, 3) = 1.0;
      j(2, 3) = 1.0;
      j(3, 2) = -1.0;
      return j;
    };
    model.flow = std::make_shared<AnalyticFlow>(
        4, kTwoPi,
        [](double tau, const Point& x, double, double sigma) -> Point {
          Point y(4);
          y.head(2) = x.head(2) + flr_r1_2d(tau - sigma) * x.tail(2);
          y.tail(2) = rot2(tau - sigma) * x.tail(2);
          return y;
        },
        [](double tau, const Point&, double, double sigma) -> Matrix {
          Matrix j = Matrix::Identity(4, 4);
          j.block(0, 2, 2, 2) = flr_r1_2d(tau - sigma);
          j.block(2, 2, 2, 2) = rot2(tau - sigma);
          return j;
        },
        nullptr, true);
    for (int j = 0; j < nfields; ++j) {
      if (!data->has(j)) {
        model.expansion.coefficients.push_back(nullptr);
        continue;
      }
      model.expansion.coefficients.push_back([data, j](double, double tau, const Point& x) {
        Point a = Point::Zero(4);
        data->orders[j].lorentz(tau, x[0], x[1], x[2], x[3], a[2], a[3]);
        return a;
      });
    }
    model.alpha = [data](int j, double, double s, double shift, const Point& x) {
      Point a = Point::Zero(4);
      if (!data->has(j)) return a;
      Point p = x.head(2) + flr_r1_2d(s) * x.tail(2);
      Point w = rot2(s) * x.tail(2);
      Point l(2);
      data->orders[j].lorentz(s + shift, p[0], p[1], w[0], w[1], l[0], l[1]);
      a.head(2) = flr_r1_2d(-s) * l;
      a.tail(2) = rot2(-s) * l;
      return a;
    };
  }

  NumericFlowOptions nopt;
  nopt.substeps_per_unit = substeps_per_unit;
  nopt.autonomous = true;
  model.numeric_flow =
      std::make_shared<NumericFlow>(info.dims, kTwoPi, model.fast, model.fast_jacobian, nopt);
  return model;
}

// ---------------------------------------------------------------------------

double beam_J(int which, const BeamProfile& E, double t, double r, double v, int tau_points) {
  if (which != 1 && which != 2) throw InputError("beam_J: which must be 1 or 2");
  if (tau_points < 1) throw InputError("beam_J: tau_points must be positive");
  std::vector<double> s(tau_points);
  for (int l = 0; l < tau_points; ++l) {
    double tau = l * kTwoPi / tau_points;
    double e = E(t, tau, r * std::cos(tau) + v * std::sin(tau));
    s[l] = which == 1 ? -std::sin(tau) * e : std::cos(tau) * e;
  }
  return quad_tau(s, kTwoPi) / kTwoPi;
}

Mat3 cross_matrix_right(const Vec3& b) {
  // v x b = -b x v
  Mat3 m;
  m << 0.0, b[2], -b[1], -b[2], 0.0, b[0], b[1], -b[0], 0.0;
  return m;
}

GCRotation gc_rotation_ez() {
  GCRotation rot;
  rot.theta = kTwoPi;
  rot.R = [](double, double tau, const Vec3&) {
    Mat3 r;
    r << std::cos(tau), std::sin(tau), 0.0, -std::sin(tau), std::cos(tau), 0.0, 0.0, 0.0, 1.0;
    return r;
  };
  rot.dR_dt = [](double, double, const Vec3&) -> Mat3 { return Mat3::Zero(); };
  rot.dR_dx = [](double, double, const Vec3&) {
    return std::array<Mat3, 3>{Mat3::Zero(), Mat3::Zero(), Mat3::Zero()};
  };
  return rot;
}

GCRotation gc_rotation_from_beta_tilde(
    std::function<Vec3(double t, double tau, const Vec3& x)> beta_tilde, double theta, double h) {
  auto R = [beta_tilde](double t, double tau, const Vec3& x) -> Mat3 {
    Vec3 b = beta_tilde(t, tau, x);
    double a = b.norm();
    Mat3 K = cross_matrix_right(b);
    if (a < 1e-14) return Mat3::Identity() + K;
    return Mat3::Identity() + (std::sin(a) / a) * K + ((1.0 - std::cos(a)) / (a * a)) * K * K;
  };
  GCRotation rot;
  rot.theta = theta;
  rot.R = R;
  rot.dR_dt = [R, h](double t, double tau, const Vec3& x) -> Mat3 {
    return (R(t + h, tau, x) - R(t - h, tau, x)) / (2.0 * h);
  };
  rot.dR_dx = [R, h](double t, double tau, const Vec3& x) {
    std::array<Mat3, 3> d;
    for (int k = 0; k < 3; ++k) {
      Vec3 e = Vec3::Zero();
      e[k] = h;
      d[k] = (R(t, tau, x + e) - R(t, tau, x - e)) / (2.0 * h);
    }
    return d;
  };
  return rot;
}

Mat3 gc_J1(const GCRotation& rot, double t, const Vec3& x, int tau_points) {
  Mat3 acc = Mat3::Zero();
  for (int l = 0; l < tau_points; ++l) acc += rot.R(t, l * rot.theta / tau_points, x);
  return acc / tau_points;
}

Vec3 gc_J2(const GCRotation& rot, const Lorentz3& L0, double t, const Vec3& x, const Vec3& v,
           int tau_points) {
  Vec3 acc = Vec3::Zero();
  for (int l = 0; l < tau_points; ++l) {
    double tau = l * rot.theta / tau_points;
    Mat3 R = rot.R(t, tau, x);
    Vec3 Rv = R * v;
    Vec3 term = -rot.dR_dt(t, tau, x) * v;
    auto dx = rot.dR_dx(t, tau, x);
    for (int k = 0; k < 3; ++k) term -= (dx[k] * v) * Rv[k];
    if (L0) term += L0(t, tau, x, Rv);
    acc += R.inverse() * term;
  }
  return acc / tau_points;
}

Vec3 gc_J3(const GCRotation& rot, const Lorentz3& Lj, double t, const Vec3& x, const Vec3& v,
           int tau_points) {
  Vec3 acc = Vec3::Zero();
  if (!Lj) return acc;
  for (int l = 0; l < tau_points; ++l) {
    double tau = l * rot.theta / tau_points;
    Mat3 R = rot.R(t, tau, x);
    acc += R.inverse() * Lj(t, tau, x, R * v);
  }
  return acc / tau_points;
}

Mat3 flr_R1(double tau) {
  tau -= kTwoPi * std::floor(tau / kTwoPi);
  Mat3 r;
  r << std::sin(tau), 1.0 - std::cos(tau), 0.0, std::cos(tau) - 1.0, std::sin(tau), 0.0, 0.0, 0.0,
      0.0;
  return r;
}

Mat3 flr_R2(double tau) {
  tau -= kTwoPi * std::floor(tau / kTwoPi);
  Mat3 r;
  r << std::cos(tau), std::sin(tau), 0.0, -std::sin(tau), std::cos(tau), 0.0, 0.0, 0.0, 1.0;
  return r;
}

Vec3 flr_J(int which, const Lorentz3& L, double t, const Vec3& x, const Vec3& v, int tau_points) {
  if (which != 1 && which != 2) throw InputError("flr_J: which must be 1 or 2");
  Vec3 acc = Vec3::Zero();
  if (!L) return acc;
  for (int l = 0; l < tau_points; ++l) {
    double tau = l * kTwoPi / tau_points;
    Vec3 val = L(t, tau, x + flr_R1(tau) * v, flr_R2(tau) * v);
    acc += (which == 1 ? flr_R1(-tau) : flr_R2(-tau)) * val;
  }
  return acc / tau_points;
}

// ---------------------------------------------------------------------------

namespace {

void cumulate(const std::vector<double>& integrand, const TensorGrid& g, TauRule rule,
              TauFamily& out) {
  int nt = g.tau_points();
  std::size_t n = g.size();
  double h = g.tau_step();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int l = 0; l < nt; ++l) s += integrand[l * n + i];
    out.closure()[i] = s * h;
  }
  if (rule == TauRule::kSpectral) {
    Eigen::MatrixXd S = spectral_cumquad_matrix(nt, g.theta());
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RowMat> in(integrand.data(), nt, static_cast<Eigen::Index>(n));
    Eigen::Map<RowMat> res(out.slice(0), nt, static_cast<Eigen::Index>(n));
    res.noalias() = S * in;
    res.row(0).setZero();
  } else {
    std::vector<double> col(nt);
    for (std::size_t i = 0; i < n; ++i) {
      for (int l = 0; l < nt; ++l) col[l] = integrand[l * n + i];
      auto c = cumquad_tau(col, g.theta());
      for (int l = 0; l < nt; ++l) out.slice(l)[i] = c[l];
    }
  }
}

}  // namespace

FamilyPtr specialized_W(const LimitModel& model, ExpansionEngine& engine, int k, int m) {
  if (k == 0) return engine.compute_W(0, m);
  const ExpansionState& st = engine.state();
  const ExpansionProblem& pb = st.problem();
  const TensorGrid& g = *pb.grid;
  if (g.dims() != model.dims) throw InputError("specialized_W: grid does not match the preset");
  int nt = g.tau_points();
  std::size_t n = g.size();
  int dims = g.dims();
  double t = st.times()[m];
  int r = k - 1;
  int workers = st.options().workers;

  std::vector<VectorField> gv(k);
  std::vector<FamilyPtr> W(k);
  for (int j = 0; j < k; ++j) {
    gv[j] = gradient(st.V(j, m), workers);
    if (j >= 1) W[j] = engine.compute_W(j, m);
  }
  // dW_{k-1}/dt on every tau node and its mean
  std::vector<ScalarField> dw;
  std::vector<double> dw_mean(n, 0.0);
  if (r >= 1) {
    for (int l = 0; l < nt; ++l) {
      dw.push_back(engine.dW_dt_slice(r, m, l));
      for (std::size_t i = 0; i < n; ++i) dw_mean[i] += dw[l][i] / nt;
    }
  }
  // J_j = <alpha_j> per node
  std::vector<std::vector<Point>> J(k, std::vector<Point>(n));
  parallel_for(
      n,
      [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
          Point x = g.node(i);
          for (int j = 0; j < k; ++j) {
            Point acc = Point::Zero(dims);
            for (int l = 0; l < nt; ++l) acc += model.alpha(j, t, g.tau(l), 0.0, x);
            J[j][i] = acc / nt;
          }
        }
      },
      workers);

  std::vector<double> integrand(static_cast<std::size_t>(nt) * n, 0.0);
  for (int l = 0; l < nt; ++l) {
    double sigma = g.tau(l);
    std::vector<VectorField> gw(k);
    for (int j = 1; j < k; ++j) gw[j] = gradient(W[j]->slice_field(l), workers);
    double* row = integrand.data() + static_cast<std::size_t>(l) * n;
    parallel_for(
        n,
        [&](std::size_t b, std::size_t e) {
          for (std::size_t i = b; i < e; ++i) {
            Point x = g.node(i);
            double value = 0.0;
            for (int j = 0; j < k; ++j) {
              int u = k - 1 - j;
              Point d = J[j][i] - model.alpha(j, t, sigma, 0.0, x);
              for (int c = 0; c < dims; ++c) {
                double grad = gv[u].component(c)[i];
                if (u >= 1) grad += gw[u].component(c)[i];
                value += d[c] * grad;
              }
            }
            if (r >= 1) value -= dw[l][i] - dw_mean[i];
            row[i] = value;
          }
        },
        workers);
  }
  auto fam = std::make_shared<TauFamily>(pb.grid);
  cumulate(integrand, g, st.options().tau_rule, *fam);
  return fam;
}

FamilyPtr specialized_R(const LimitModel& model, const ExpansionState& state, int k, int m) {
  const ExpansionProblem& pb = state.problem();
  const TensorGrid& g = *pb.grid;
  if (g.dims() != model.dims) throw InputError("specialized_R: grid does not match the preset");
  if (m < 1 || m + 1 >= static_cast<int>(state.times().size())) {
    throw InputError("specialized_R: needs the neighbouring checkpoints of m");
  }
  int nt = g.tau_points();
  std::size_t n = g.size();
  int dims = g.dims();
  const auto& times = state.times();
  double t = times[m];
  double dt = times[m + 1] - times[m - 1];
  int workers = state.options().workers;

  auto fam = std::make_shared<TauFamily>(pb.grid);
  for (int l = 0; l < nt; ++l) {
    double tau = g.tau(l);
    ScalarField up = reconstruct_U_field(state, k, times[m + 1], tau);
    ScalarField um = reconstruct_U_field(state, k, times[m - 1], tau);
    std::vector<VectorField> gu(k + 1);
    for (int j = 0; j <= k; ++j) gu[j] = gradient(reconstruct_U_field(state, j, t, tau), workers);
    double* out = fam->slice(l);
    parallel_for(
        n,
        [&](std::size_t b, std::size_t e) {
          for (std::size_t i = b; i < e; ++i) {
            Point x = g.node(i);
            double value = (up[i] - um[i]) / dt;
            for (int j = 0; j <= k; ++j) {
              Point a = Point::Zero(dims);
              for (int s = 0; s < nt; ++s) a += model.alpha(j, t, g.tau(s), tau, x);
              a /= nt;
              for (int c = 0; c < dims; ++c) value += a[c] * gu[k - j].component(c)[i];
            }
            out[i] = value;
          }
        },
        workers);
  }
  return fam;
}

}  // namespace twoscale
