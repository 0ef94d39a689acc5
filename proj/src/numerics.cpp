#include "twoscale/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "twoscale/errors.hpp"
#include "twoscale/parallel.hpp"

namespace twoscale {
namespace {

constexpr double kSnapCells = 1e-10;

void lagrange4(double u, std::array<double, 4>& w) {
  double u1 = u - 1.0, u2 = u - 2.0, u3 = u - 3.0;
  w[0] = -u1 * u2 * u3 / 6.0;
  w[1] = u * u2 * u3 / 2.0;
  w[2] = -u * u1 * u3 / 2.0;
  w[3] = u * u1 * u2 / 6.0;
}

// 4th-order first derivative along a strided line of n samples.
void diff_line(const double* f, std::size_t stride, int n, double h, double* out) {
  double inv = 1.0 / (12.0 * h);
  auto at = [&](int i) { return f[static_cast<std::size_t>(i) * stride]; };
  auto put = [&](int i, double v) { out[static_cast<std::size_t>(i) * stride] = v; };
  put(0, (-25.0 * at(0) + 48.0 * at(1) - 36.0 * at(2) + 16.0 * at(3) - 3.0 * at(4)) * inv);
  put(1, (-3.0 * at(0) - 10.0 * at(1) + 18.0 * at(2) - 6.0 * at(3) + at(4)) * inv);
  for (int i = 2; i < n - 2; ++i) {
    put(i, (at(i - 2) - 8.0 * at(i - 1) + 8.0 * at(i + 1) - at(i + 2)) * inv);
  }
  put(n - 2, (3.0 * at(n - 1) + 10.0 * at(n - 2) - 18.0 * at(n - 3) + 6.0 * at(n - 4) -
              at(n - 5)) * inv);
  put(n - 1, (25.0 * at(n - 1) - 48.0 * at(n - 2) + 36.0 * at(n - 3) - 16.0 * at(n - 4) +
              3.0 * at(n - 5)) * inv);
}

void check_tau_samples(std::span<const double> samples, double theta) {
  if (samples.empty()) throw InputError("tau quadrature: no samples");
  if (!(theta > 0.0)) throw InputError("tau quadrature: theta must be positive");
}

}  // namespace

TensorGrid::TensorGrid(std::vector<Axis> axes, int tau_points, double theta)
    : axes_(std::move(axes)), tau_points_(tau_points), theta_(theta) {
  if (axes_.empty() || static_cast<int>(axes_.size()) > kMaxDims) {
    throw InputError("grid: dimension must be between 1 and 4");
  }
  if (tau_points_ < 16) throw InputError("grid: tau_points must be at least 16");
  if (!(theta_ > 0.0) || !std::isfinite(theta_)) throw InputError("grid: theta must be positive");
  size_ = 1;
  cell_volume_ = 1.0;
  for (int d = dims() - 1; d >= 0; --d) {
    const Axis& a = axes_[d];
    if (a.count < 8) throw InputError("grid: axis " + std::to_string(d) + " needs at least 8 points");
    if (!std::isfinite(a.lower) || !std::isfinite(a.upper) || !(a.upper > a.lower)) {
      throw InputError("grid: axis " + std::to_string(d) + " has an empty range");
    }
    spacing_[d] = (a.upper - a.lower) / (a.count - 1);
    stride_[d] = size_;
    size_ *= static_cast<std::size_t>(a.count);
    cell_volume_ *= spacing_[d];
  }
}

Point TensorGrid::node(std::size_t index) const {
  Point p(dims());
  for (int d = 0; d < dims(); ++d) {
    std::size_t i = (index / stride_[d]) % static_cast<std::size_t>(axes_[d].count);
    p[d] = axes_[d].lower + static_cast<double>(i) * spacing_[d];
  }
  return p;
}

std::array<int, kMaxDims> TensorGrid::multi_index(std::size_t index) const {
  std::array<int, kMaxDims> idx{};
  for (int d = 0; d < dims(); ++d) {
    idx[d] = static_cast<int>((index / stride_[d]) % static_cast<std::size_t>(axes_[d].count));
  }
  return idx;
}

std::size_t TensorGrid::linear_index(const std::array<int, kMaxDims>& idx) const {
  std::size_t k = 0;
  for (int d = 0; d < dims(); ++d) k += static_cast<std::size_t>(idx[d]) * stride_[d];
  return k;
}

bool TensorGrid::contains(const Point& x) const {
  for (int d = 0; d < dims(); ++d) {
    double s = (x[d] - axes_[d].lower) / spacing_[d];
    if (s < -kSnapCells || s > axes_[d].count - 1 + kSnapCells) return false;
  }
  return true;
}

bool TensorGrid::same_layout(const TensorGrid& other) const {
  if (dims() != other.dims() || tau_points_ != other.tau_points_ || theta_ != other.theta_) {
    return false;
  }
  for (int d = 0; d < dims(); ++d) {
    if (axes_[d].count != other.axes_[d].count || axes_[d].lower != other.axes_[d].lower ||
        axes_[d].upper != other.axes_[d].upper) {
      return false;
    }
  }
  return true;
}

std::string TensorGrid::describe() const {
  std::ostringstream os;
  for (int d = 0; d < dims(); ++d) {
    if (d) os << " x ";
    os << axes_[d].count << "[" << axes_[d].lower << "," << axes_[d].upper << "]";
  }
  os << ", " << tau_points_ << " tau nodes over " << theta_;
  return os.str();
}

GridPtr make_grid(std::vector<Axis> axes, int tau_points, double theta) {
  return std::make_shared<const TensorGrid>(std::move(axes), tau_points, theta);
}

ScalarField::ScalarField(GridPtr grid) : grid_(std::move(grid)) {
  if (!grid_) throw InputError("field: null grid");
  values_.assign(grid_->size(), 0.0);
}

ScalarField::ScalarField(GridPtr grid, std::vector<double> values)
    : grid_(std::move(grid)), values_(std::move(values)) {
  if (!grid_) throw InputError("field: null grid");
  if (values_.size() != grid_->size()) {
    throw InputError("field: expected " + std::to_string(grid_->size()) + " values, got " +
                     std::to_string(values_.size()));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw InputError("field: non-finite value at node " + std::to_string(i));
    }
  }
}

ScalarField ScalarField::sample(GridPtr grid, const std::function<double(const Point&)>& f,
                                int workers) {
  ScalarField out(grid);
  parallel_for(
      grid->size(),
      [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) out.values_[i] = f(grid->node(i));
      },
      workers);
  out.check_finite("sampled field");
  return out;
}

void ScalarField::check_finite(const std::string& what) const {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw DivergenceError(what + ": non-finite value at node " + std::to_string(i));
    }
  }
}

double ScalarField::max_abs() const {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

VectorField::VectorField(GridPtr grid) : grid_(std::move(grid)) {
  if (!grid_) throw InputError("vector field: null grid");
  components_.assign(grid_->dims(), ScalarField(grid_));
}

VectorField::VectorField(std::vector<ScalarField> components) : components_(std::move(components)) {
  if (components_.empty()) throw InputError("vector field: no components");
  grid_ = components_.front().grid_ptr();
  for (const auto& c : components_) {
    if (c.grid_ptr() != grid_ && !c.grid().same_layout(*grid_)) {
      throw InputError("vector field: components live on different grids");
    }
  }
}

VectorField VectorField::sample(GridPtr grid, const std::function<Point(const Point&)>& f,
                                int workers) {
  VectorField out(grid);
  int n = grid->dims();
  parallel_for(
      grid->size(),
      [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
          Point v = f(grid->node(i));
          for (int d = 0; d < n; ++d) out.components_[d][i] = v[d];
        }
      },
      workers);
  for (const auto& c : out.components_) c.check_finite("sampled vector field");
  return out;
}

Point VectorField::at(std::size_t index) const {
  Point p(dims());
  for (int d = 0; d < dims(); ++d) p[d] = components_[d][index];
  return p;
}

Stencil::Stencil(const TensorGrid& grid, const Point& x) {
  if (x.size() != grid.dims()) throw InputError("interpolate: point dimension mismatch");
  build(grid, x.data());
}

Stencil::Stencil(const TensorGrid& grid, const double* x) { build(grid, x); }

void Stencil::build(const TensorGrid& grid, const double* x) {
  grid_ = &grid;
  int n = grid.dims();
  on_node_ = true;
  inside_ = true;
  node_ = 0;
  base_ = 0;
  std::array<double, kMaxDims> s{};
  for (int d = 0; d < n; ++d) {
    if (!std::isfinite(x[d])) throw InputError("interpolate: non-finite coordinate");
    const Axis& a = grid.axis(d);
    s[d] = (x[d] - a.lower) / grid.spacing(d);
    if (s[d] < -kSnapCells || s[d] > a.count - 1 + kSnapCells) {
      inside_ = false;
      on_node_ = false;
      return;
    }
    double r = std::round(s[d]);
    if (std::abs(s[d] - r) > kSnapCells) on_node_ = false;
  }
  if (on_node_) {
    for (int d = 0; d < n; ++d) {
      int i = std::clamp(static_cast<int>(std::round(s[d])), 0, grid.count(d) - 1);
      node_ += static_cast<std::size_t>(i) * grid.stride(d);
    }
    return;
  }
  for (int d = 0; d < n; ++d) {
    int cnt = grid.count(d);
    int cell = static_cast<int>(std::floor(s[d]));
    int b = std::clamp(cell - 1, 0, cnt - 4);
    lagrange4(s[d] - b, weights_[d]);
    base_ += static_cast<std::size_t>(b) * grid.stride(d);
  }
}

double Stencil::apply(const double* v) const {
  if (!inside_) return 0.0;
  if (on_node_) return v[node_];
  const TensorGrid& g = *grid_;
  switch (g.dims()) {
    case 2: {
      std::size_t s0 = g.stride(0);
      double acc = 0.0;
      for (int i = 0; i < 4; ++i) {
        const double* row = v + base_ + i * s0;
        acc += weights_[0][i] * (weights_[1][0] * row[0] + weights_[1][1] * row[1] +
                                 weights_[1][2] * row[2] + weights_[1][3] * row[3]);
      }
      return acc;
    }
    case 4: {
      std::size_t s0 = g.stride(0), s1 = g.stride(1), s2 = g.stride(2);
      double acc = 0.0;
      for (int i = 0; i < 4; ++i) {
        double a1 = 0.0;
        for (int j = 0; j < 4; ++j) {
          double a2 = 0.0;
          for (int k = 0; k < 4; ++k) {
            const double* row = v + base_ + i * s0 + j * s1 + k * s2;
            a2 += weights_[2][k] * (weights_[3][0] * row[0] + weights_[3][1] * row[1] +
                                    weights_[3][2] * row[2] + weights_[3][3] * row[3]);
          }
          a1 += weights_[1][j] * a2;
        }
        acc += weights_[0][i] * a1;
      }
      return acc;
    }
    default: {
      int n = g.dims();
      int total = 1;
      for (int d = 0; d < n; ++d) total *= 4;
      double acc = 0.0;
      for (int c = 0; c < total; ++c) {
        int rem = c;
        double w = 1.0;
        std::size_t off = base_;
        for (int d = n - 1; d >= 0; --d) {
          int i = rem % 4;
          rem /= 4;
          w *= weights_[d][i];
          off += static_cast<std::size_t>(i) * g.stride(d);
        }
        acc += w * v[off];
      }
      return acc;
    }
  }
}

double Stencil::apply(const std::vector<double>& values) const { return apply(values.data()); }

double interpolate(const ScalarField& field, const Point& x) {
  return Stencil(field.grid(), x).apply(field);
}

Point interpolate(const VectorField& field, const Point& x) {
  Stencil st(field.grid(), x);
  Point out(field.dims());
  for (int d = 0; d < field.dims(); ++d) out[d] = st.apply(field.component(d));
  return out;
}

ScalarField partial(const ScalarField& field, int axis) {
  const TensorGrid& g = field.grid();
  ScalarField out(field.grid_ptr());
  int n = g.count(axis);
  std::size_t stride = g.stride(axis);
  std::size_t block = stride * static_cast<std::size_t>(n);
  const double* in = field.values().data();
  double* res = out.mutable_values().data();
  for (std::size_t outer = 0; outer < g.size(); outer += block) {
    for (std::size_t inner = 0; inner < stride; ++inner) {
      diff_line(in + outer + inner, stride, n, g.spacing(axis), res + outer + inner);
    }
  }
  return out;
}

VectorField gradient(const ScalarField& field, int workers) {
  int n = field.grid().dims();
  std::vector<ScalarField> comps(n);
  if (n > 1 && field.size() > 100000) {
    parallel_for(
        n,
        [&](std::size_t b, std::size_t e) {
          for (std::size_t d = b; d < e; ++d) comps[d] = partial(field, static_cast<int>(d));
        },
        workers);
  } else {
    for (int d = 0; d < n; ++d) comps[d] = partial(field, d);
  }
  return VectorField(std::move(comps));
}

double quad_tau(std::span<const double> samples, double theta) {
  check_tau_samples(samples, theta);
  double s = 0.0;
  for (double v : samples) s += v;
  return s * theta / static_cast<double>(samples.size());
}

double quad_tau(std::span<const double> samples, const TensorGrid& grid) {
  if (static_cast<int>(samples.size()) != grid.tau_points()) {
    throw InputError("quad_tau: expected " + std::to_string(grid.tau_points()) + " samples, got " +
                     std::to_string(samples.size()));
  }
  return quad_tau(samples, grid.theta());
}

std::vector<double> cumquad_tau(std::span<const double> samples, double theta) {
  check_tau_samples(samples, theta);
  double h = theta / static_cast<double>(samples.size());
  std::vector<double> out(samples.size(), 0.0);
  for (std::size_t j = 1; j < samples.size(); ++j) {
    out[j] = out[j - 1] + 0.5 * h * (samples[j - 1] + samples[j]);
  }
  return out;
}

std::vector<double> cumquad_tau(std::span<const double> samples, const TensorGrid& grid) {
  if (static_cast<int>(samples.size()) != grid.tau_points()) {
    throw InputError("cumquad_tau: expected " + std::to_string(grid.tau_points()) +
                     " samples, got " + std::to_string(samples.size()));
  }
  return cumquad_tau(samples, grid.theta());
}

std::vector<double> spectral_cumquad_weights(int n, double theta, double tau) {
  if (n < 2 || !(theta > 0.0)) throw InputError("spectral weights: bad size or period");
  double omega = 2.0 * std::numbers::pi / theta;
  int half = n / 2;
  bool even = n % 2 == 0;
  int top = even ? half - 1 : half;
  std::vector<double> w(n);
  for (int j = 0; j < n; ++j) {
    double tj = j * theta / n;
    double acc = tau;
    for (int m = 1; m <= top; ++m) {
      double k = m * omega;
      acc += 2.0 * (std::sin(k * (tau - tj)) + std::sin(k * tj)) / k;
    }
    if (even) {
      double k = half * omega;
      acc += (std::sin(k * (tau - tj)) + std::sin(k * tj)) / k;
    }
    w[j] = acc / n;
  }
  return w;
}

Eigen::MatrixXd spectral_cumquad_matrix(int n, double theta) {
  Eigen::MatrixXd m(n, n);
  for (int i = 0; i < n; ++i) {
    auto w = spectral_cumquad_weights(n, theta, i * theta / n);
    for (int j = 0; j < n; ++j) m(i, j) = w[j];
  }
  return m;
}

std::vector<double> trig_interpolation_weights(int n, double theta, double tau) {
  if (n < 2 || !(theta > 0.0)) throw InputError("interpolation weights: bad size or period");
  double omega = 2.0 * std::numbers::pi / theta;
  int half = n / 2;
  bool even = n % 2 == 0;
  int top = even ? half - 1 : half;
  std::vector<double> w(n);
  for (int j = 0; j < n; ++j) {
    double s = tau - j * theta / n;
    double acc = 1.0;
    for (int m = 1; m <= top; ++m) acc += 2.0 * std::cos(m * omega * s);
    if (even) acc += std::cos(half * omega * s);
    w[j] = acc / n;
  }
  return w;
}

Norm parse_norm(const std::string& text) {
  if (text == "1" || text == "L1") return Norm::kL1;
  if (text == "2" || text == "L2") return Norm::kL2;
  if (text == "inf" || text == "Linf" || text == "max") return Norm::kLinf;
  throw InputError("unknown norm '" + text + "' (expected 1, 2 or inf)");
}

std::string norm_name(Norm norm) {
  switch (norm) {
    case Norm::kL1: return "1";
    case Norm::kL2: return "2";
    case Norm::kLinf: return "inf";
  }
  return "2";
}

namespace {

template <typename F>
double norm_impl(const TensorGrid& g, std::size_t n, Norm p, F value) {
  switch (p) {
    case Norm::kL1: {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += std::abs(value(i));
      return s * g.cell_volume();
    }
    case Norm::kL2: {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double v = value(i);
        s += v * v;
      }
      return std::sqrt(s * g.cell_volume());
    }
    case Norm::kLinf: {
      double m = 0.0;
      for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::abs(value(i)));
      return m;
    }
  }
  return 0.0;
}

}  // namespace

double norm(const ScalarField& field, Norm p) {
  const auto& v = field.values();
  return norm_impl(field.grid(), v.size(), p, [&](std::size_t i) { return v[i]; });
}

double norm_of_difference(const ScalarField& a, const ScalarField& b, Norm p) {
  if (a.size() != b.size()) throw InputError("norm: fields have different sizes");
  const auto& va = a.values();
  const auto& vb = b.values();
  return norm_impl(a.grid(), va.size(), p, [&](std::size_t i) { return va[i] - vb[i]; });
}

}  // namespace twoscale
