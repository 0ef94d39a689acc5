#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace twoscale {

inline constexpr int kMaxDims = 4;

using Point = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDims, 1>;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDims, kMaxDims>;

struct Axis {
  double lower = 0.0;
  double upper = 1.0;
  int count = 8;
};

// Uniform tensor-product grid over a box in 2 or 4 dimensions, together with
// the uniform periodic fast-time grid tau_j = j * theta / tau_points.
// Nodes are stored row-major: the last axis varies fastest.
class TensorGrid {
 public:
  TensorGrid(std::vector<Axis> axes, int tau_points, double theta);

  int dims() const { return static_cast<int>(axes_.size()); }
  const Axis& axis(int d) const { return axes_[d]; }
  const std::vector<Axis>& axes() const { return axes_; }
  double spacing(int d) const { return spacing_[d]; }
  int count(int d) const { return axes_[d].count; }
  std::size_t stride(int d) const { return stride_[d]; }
  std::size_t size() const { return size_; }
  double cell_volume() const { return cell_volume_; }

  int tau_points() const { return tau_points_; }
  double theta() const { return theta_; }
  double tau_step() const { return theta_ / tau_points_; }
  double tau(int j) const { return j * theta_ / tau_points_; }

  Point node(std::size_t index) const;
  std::array<int, kMaxDims> multi_index(std::size_t index) const;
  std::size_t linear_index(const std::array<int, kMaxDims>& idx) const;
  bool contains(const Point& x) const;

  bool same_layout(const TensorGrid& other) const;
  std::string describe() const;

 private:
  std::vector<Axis> axes_;
  std::array<double, kMaxDims> spacing_{};
  std::array<std::size_t, kMaxDims> stride_{};
  std::size_t size_ = 0;
  double cell_volume_ = 0.0;
  int tau_points_ = 0;
  double theta_ = 0.0;
};

using GridPtr = std::shared_ptr<const TensorGrid>;

GridPtr make_grid(std::vector<Axis> axes, int tau_points, double theta);

class ScalarField {
 public:
  ScalarField() = default;
  explicit ScalarField(GridPtr grid);
  // Throws InputError on size mismatch or non-finite entries.
  ScalarField(GridPtr grid, std::vector<double> values);

  static ScalarField sample(GridPtr grid, const std::function<double(const Point&)>& f,
                            int workers = 0);

  const TensorGrid& grid() const { return *grid_; }
  const GridPtr& grid_ptr() const { return grid_; }
  bool empty() const { return grid_ == nullptr; }
  std::size_t size() const { return values_.size(); }

  const std::vector<double>& values() const { return values_; }
  std::vector<double>& mutable_values() { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  // Throws DivergenceError naming `what` if any entry is not finite.
  void check_finite(const std::string& what) const;
  double max_abs() const;

 private:
  GridPtr grid_;
  std::vector<double> values_;
};

class VectorField {
 public:
  VectorField() = default;
  explicit VectorField(GridPtr grid);
  explicit VectorField(std::vector<ScalarField> components);

  static VectorField sample(GridPtr grid, const std::function<Point(const Point&)>& f,
                            int workers = 0);

  const TensorGrid& grid() const { return *grid_; }
  const GridPtr& grid_ptr() const { return grid_; }
  bool empty() const { return grid_ == nullptr; }
  int dims() const { return static_cast<int>(components_.size()); }
  const ScalarField& component(int d) const { return components_[d]; }
  ScalarField& component(int d) { return components_[d]; }
  Point at(std::size_t index) const;

 private:
  GridPtr grid_;
  std::vector<ScalarField> components_;
};

// Tensor cubic Lagrange stencil at a point. Points within 1e-10 cells of a
// node collapse onto that node so that compositions such as X(-s; X(s; x))
// read nodal values directly.
class Stencil {
 public:
  Stencil(const TensorGrid& grid, const Point& x);
  Stencil(const TensorGrid& grid, const double* x);

  bool inside() const { return inside_; }
  bool on_node() const { return on_node_; }
  std::size_t node() const { return node_; }

  double apply(const std::vector<double>& values) const;
  double apply(const double* values) const;
  double apply(const ScalarField& field) const { return apply(field.values()); }

 private:
  void build(const TensorGrid& grid, const double* x);

  const TensorGrid* grid_ = nullptr;
  bool inside_ = false;
  bool on_node_ = false;
  std::size_t node_ = 0;
  std::size_t base_ = 0;
  std::array<std::array<double, 4>, kMaxDims> weights_{};
};

// Cubic interpolation; 0 outside the grid box. Non-finite x -> InputError.
double interpolate(const ScalarField& field, const Point& x);
Point interpolate(const VectorField& field, const Point& x);

// 4th-order finite differences; one-sided 4th-order stencils near the edges.
VectorField gradient(const ScalarField& field, int workers = 0);
// Derivative along one axis only.
ScalarField partial(const ScalarField& field, int axis);

// Plain periodic integral over [0, theta) from samples at the tau nodes.
double quad_tau(std::span<const double> samples, double theta);
double quad_tau(std::span<const double> samples, const TensorGrid& grid);
// Cumulative trapezoid values at each tau node; entry 0 is 0.
std::vector<double> cumquad_tau(std::span<const double> samples, double theta);
std::vector<double> cumquad_tau(std::span<const double> samples, const TensorGrid& grid);

// Trigonometric-interpolant antiderivative. Row i of the returned matrix maps
// samples f_j to the integral of the interpolant over [0, tau_i]. Its closing
// value over a full period equals quad_tau.
Eigen::MatrixXd spectral_cumquad_matrix(int n, double theta);
// Weights w_j with integral over [0, tau] of the interpolant = sum_j w_j f_j.
std::vector<double> spectral_cumquad_weights(int n, double theta, double tau);
// Weights of the periodic trigonometric interpolant evaluated at tau.
std::vector<double> trig_interpolation_weights(int n, double theta, double tau);

enum class Norm { kL1, kL2, kLinf };

Norm parse_norm(const std::string& text);
std::string norm_name(Norm norm);

// Grid-weighted discrete norm (cell volume scaling for p < inf).
double norm(const ScalarField& field, Norm p = Norm::kL2);
double norm_of_difference(const ScalarField& a, const ScalarField& b, Norm p = Norm::kL2);

}  // namespace twoscale
