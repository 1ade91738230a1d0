#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <type_traits>
#include <vector>

#include "meshflow/mesh.hpp"

namespace meshflow {

/// Voxel counts along x, y, z. Grids always cover the unit cube, so the voxel
/// spacing along an axis is 1/n and voxel (i,j,k) is centered at ((i+.5)/nx, ...).
struct GridDims {
  int nx = 128;
  int ny = 128;
  int nz = 128;

  static GridDims cube(int n) { return {n, n, n}; }
  std::size_t count() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
           static_cast<std::size_t>(nz);
  }
  int operator[](int axis) const { return axis == 0 ? nx : axis == 1 ? ny : nz; }
  Vec3 spacing() const { return {1.0 / nx, 1.0 / ny, 1.0 / nz}; }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(nx) * (static_cast<std::size_t>(j) +
                                           static_cast<std::size_t>(ny) * static_cast<std::size_t>(k));
  }
  Vec3 center(int i, int j, int k) const {
    return {(i + 0.5) / nx, (j + 0.5) / ny, (k + 0.5) / nz};
  }
  /// Throws ParameterError unless every extent is positive.
  void validate() const;
  friend bool operator==(const GridDims&, const GridDims&) = default;
};

template <typename T>
T zero_value() {
  if constexpr (std::is_arithmetic_v<T>) {
    return T(0);
  } else {
    return T::Zero();  // Eigen types are not zeroed by value-initialization
  }
}

template <typename T>
class Field {
 public:
  Field() = default;
  explicit Field(GridDims dims, const T& fill = zero_value<T>()) : dims_(dims), data_(dims.count(), fill) {
    dims.validate();
  }
  Field(GridDims dims, std::vector<T> data);

  const GridDims& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }
  const std::vector<T>& data() const { return data_; }
  std::vector<T>& data() { return data_; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& at(int i, int j, int k) const { return data_[dims_.index(i, j, k)]; }
  T& at(int i, int j, int k) { return data_[dims_.index(i, j, k)]; }

 private:
  GridDims dims_{};
  std::vector<T> data_;
};

/// Unsigned distance map or binary occupancy (0/1) on a voxel grid.
using ScalarField = Field<double>;
/// Stationary velocity field (normalized units per unit time).
using VectorField = Field<Vec3>;

/// The eight voxels contributing to a trilinear sample, their weights, and the
/// weights' spatial derivatives. Positions outside the voxel-center box are
/// clamped; along a clamped axis the derivative is zero.
struct TrilinearStencil {
  std::array<std::size_t, 8> index{};
  std::array<double, 8> weight{};
  std::array<Vec3, 8> grad{};
};

TrilinearStencil trilinear_stencil(const GridDims& dims, const Vec3& x);

double sample_trilinear(const ScalarField& field, const Vec3& x);
Vec3 sample_trilinear(const VectorField& field, const Vec3& x);

/// Exact spatial Jacobian d v_i / d x_j of the trilinear interpolant at x.
Mat3 interpolant_jacobian(const VectorField& field, const Vec3& x);

/// v * alpha / max(|v|, alpha) for one vector. The result never has a computed
/// norm above alpha, which makes clipping exactly idempotent.
Vec3 clip_vector(const Vec3& v, double alpha);

/// Per-voxel flow-norm clipping. Throws ParameterError for alpha <= 0.
VectorField clip_field(const VectorField& field, double alpha);

double max_norm(const VectorField& field);

/// Central-difference divergence of the interpolated field with a one-voxel step
/// along each axis.
double divergence_at(const VectorField& field, const Vec3& x);

/// Central-difference velocity gradient G(i,j) = d v_i / d x_j, same stencil as
/// divergence_at.
Mat3 velocity_gradient_at(const VectorField& field, const Vec3& x);

/// Pull-back resampling: the output voxel at center x holds field(t^-1(x)).
ScalarField resample_transformed(const ScalarField& field, const LinearTransform& t);

/// Sample an analytic function at every voxel center.
template <typename F>
VectorField make_vector_field(const GridDims& dims, F&& f) {
  VectorField out(dims);
  for (int k = 0; k < dims.nz; ++k) {
    for (int j = 0; j < dims.ny; ++j) {
      for (int i = 0; i < dims.nx; ++i) out.at(i, j, k) = f(dims.center(i, j, k));
    }
  }
  return out;
}

template <typename F>
ScalarField make_scalar_field(const GridDims& dims, F&& f) {
  ScalarField out(dims);
  for (int k = 0; k < dims.nz; ++k) {
    for (int j = 0; j < dims.ny; ++j) {
      for (int i = 0; i < dims.nx; ++i) out.at(i, j, k) = f(dims.center(i, j, k));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Voxel-grid binary format
//
//   bytes 0..11   magic "MESHFLOWGRID"
//   bytes 12..15  format version (uint32 LE, currently 1)
//   bytes 16..27  nx, ny, nz (uint32 LE)
//   bytes 28..31  channel count (uint32 LE, 1 or 3)
//   then nx*ny*nz*channels float32 LE values, channel-interleaved, x fastest.

inline constexpr std::uint32_t kGridFormatVersion = 1;

void write_grid(const std::filesystem::path& path, const ScalarField& field);
void write_grid(const std::filesystem::path& path, const VectorField& field);

/// Throw FormatError on bad magic/version, channel mismatch, or a data length
/// that does not match the header dims.
ScalarField read_scalar_grid(const std::filesystem::path& path);
VectorField read_vector_grid(const std::filesystem::path& path);

}  // namespace meshflow
