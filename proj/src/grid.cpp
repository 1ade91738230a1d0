#include "meshflow/grid.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "meshflow/error.hpp"

namespace meshflow {

void GridDims::validate() const {
  if (nx <= 0 || ny <= 0 || nz <= 0) {
    std::ostringstream os;
    os << "grid dims must be positive, got " << nx << "x" << ny << "x" << nz;
    throw ParameterError(os.str());
  }
}

template <typename T>
Field<T>::Field(GridDims dims, std::vector<T> data) : dims_(dims), data_(std::move(data)) {
  dims.validate();
  if (data_.size() != dims.count()) {
    throw ValidationError("field data length " + std::to_string(data_.size()) +
                          " does not match dims (" + std::to_string(dims.count()) + ")");
  }
}

template class Field<double>;
template class Field<Vec3>;

namespace {

struct AxisWeights {
  int i0, i1;
  double w0, w1;
  double dw0, dw1;  // d weight / d x (normalized coordinate)
};

AxisWeights axis_weights(int n, double x) {
  if (n == 1) return {0, 0, 1.0, 0.0, 0.0, 0.0};
  const double u = x * n - 0.5;
  const double hi = static_cast<double>(n - 1);
  if (!(u > 0.0)) return {0, 1, 1.0, 0.0, 0.0, 0.0};
  if (!(u < hi)) return {n - 2, n - 1, 0.0, 1.0, 0.0, 0.0};
  int i0 = static_cast<int>(std::floor(u));
  i0 = std::min(i0, n - 2);
  const double f = u - i0;
  return {i0, i0 + 1, 1.0 - f, f, -static_cast<double>(n), static_cast<double>(n)};
}

}  // namespace

TrilinearStencil trilinear_stencil(const GridDims& dims, const Vec3& x) {
  const AxisWeights ax = axis_weights(dims.nx, x.x());
  const AxisWeights ay = axis_weights(dims.ny, x.y());
  const AxisWeights az = axis_weights(dims.nz, x.z());
  TrilinearStencil s;
  int c = 0;
  for (int dz = 0; dz < 2; ++dz) {
    const int k = dz ? az.i1 : az.i0;
    const double wz = dz ? az.w1 : az.w0, gz = dz ? az.dw1 : az.dw0;
    for (int dy = 0; dy < 2; ++dy) {
      const int j = dy ? ay.i1 : ay.i0;
      const double wy = dy ? ay.w1 : ay.w0, gy = dy ? ay.dw1 : ay.dw0;
      for (int dx = 0; dx < 2; ++dx, ++c) {
        const int i = dx ? ax.i1 : ax.i0;
        const double wx = dx ? ax.w1 : ax.w0, gx = dx ? ax.dw1 : ax.dw0;
        s.index[c] = dims.index(i, j, k);
        s.weight[c] = wx * wy * wz;
        s.grad[c] = Vec3(gx * wy * wz, wx * gy * wz, wx * wy * gz);
      }
    }
  }
  return s;
}

double sample_trilinear(const ScalarField& field, const Vec3& x) {
  const TrilinearStencil s = trilinear_stencil(field.dims(), x);
  double v = 0.0;
  for (int c = 0; c < 8; ++c) v += s.weight[c] * field[s.index[c]];
  return v;
}

Vec3 sample_trilinear(const VectorField& field, const Vec3& x) {
  const TrilinearStencil s = trilinear_stencil(field.dims(), x);
  Vec3 v = Vec3::Zero();
  for (int c = 0; c < 8; ++c) v += s.weight[c] * field[s.index[c]];
  return v;
}

Mat3 interpolant_jacobian(const VectorField& field, const Vec3& x) {
  const TrilinearStencil s = trilinear_stencil(field.dims(), x);
  Mat3 j = Mat3::Zero();
  for (int c = 0; c < 8; ++c) j += field[s.index[c]] * s.grad[c].transpose();
  return j;
}

Vec3 clip_vector(const Vec3& v, double alpha) {
  const double len = v.norm();
  if (len <= alpha) return v;
  Vec3 out = v * (alpha / len);
  // Rounding can leave |out| one ulp above alpha; shrink until it is not.
  while (out.norm() > alpha) out *= (1.0 - 0x1p-52);
  return out;
}

VectorField clip_field(const VectorField& field, double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw ParameterError("clip threshold alpha must be positive and finite");
  }
  VectorField out(field.dims());
  for (std::size_t i = 0; i < field.size(); ++i) out[i] = clip_vector(field[i], alpha);
  return out;
}

double max_norm(const VectorField& field) {
  double m = 0.0;
  for (const auto& v : field.data()) m = std::max(m, v.norm());
  return m;
}

Mat3 velocity_gradient_at(const VectorField& field, const Vec3& x) {
  const Vec3 h = field.dims().spacing();
  Mat3 g;
  for (int j = 0; j < 3; ++j) {
    Vec3 xp = x, xm = x;
    xp[j] += h[j];
    xm[j] -= h[j];
    g.col(j) = (sample_trilinear(field, xp) - sample_trilinear(field, xm)) / (2.0 * h[j]);
  }
  return g;
}

double divergence_at(const VectorField& field, const Vec3& x) {
  const Vec3 h = field.dims().spacing();
  double d = 0.0;
  for (int i = 0; i < 3; ++i) {
    Vec3 xp = x, xm = x;
    xp[i] += h[i];
    xm[i] -= h[i];
    d += (sample_trilinear(field, xp)[i] - sample_trilinear(field, xm)[i]) / (2.0 * h[i]);
  }
  return d;
}

ScalarField resample_transformed(const ScalarField& field, const LinearTransform& t) {
  t.validate();
  const GridDims& d = field.dims();
  ScalarField out(d);
  for (int k = 0; k < d.nz; ++k) {
    for (int j = 0; j < d.ny; ++j) {
      for (int i = 0; i < d.nx; ++i) {
        out.at(i, j, k) = sample_trilinear(field, t.apply_inverse(d.center(i, j, k)));
      }
    }
  }
  return out;
}

}  // namespace meshflow
