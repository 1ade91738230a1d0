#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "meshflow/grid.hpp"
#include "meshflow/mesh.hpp"

namespace meshflow {

/// Fixed-step RK4 settings. Total integration time is n_steps * dt.
struct IntegrationConfig {
  int n_steps = 30;
  double dt = 1.0;
  bool accumulate_divergence = true;
  bool accumulate_area_rate = false;

  void validate() const;
};

/// Result of advecting a point set through a stationary field.
struct DeformationTrace {
  std::vector<Vec3> initial_positions;
  std::vector<Vec3> final_positions;
  /// Per-vertex integral of div(v) along the trajectory.
  std::optional<std::vector<double>> div_integral;
  /// Per-vertex integral of the area-rate density div(v) - n^T grad(v) n, where
  /// the normal n is transported with the flow; exp() of it is A(T)/A(0).
  std::optional<std::vector<double>> area_rate_integral;
  /// Largest single-step vertex displacement, one entry per step.
  std::vector<double> step_max_displacement;

  double max_step_displacement() const;
};

/// Classical RK4 step for x' = v(x) with a stationary velocity callable.
template <typename Velocity>
Vec3 rk4_step(Velocity&& v, const Vec3& x, double dt) {
  const Vec3 k1 = v(x);
  const Vec3 k2 = v(Vec3(x + 0.5 * dt * k1));
  const Vec3 k3 = v(Vec3(x + 0.5 * dt * k2));
  const Vec3 k4 = v(Vec3(x + dt * k3));
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// RK4 step through the trilinearly interpolated field. Throws ParameterError for dt <= 0.
Vec3 rk4_step(const VectorField& field, const Vec3& x, double dt);

/// Advect every mesh vertex. The divergence integral uses the RK4 stage points
/// and (1,2,2,1)/6 weights of the position update. Area-rate accumulation
/// starts from the mesh's vertex normals.
DeformationTrace integrate(const TriangleMesh& mesh, const VectorField& field,
                           const IntegrationConfig& cfg);

/// Same as integrate() for a bare point set. `normals` is required (one unit
/// vector per point) only when cfg.accumulate_area_rate is set.
DeformationTrace integrate_points(std::span<const Vec3> points, const VectorField& field,
                                  const IntegrationConfig& cfg,
                                  std::span<const Vec3> normals = {});

/// V0/V1 = exp(-div_integral) per vertex. Throws StateError if the divergence
/// integral was not accumulated.
std::vector<double> volume_ratio(const DeformationTrace& trace);

/// Area change rate per unit area, div(v) - n^T grad(v) n, with grad(v) from
/// the divergence stencil. Throws ParameterError unless |n| = 1 within 1e-9.
double area_rate(const VectorField& field, const Vec3& x, const Vec3& n);

/// Debug export of a trace as JSON (per-vertex arrays).
void write_trace_json(const std::filesystem::path& path, const DeformationTrace& trace);

}  // namespace meshflow
