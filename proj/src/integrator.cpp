#include "meshflow/integrator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

#include "meshflow/error.hpp"

namespace meshflow {

void IntegrationConfig::validate() const {
  if (n_steps < 1) throw ParameterError("n_steps must be >= 1");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ParameterError("dt must be positive and finite");
}

double DeformationTrace::max_step_displacement() const {
  double m = 0.0;
  for (double d : step_max_displacement) m = std::max(m, d);
  return m;
}

Vec3 rk4_step(const VectorField& field, const Vec3& x, double dt) {
  if (!(dt > 0.0)) throw ParameterError("dt must be positive");
  return rk4_step([&field](const Vec3& p) { return sample_trilinear(field, p); }, x, dt);
}

namespace {

struct NormalRate {
  Vec3 dn;      // transport of the unit normal
  double rate;  // div(v) - n^T G n
};

NormalRate normal_rate(const VectorField& field, const Vec3& x, const Vec3& n) {
  const Mat3 g = velocity_gradient_at(field, x);
  const double ngn = n.dot(g * n);
  return {-g.transpose() * n + ngn * n, g.trace() - ngn};
}

void check_field(const VectorField& field) {
  for (std::size_t i = 0; i < field.size(); ++i) {
    if (!field[i].allFinite()) {
      throw NumericalError("velocity field voxel " + std::to_string(i) + " is not finite");
    }
  }
}

}  // namespace

DeformationTrace integrate_points(std::span<const Vec3> points, const VectorField& field,
                                  const IntegrationConfig& cfg, std::span<const Vec3> normals) {
  cfg.validate();
  check_field(field);
  if (cfg.accumulate_area_rate && normals.size() != points.size()) {
    throw ParameterError("area-rate accumulation needs one normal per point");
  }
  const std::size_t nv = points.size();
  const double dt = cfg.dt;
  const double w[4] = {dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0};

  DeformationTrace trace;
  trace.initial_positions.assign(points.begin(), points.end());
  std::vector<Vec3> x(points.begin(), points.end());
  std::vector<Vec3> n;
  if (cfg.accumulate_area_rate) n.assign(normals.begin(), normals.end());
  std::vector<double> div(nv, 0.0), area(nv, 0.0);
  trace.step_max_displacement.assign(cfg.n_steps, 0.0);

  auto velocity = [&field](const Vec3& p) { return sample_trilinear(field, p); };

  for (int step = 0; step < cfg.n_steps; ++step) {
    double step_max = 0.0;
    long bad = -1;
#pragma omp parallel for reduction(max : step_max)
    for (long vi = 0; vi < static_cast<long>(nv); ++vi) {
      const Vec3 p1 = x[vi];
      const Vec3 k1 = velocity(p1);
      const Vec3 p2 = p1 + 0.5 * dt * k1;
      const Vec3 k2 = velocity(p2);
      const Vec3 p3 = p1 + 0.5 * dt * k2;
      const Vec3 k3 = velocity(p3);
      const Vec3 p4 = p1 + dt * k3;
      const Vec3 k4 = velocity(p4);
      const Vec3 next = p1 + w[0] * k1 + w[1] * k2 + w[2] * k3 + w[3] * k4;

      if (cfg.accumulate_divergence) {
        div[vi] += w[0] * divergence_at(field, p1) + w[1] * divergence_at(field, p2) +
                   w[2] * divergence_at(field, p3) + w[3] * divergence_at(field, p4);
      }
      if (cfg.accumulate_area_rate) {
        // RK4 on the transported normal, stage positions shared with x.
        const Vec3 n1 = n[vi];
        const NormalRate r1 = normal_rate(field, p1, n1);
        const Vec3 n2 = n1 + 0.5 * dt * r1.dn;
        const NormalRate r2 = normal_rate(field, p2, n2);
        const Vec3 n3 = n1 + 0.5 * dt * r2.dn;
        const NormalRate r3 = normal_rate(field, p3, n3);
        const Vec3 n4 = n1 + dt * r3.dn;
        const NormalRate r4 = normal_rate(field, p4, n4);
        area[vi] += w[0] * r1.rate + w[1] * r2.rate + w[2] * r3.rate + w[3] * r4.rate;
        const Vec3 nn = n1 + w[0] * r1.dn + w[1] * r2.dn + w[2] * r3.dn + w[3] * r4.dn;
        n[vi] = nn.normalized();
      }
      if (!next.allFinite()) {
#pragma omp critical
        if (bad < 0 || vi < bad) bad = vi;
      }
      step_max = std::max(step_max, (next - p1).norm());
      x[vi] = next;
    }
    if (bad >= 0) {
      throw NumericalError("non-finite position for vertex " + std::to_string(bad) +
                           " at step " + std::to_string(step));
    }
    trace.step_max_displacement[step] = step_max;
  }

  trace.final_positions = std::move(x);
  if (cfg.accumulate_divergence) trace.div_integral = std::move(div);
  if (cfg.accumulate_area_rate) trace.area_rate_integral = std::move(area);
  return trace;
}

DeformationTrace integrate(const TriangleMesh& mesh, const VectorField& field,
                           const IntegrationConfig& cfg) {
  std::vector<Vec3> normals;
  if (cfg.accumulate_area_rate) normals = vertex_normals(mesh);
  return integrate_points(mesh.vertices(), field, cfg, normals);
}

std::vector<double> volume_ratio(const DeformationTrace& trace) {
  if (!trace.div_integral) throw StateError("trace has no divergence integral");
  std::vector<double> out(trace.div_integral->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(-(*trace.div_integral)[i]);
  return out;
}

double area_rate(const VectorField& field, const Vec3& x, const Vec3& n) {
  if (!(std::abs(n.norm() - 1.0) <= 1e-9)) throw ParameterError("area_rate needs a unit normal");
  const Mat3 g = velocity_gradient_at(field, x);
  return g.trace() - n.dot(g * n);
}

void write_trace_json(const std::filesystem::path& path, const DeformationTrace& trace) {
  using nlohmann::json;
  auto pts = [](const std::vector<Vec3>& v) {
    json a = json::array();
    for (const auto& p : v) a.push_back({p.x(), p.y(), p.z()});
    return a;
  };
  json j;
  j["schema_version"] = 1;
  j["initial_positions"] = pts(trace.initial_positions);
  j["final_positions"] = pts(trace.final_positions);
  j["div_integral"] = trace.div_integral ? json(*trace.div_integral) : json(nullptr);
  j["area_rate_integral"] =
      trace.area_rate_integral ? json(*trace.area_rate_integral) : json(nullptr);
  j["step_max_displacement"] = trace.step_max_displacement;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump() << '\n';
}

}  // namespace meshflow
