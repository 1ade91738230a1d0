#include "doctest.h"

#include <cmath>
#include <cstring>
#include <random>

#include "meshflow/error.hpp"
#include "meshflow/fitter.hpp"
#include "meshflow/quality.hpp"
#include "meshflow/shapes.hpp"
#include "test_util.hpp"

using namespace meshflow;

namespace {

const Vec3 kCenter = Vec3::Constant(0.5);

const Vec3 kSemi(0.2, 0.15, 0.12);

TriangleMesh ellipsoid_template() { return make_ellipsoid(3, kCenter, kSemi); }

// The same surface as the template, sampled more densely on other points.
TriangleMesh dense_target(const LinearTransform& t) {
  return apply_linear_transform(testutil::resampled_ellipsoid(4, kCenter, kSemi), t);
}

FitConfig small_config(int dims) {
  FitConfig cfg;
  cfg.field_dims = GridDims::cube(dims);
  return cfg;
}

bool same_bits(const VectorField& a, const VectorField& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(Vec3)) == 0;
}

}  // namespace

TEST_CASE("linear fit examples") {
  const TriangleMesh t = ellipsoid_template();
  const FitConfig cfg = small_config(8);

  SUBCASE("identity target") {
    const LinearFit f = fit_linear(t, t, cfg);
    CHECK(f.converged);
    CHECK(f.transform.is_identity());
    CHECK(f.loss_history.front() == 0.0);
  }
  SUBCASE("translation") {
    LinearTransform truth;
    truth.translation = Vec3(0.05, 0, 0);
    const LinearFit f = fit_linear(t, dense_target(truth), cfg);
    CHECK((f.transform.translation - truth.translation).norm() < 2e-3);
    CHECK((f.transform.scale - Vec3::Ones()).cwiseAbs().maxCoeff() < 0.01);
    CHECK(f.loss_history.back() < f.loss_history.front());
  }
  SUBCASE("isotropic scale") {
    LinearTransform truth;
    truth.scale = Vec3::Constant(1.5);
    const LinearFit f = fit_linear(t, dense_target(truth), cfg);
    CHECK(((f.transform.scale - truth.scale).array() / truth.scale.array()).abs().maxCoeff() < 0.02);
  }
  SUBCASE("descent") {
    LinearTransform truth;
    truth.scale = Vec3(1.1, 0.9, 1.2);
    truth.rotation = Vec3(0.1, -0.05, 0.15);
    truth.translation = Vec3(-0.02, 0.03, 0.01);
    const LinearFit f = fit_linear(t, dense_target(truth), cfg);
    for (std::size_t i = 1; i < f.loss_history.size(); ++i) {
      CHECK(f.loss_history[i] <= f.loss_history[i - 1]);
    }
    CHECK(f.loss_history.size() == static_cast<std::size_t>(f.iterations) + 1);
  }
}

TEST_CASE("flow fit of a linearly reachable target keeps a zero field") {
  const TriangleMesh t = make_icosphere(2, kCenter, 0.2);
  LinearTransform lin;
  lin.scale = Vec3(1.1, 0.95, 1.0);
  lin.translation = Vec3(0.01, 0, -0.02);
  FitConfig cfg = small_config(16);
  cfg.flow.max_iters = 20;
  const FitResult r = fit_flow(t, apply_linear_transform(t, lin), lin, cfg);
  CHECK(max_norm(r.field) < 1e-4);
  CHECK(r.loss_history.back().terms.chamfer < 1e-6);
}

TEST_CASE("flow fit sphere to ellipsoid") {
  const TriangleMesh t = make_icosphere(3, kCenter, 0.25);
  const TriangleMesh target = make_ellipsoid(3, kCenter, Vec3(0.25, 0.25, 0.30));
  FitConfig cfg = small_config(32);

  // The linear stage alone reaches the target.
  const LinearFit lf = fit_linear(t, target, cfg);
  CHECK(lf.loss_history.back() < 1.0 / 128);

  // The flow stage reaches it from the identity.
  const FitResult r = fit_flow(t, target, LinearTransform{}, cfg);
  const TriangleMesh out = t.with_vertices(r.trace.final_positions);
  CHECK(chamfer_per_structure(out, target) < 0.005);
  CHECK(detect_self_intersections(out).sif_faces.empty());
  CHECK(max_norm(r.field) <= cfg.alpha);
  for (std::size_t i = 1; i < r.loss_history.size(); ++i) {
    CHECK(r.loss_history[i].total <= r.loss_history[i - 1].total);
  }
  CHECK(deform(t, LinearTransform{}, r.field, cfg.integration).vertices() == r.trace.final_positions);
}

TEST_CASE("fitted field carries a refined template") {
  const Vec3 c1(0.35, 0.5, 0.5), c2(0.68, 0.5, 0.5);
  const TriangleMesh t = merge_meshes({make_icosphere(2, c1, 0.12, "LV"), make_icosphere(2, c2, 0.1, "Ao")});
  const TriangleMesh target = merge_meshes({testutil::resampled_ellipsoid(4, c1, Vec3(0.12, 0.13, 0.15), "LV"),
                                            testutil::resampled_ellipsoid(4, c2, Vec3(0.11, 0.1, 0.09), "Ao")});
  FitConfig cfg = small_config(32);
  cfg.flow.max_iters = 60;
  const LinearFit lf = fit_linear(t, target, cfg);
  const FitResult r = fit_flow(t, target, lf.transform, cfg);
  const double ch = chamfer_per_structure(t.with_vertices(r.trace.final_positions), target);
  CHECK(ch < lf.loss_history.back());

  const TriangleMesh fine = merge_meshes({subdivide_on_sphere(make_icosphere(2, c1, 0.12, "LV"), c1, 0.12),
                                          subdivide_on_sphere(make_icosphere(2, c2, 0.1, "Ao"), c2, 0.1)});
  const TriangleMesh fine_out = deform(fine, lf.transform, r.field, cfg.integration);
  CHECK(chamfer_per_structure(fine_out, target) <= 1.5 * ch);
}

TEST_CASE("flow fit is deterministic") {
  const TriangleMesh t = make_icosphere(2, kCenter, 0.2);
  const TriangleMesh target = testutil::rotated(make_ellipsoid(3, kCenter, Vec3(0.19, 0.22, 0.2)), 0.37);
  FitConfig cfg = small_config(16);
  cfg.flow.max_iters = 15;
  const FitResult a = fit_flow(t, target, LinearTransform{}, cfg);
  const FitResult b = fit_flow(t, target, LinearTransform{}, cfg);
  CHECK(same_bits(a.field, b.field));
  CHECK(a.trace.final_positions == b.trace.final_positions);
  REQUIRE(a.loss_history.size() == b.loss_history.size());
  for (std::size_t i = 0; i < a.loss_history.size(); ++i) {
    CHECK(a.loss_history[i].total == b.loss_history[i].total);
  }
  CHECK(a.iterations > 0);
}

TEST_CASE("adjoint gradient matches finite differences") {
  const TriangleMesh t = testutil::bipyramid(kCenter, 0.2, 0.15);
  const TriangleMesh target = testutil::rotated(testutil::bipyramid(kCenter + Vec3(0.01, 0, 0), 0.23, 0.17), 0.2);
  const LossWeights one_term[6] = {{1, 0, 0, 0, 0, 0}, {0, 1, 0, 0, 0, 0}, {0, 0, 1, 0, 0, 0},
                                   {0, 0, 0, 1, 0, 0}, {0, 0, 0, 0, 1, 0}, {0, 0, 0, 0, 0, 1}};
  std::mt19937_64 rng(31);
  std::normal_distribution<double> g(0.0, 0.006);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (int trial = 0; trial < 3; ++trial) {
    VectorField f(GridDims::cube(8));
    for (auto& v : f.data()) v = Vec3(g(rng), g(rng), g(rng));
    LinearTransform lin;
    lin.scale = Vec3(1 + u(rng), 1 + u(rng), 1 + u(rng));
    lin.rotation = Vec3(u(rng), u(rng), u(rng));
    lin.translation = Vec3(u(rng), u(rng), u(rng)) * 0.2;
    for (int term = 0; term < 6; ++term) {
      CAPTURE(trial);
      CAPTURE(term);
      FitConfig cfg = small_config(8);
      cfg.weights = one_term[term];
      const AdjointGradient ag = adjoint_gradient(t, target, f, lin, cfg);
      double scale = 0.0;
      std::size_t best = 0;
      for (std::size_t i = 0; i < f.size(); ++i) {
        if (ag.d_field[i].norm() > ag.d_field[best].norm()) best = i;
        scale = std::max(scale, ag.d_field[i].cwiseAbs().maxCoeff());
      }
      const double h = 1e-7;
      double worst = 0.0;
      for (std::size_t i : {best, std::size_t(0), f.size() / 2 + 3}) {
        for (int a = 0; a < 3; ++a) {
          VectorField p = f, m = f;
          p[i][a] += h;
          m[i][a] -= h;
          const double fd =
              (evaluate_fit(t, target, p, lin, cfg).total - evaluate_fit(t, target, m, lin, cfg).total) / (2 * h);
          worst = std::max(worst, std::abs(fd - ag.d_field[i][a]) / scale);
        }
      }
      CHECK(worst < (term == 2 ? 1e-3 : 1e-4));
      CHECK(ag.report.total == evaluate_fit(t, target, f, lin, cfg).total);
    }
  }
}

TEST_CASE("adjoint gradient of the linear parameters") {
  const TriangleMesh t = testutil::bipyramid(kCenter, 0.2, 0.15);
  const TriangleMesh target = testutil::rotated(testutil::bipyramid(kCenter, 0.22, 0.18), 0.3);
  const VectorField f = testutil::random_smooth_field(GridDims::cube(8), 3, 0.02, 1.0, 1.0);
  LinearTransform lin;
  lin.scale = Vec3(1.05, 0.97, 1.02);
  lin.rotation = Vec3(0.03, -0.02, 0.04);
  lin.translation = Vec3(0.004, -0.003, 0.002);
  FitConfig cfg = small_config(8);
  const AdjointGradient ag = adjoint_gradient(t, target, f, lin, cfg);
  double scale = 0.0;
  for (double x : ag.d_linear) scale = std::max(scale, std::abs(x));
  const auto p0 = lin.to_array();
  for (std::size_t k = 0; k < p0.size(); ++k) {
    auto p = p0, m = p0;
    p[k] += 1e-7;
    m[k] -= 1e-7;
    const double fd = (evaluate_fit(t, target, f, LinearTransform::from_array(p), cfg).total -
                       evaluate_fit(t, target, f, LinearTransform::from_array(m), cfg).total) / 2e-7;
    CHECK(std::abs(fd - ag.d_linear[k]) / scale < 1e-4);
  }

  cfg.weights = LossWeights{0, 0, 0, 0, 0, 0};
  const AdjointGradient zero = adjoint_gradient(t, target, f, lin, cfg);
  CHECK(max_norm(zero.d_field) == 0.0);
  for (double x : zero.d_linear) CHECK(x == 0.0);
}

TEST_CASE("deform examples") {
  const TriangleMesh t = make_icosphere(2, kCenter, 0.2);
  const IntegrationConfig cfg;
  CHECK(deform(t, LinearTransform{}, VectorField(GridDims::cube(8)), cfg).vertices() == t.vertices());

  const Vec3 w(0.0, 0.0, 0.02);
  const VectorField rot = make_vector_field(GridDims::cube(32), [&](const Vec3& x) {
    return Vec3(w.cross(x - kCenter));
  });
  const TriangleMesh r = deform(t, LinearTransform{}, rot, cfg);
  double worst = 0.0;
  for (std::size_t i = 0; i < t.num_vertices(); ++i) {
    for (std::size_t j = i + 1; j < t.num_vertices(); ++j) {
      const double before = (t.vertices()[i] - t.vertices()[j]).norm();
      const double after = (r.vertices()[i] - r.vertices()[j]).norm();
      worst = std::max(worst, std::abs(before - after));
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("labels must match") {
  const TriangleMesh t = merge_meshes({make_icosphere(1, Vec3(0.3, 0.5, 0.5), 0.1, "LV"),
                                       make_icosphere(1, Vec3(0.7, 0.5, 0.5), 0.1, "Ao")});
  const TriangleMesh target = make_icosphere(1, Vec3(0.3, 0.5, 0.5), 0.1, "LV");
  try {
    fit_linear(t, target, small_config(8));
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("Ao") != std::string::npos);
  }
}

TEST_CASE("fit config json") {
  FitConfig c;
  c.field_dims = GridDims{16, 24, 32};
  c.flow.max_iters = 7;
  c.weights.volume = 0.0;
  const FitConfig r = fit_config_from_json(fit_config_to_json(c));
  CHECK(r.field_dims.ny == 24);
  CHECK(r.flow.max_iters == 7);
  CHECK(r.weights.volume == 0.0);
  CHECK(r.alpha == 0.0075);
  CHECK(fit_config_to_json(r) == fit_config_to_json(c));

  CHECK(fit_config_from_json(nlohmann::json::object()).field_dims.nx == 128);
  CHECK_THROWS_AS(fit_config_from_json({{"alpah", 0.1}}), ParameterError);
  CHECK_THROWS_AS(fit_config_from_json({{"weights", {{"chamfer", 1.0}}}}), ParameterError);
  CHECK_THROWS_AS(fit_config_from_json({{"alpha", -1.0}}), ParameterError);
  CHECK_THROWS_AS(fit_config_from_json({{"flow", {{"max_iter", 3}}}}), ParameterError);

  LinearTransform lt;
  lt.scale = Vec3(1.2, 0.8, 1.0);
  lt.rotation = Vec3(0.1, 0.2, -0.3);
  CHECK(linear_transform_from_json(linear_transform_to_json(lt)).to_array() == lt.to_array());
}
