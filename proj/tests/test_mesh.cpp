#include "doctest.h"

#include <cmath>
#include <random>
#include <set>

#include "meshflow/error.hpp"
#include "meshflow/mesh.hpp"
#include "meshflow/shapes.hpp"

using namespace meshflow;

namespace {

TriangleMesh tetrahedron() {
  // Regular tetrahedron with unit edges, outward winding.
  const double s = 1.0 / std::sqrt(2.0);
  std::vector<Vec3> v{{1, 0, -s}, {-1, 0, -s}, {0, 1, s}, {0, -1, s}};
  for (auto& p : v) p *= 0.5;
  std::vector<Face> f{{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}};
  return TriangleMesh(v, f);
}

}  // namespace

TEST_CASE("icosphere counts and topology") {
  for (int level = 0; level <= 3; ++level) {
    const TriangleMesh m = make_icosphere(level);
    const std::size_t faces = 20u << (2 * level);
    CHECK(m.num_faces() == faces);
    CHECK(m.num_vertices() == faces / 2 + 2);
    CHECK(euler_characteristic(m) == 2);
    CHECK(m.edges().size() == faces * 3 / 2);
  }
  const TriangleMesh m = make_icosphere(2);
  CHECK(m.num_vertices() == 162);
  CHECK(m.num_faces() == 320);
}

TEST_CASE("icosphere volume and area approach the sphere from below") {
  const double r = 0.25;
  const double vol = 4.0 / 3.0 * M_PI * r * r * r;
  const double area = 4.0 * M_PI * r * r;
  double prev_v = 0.0;
  for (int level = 1; level <= 4; ++level) {
    const TriangleMesh m = make_icosphere(level, Vec3::Constant(0.5), r);
    const double v = signed_volume(m);
    CHECK(v < vol);
    CHECK(v > prev_v);
    prev_v = v;
    CHECK(surface_area(m) < area);
  }
  CHECK(prev_v == doctest::Approx(vol).epsilon(0.01));
  CHECK(signed_volume(flip_winding(make_icosphere(2))) < 0.0);
}

TEST_CASE("construction rejects invalid faces") {
  const std::vector<Vec3> v{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  CHECK_NOTHROW(TriangleMesh(v, {{0, 1, 2}}));
  CHECK_THROWS_AS(TriangleMesh(v, {{0, 1, 9}}), ValidationError);
  CHECK_THROWS_AS(TriangleMesh(v, {{0, 1, 1}}), ValidationError);
  // Two faces traversing the shared edge in the same direction.
  const std::vector<Vec3> w{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}};
  CHECK_THROWS_AS(TriangleMesh(w, {{0, 1, 2}, {0, 1, 3}}), ValidationError);
  CHECK_NOTHROW(TriangleMesh(w, {{0, 1, 2}, {1, 0, 3}}));
  CHECK_THROWS_AS(TriangleMesh(v, {{0, 1, 2}}, {3}, {"LV"}), ValidationError);
}

TEST_CASE("with_vertices shares topology") {
  const TriangleMesh m = make_icosphere(1);
  std::vector<Vec3> x = m.vertices();
  for (auto& p : x) p *= 2.0;
  const TriangleMesh n = m.with_vertices(x);
  CHECK(&n.topology() == &m.topology());
  CHECK(n.vertices()[3] == 2.0 * m.vertices()[3]);
}

TEST_CASE("vertex normals") {
  SUBCASE("cube corner") {
    const std::vector<Vec3> v{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    // Corner at the origin, faces on the three coordinate planes facing -x,-y,-z.
    const TriangleMesh m(v, {{0, 2, 1}, {0, 1, 3}, {0, 3, 2}});
    const Vec3 n = vertex_normals(m)[0];
    CHECK((n - Vec3(-1, -1, -1).normalized()).norm() < 1e-12);
  }
  SUBCASE("flat fan") {
    std::vector<Vec3> v{{0, 0, 0}};
    std::vector<Face> f;
    for (int i = 0; i < 6; ++i) {
      const double a = i * M_PI / 3.0 + 0.1 * i * i;
      v.emplace_back(std::cos(a), std::sin(a), 0.0);
    }
    for (std::uint32_t i = 0; i < 6; ++i) f.push_back({0, 1 + i, 1 + (i + 1) % 6});
    const TriangleMesh m(v, f);
    CHECK((vertex_normals(m)[0] - Vec3(0, 0, 1)).norm() < 1e-12);
  }
  SUBCASE("sphere") {
    const Vec3 c(0.5, 0.5, 0.5);
    const TriangleMesh m = make_icosphere(3, c, 0.3);
    const auto n = vertex_normals(m);
    double worst = 0.0;
    for (std::size_t i = 0; i < n.size(); ++i) {
      CHECK(std::abs(n[i].norm() - 1.0) < 1e-12);
      const Vec3 exact = (m.vertices()[i] - c).normalized();
      worst = std::max(worst, std::acos(std::min(1.0, n[i].dot(exact))));
    }
    CHECK(worst < 5.0 * M_PI / 180.0);
  }
  SUBCASE("degenerate") {
    const std::vector<Vec3> v{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
    CHECK_THROWS_AS(vertex_normals(TriangleMesh(v, {{0, 1, 2}})), DegenerateNormalError);
  }
}

TEST_CASE("uniform laplacian") {
  const TriangleMesh t = tetrahedron();
  const auto lap = uniform_laplacian(t);
  for (std::uint32_t v = 0; v < 4; ++v) {
    Vec3 opposite = Vec3::Zero();
    for (std::uint32_t u = 0; u < 4; ++u) {
      if (u != v) opposite += t.vertices()[u] / 3.0;
    }
    CHECK((lap[v] - (opposite - t.vertices()[v])).norm() < 1e-15);
  }

  const TriangleMesh s = make_icosphere(2);
  std::mt19937 rng(3);
  std::normal_distribution<double> noise(0.0, 0.01);
  std::vector<Vec3> x = s.vertices();
  for (auto& p : x) p += Vec3(noise(rng), noise(rng), noise(rng));
  auto mean_norm = [](const std::vector<Vec3>& l) {
    double sum = 0.0;
    for (const auto& p : l) sum += p.norm();
    return sum / l.size();
  };
  CHECK(mean_norm(uniform_laplacian(s.with_vertices(x))) > mean_norm(uniform_laplacian(s)));

  const std::vector<Vec3> iso{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {5, 5, 5}};
  CHECK_THROWS_AS(uniform_laplacian(TriangleMesh(iso, {{0, 1, 2}})), ConnectivityError);
}

TEST_CASE("linear transform examples") {
  const std::vector<Vec3> v{{0.75, 0.5, 0.5}, {0.6, 0.5, 0.5}, {0.5, 0.6, 0.7}};
  const TriangleMesh m(v, {{0, 1, 2}});

  LinearTransform id;
  CHECK(apply_linear_transform(m, id).vertices() == m.vertices());

  LinearTransform s;
  s.scale = Vec3::Constant(2.0);
  CHECK(apply_linear_transform(m, s).vertices()[0] == Vec3(1.0, 0.5, 0.5));

  LinearTransform r;
  r.rotation = Vec3(0, 0, M_PI / 2);
  CHECK((r.apply(Vec3(0.6, 0.5, 0.5)) - Vec3(0.5, 0.6, 0.5)).norm() < 1e-15);

  LinearTransform bad;
  bad.scale = Vec3(1, 0, 1);
  CHECK_THROWS_AS(apply_linear_transform(m, bad), ParameterError);
}

TEST_CASE("linear transform round trip and rotation derivative") {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> sc(0.5, 2.0), ang(-M_PI, M_PI), tr(-0.2, 0.2), pos(0, 1);
  const TriangleMesh m = make_icosphere(1);
  for (int trial = 0; trial < 100; ++trial) {
    LinearTransform t;
    t.scale = Vec3(sc(rng), sc(rng), sc(rng));
    t.rotation = Vec3(ang(rng), ang(rng), ang(rng));
    t.translation = Vec3(tr(rng), tr(rng), tr(rng));
    const TriangleMesh back = apply_inverse_linear_transform(apply_linear_transform(m, t), t);
    for (std::size_t i = 0; i < m.num_vertices(); ++i) {
      CHECK((back.vertices()[i] - m.vertices()[i]).norm() < 1e-10);
    }
    CHECK(signed_volume(apply_linear_transform(m, t)) > 0.0);
    const Mat3 rm = t.rotation_matrix();
    CHECK((rm.transpose() * rm - Mat3::Identity()).norm() < 1e-12);
    for (int a = 0; a < 3; ++a) {
      LinearTransform p = t, q = t;
      const double h = 1e-6;
      p.rotation[a] += h;
      q.rotation[a] -= h;
      const Mat3 fd = (p.rotation_matrix() - q.rotation_matrix()) / (2 * h);
      CHECK((fd - t.rotation_derivative(a)).norm() < 1e-8);
    }
  }
  LinearTransform t;
  t.scale = Vec3(1.3, 0.7, 1.1);
  t.rotation = Vec3(0.1, -0.2, 0.3);
  t.translation = Vec3(0.01, 0.02, -0.03);
  CHECK(LinearTransform::from_array(t.to_array()).to_array() == t.to_array());
}

TEST_CASE("structures") {
  const TriangleMesh a = make_icosphere(1, Vec3(0.3, 0.5, 0.5), 0.1, "LV");
  const TriangleMesh b = make_icosphere(0, Vec3(0.7, 0.5, 0.5), 0.1, "Ao");
  const TriangleMesh c = make_icosphere(0, Vec3(0.7, 0.2, 0.5), 0.05, "LV");
  const TriangleMesh m = merge_meshes({a, b, c});
  CHECK(m.structure_names().size() == 2);
  CHECK(m.num_faces() == a.num_faces() + b.num_faces() + c.num_faces());
  const auto lv = m.find_structure("LV");
  REQUIRE(lv);
  CHECK(m.structure_vertices(*lv).size() == a.num_vertices() + c.num_vertices());
  const TriangleMesh ao = m.extract_structure(*m.find_structure("Ao"));
  CHECK(ao.num_faces() == 20);
  CHECK(ao.num_vertices() == 12);
  CHECK(ao.structure_names() == std::vector<std::string>{"Ao"});
  CHECK(std::abs(signed_volume(ao) - signed_volume(b)) < 1e-15);
  CHECK_FALSE(m.find_structure("RA"));
  CHECK(relabel(m, "Epi").structure_names() == std::vector<std::string>{"Epi"});
}

TEST_CASE("midpoint subdivision keeps coarse vertices") {
  const TriangleMesh m = make_icosphere(1);
  const TriangleMesh s = subdivide_midpoint(m);
  CHECK(s.num_faces() == 4 * m.num_faces());
  for (std::size_t i = 0; i < m.num_vertices(); ++i) CHECK(s.vertices()[i] == m.vertices()[i]);
  CHECK(std::abs(signed_volume(s) - signed_volume(m)) < 1e-15);
  const TriangleMesh p = subdivide_on_sphere(m, Vec3::Constant(0.5), 0.25);
  for (const auto& v : p.vertices()) CHECK(std::abs((v - Vec3::Constant(0.5)).norm() - 0.25) < 1e-15);
}

TEST_CASE("shell fixture winding") {
  const TriangleMesh s = make_spherical_shell(2, 2, Vec3::Constant(0.5), 0.24, 0.25);
  CHECK(euler_characteristic(s) == 4);
  const double expected = signed_volume(make_icosphere(2, Vec3::Constant(0.5), 0.25)) -
                          signed_volume(make_icosphere(2, Vec3::Constant(0.5), 0.24));
  CHECK(std::abs(signed_volume(s) - expected) < 1e-14);
}
