#include "meshflow/shapes.hpp"

#include <cmath>
#include <map>

#include <Eigen/Geometry>

#include "meshflow/error.hpp"

namespace meshflow {

namespace {

struct MidpointCache {
  std::vector<Vec3>& verts;
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> index;

  std::uint32_t get(std::uint32_t a, std::uint32_t b) {
    const auto key = a < b ? std::make_pair(a, b) : std::make_pair(b, a);
    auto it = index.find(key);
    if (it != index.end()) return it->second;
    verts.push_back(0.5 * (verts[a] + verts[b]));
    const auto id = static_cast<std::uint32_t>(verts.size() - 1);
    index.emplace(key, id);
    return id;
  }
};

void split_faces(std::vector<Vec3>& verts, std::vector<Face>& faces,
                 std::vector<std::uint32_t>* labels) {
  MidpointCache cache{verts, {}};
  std::vector<Face> out;
  std::vector<std::uint32_t> out_labels;
  out.reserve(faces.size() * 4);
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const auto [a, b, c] = faces[f];
    const auto ab = cache.get(a, b), bc = cache.get(b, c), ca = cache.get(c, a);
    out.push_back({a, ab, ca});
    out.push_back({b, bc, ab});
    out.push_back({c, ca, bc});
    out.push_back({ab, bc, ca});
    if (labels) out_labels.insert(out_labels.end(), 4, (*labels)[f]);
  }
  faces = std::move(out);
  if (labels) *labels = std::move(out_labels);
}

}  // namespace

TriangleMesh make_icosphere(int level, const Vec3& center, double radius,
                            const std::string& label) {
  if (level < 0) throw ParameterError("icosphere level must be non-negative");
  if (!(radius > 0.0)) throw ParameterError("icosphere radius must be positive");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v{{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
                      {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
                      {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<Face> f{{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                      {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                      {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                      {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int l = 0; l < level; ++l) {
    const std::size_t before = v.size();
    split_faces(v, f, nullptr);
    for (std::size_t i = before; i < v.size(); ++i) v[i].normalize();
  }
  for (auto& p : v) p = center + radius * p;
  return TriangleMesh(std::move(v), std::move(f), {}, {label});
}

TriangleMesh make_ellipsoid(int level, const Vec3& center, const Vec3& semi_axes,
                            const std::string& label) {
  TriangleMesh unit = make_icosphere(level, Vec3::Zero(), 1.0, label);
  std::vector<Vec3> v = unit.vertices();
  for (auto& p : v) p = center + semi_axes.cwiseProduct(p);
  return unit.with_vertices(std::move(v));
}

TriangleMesh make_spherical_shell(int outer_level, int inner_level, const Vec3& center,
                                  double inner_radius, double outer_radius,
                                  const std::string& label, double inner_rotation) {
  if (!(inner_radius < outer_radius)) {
    throw ParameterError("shell inner radius must be smaller than outer radius");
  }
  TriangleMesh outer = make_icosphere(outer_level, center, outer_radius, label);
  TriangleMesh inner = make_icosphere(inner_level, Vec3::Zero(), inner_radius, label);
  const Mat3 rot = Eigen::AngleAxisd(inner_rotation, Vec3::UnitZ()).toRotationMatrix();
  std::vector<Vec3> iv = inner.vertices();
  for (auto& p : iv) p = center + rot * p;
  inner = flip_winding(inner.with_vertices(std::move(iv)));
  return merge_meshes({outer, inner});
}

TriangleMesh subdivide_midpoint(const TriangleMesh& mesh) {
  std::vector<Vec3> v = mesh.vertices();
  std::vector<Face> f = mesh.faces();
  std::vector<std::uint32_t> labels = mesh.face_labels();
  split_faces(v, f, &labels);
  return TriangleMesh(std::move(v), std::move(f), std::move(labels), mesh.structure_names());
}

TriangleMesh subdivide_on_sphere(const TriangleMesh& mesh, const Vec3& center, double radius) {
  const std::size_t before = mesh.num_vertices();
  TriangleMesh fine = subdivide_midpoint(mesh);
  std::vector<Vec3> v = fine.vertices();
  for (std::size_t i = before; i < v.size(); ++i) {
    v[i] = center + radius * (v[i] - center).normalized();
  }
  return fine.with_vertices(std::move(v));
}

}  // namespace meshflow
