#include "meshflow/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <Eigen/Geometry>

#include "meshflow/error.hpp"

namespace meshflow {

namespace {

std::uint64_t edge_key(std::uint32_t a, std::uint32_t b) {
  return (static_cast<std::uint64_t>(a) << 32) | b;
}

std::shared_ptr<const TriangleMesh::Topology> build_topology(std::size_t num_vertices,
                                                             std::vector<Face> faces,
                                                             std::vector<std::uint32_t> labels,
                                                             std::vector<std::string> names) {
  auto topo = std::make_shared<TriangleMesh::Topology>();

  if (labels.empty()) {
    labels.assign(faces.size(), 0);
    if (names.empty()) names.push_back("mesh");
  }
  if (labels.size() != faces.size()) {
    throw ValidationError("face label count " + std::to_string(labels.size()) +
                          " does not match face count " + std::to_string(faces.size()));
  }
  {
    std::unordered_set<std::string> seen;
    for (const auto& n : names) {
      if (n.empty()) throw ValidationError("empty structure name");
      if (!seen.insert(n).second) throw ValidationError("duplicate structure name '" + n + "'");
    }
  }
  for (std::size_t f = 0; f < faces.size(); ++f) {
    if (labels[f] >= names.size()) {
      throw ValidationError("face " + std::to_string(f) + " has label index " +
                            std::to_string(labels[f]) + " but only " +
                            std::to_string(names.size()) + " structures are named");
    }
    const Face& t = faces[f];
    for (int k = 0; k < 3; ++k) {
      if (t[k] >= num_vertices) {
        throw ValidationError("face " + std::to_string(f) + " references vertex " +
                              std::to_string(t[k]) + " of " + std::to_string(num_vertices));
      }
    }
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) {
      throw ValidationError("face " + std::to_string(f) + " repeats a vertex index");
    }
  }

  // Consistent winding: each directed edge is used by at most one face.
  std::unordered_map<std::uint64_t, std::uint32_t> directed;
  directed.reserve(faces.size() * 3);
  for (std::size_t f = 0; f < faces.size(); ++f) {
    for (int k = 0; k < 3; ++k) {
      const std::uint32_t a = faces[f][k], b = faces[f][(k + 1) % 3];
      auto [it, inserted] = directed.emplace(edge_key(a, b), static_cast<std::uint32_t>(f));
      if (!inserted) {
        throw ValidationError("inconsistent winding: directed edge (" + std::to_string(a) + "," +
                              std::to_string(b) + ") used by faces " +
                              std::to_string(it->second) + " and " + std::to_string(f));
      }
    }
  }

  // Undirected edges and edge -> faces.
  std::map<std::uint64_t, std::vector<std::uint32_t>> edge_faces;
  for (std::size_t f = 0; f < faces.size(); ++f) {
    for (int k = 0; k < 3; ++k) {
      std::uint32_t a = faces[f][k], b = faces[f][(k + 1) % 3];
      if (a > b) std::swap(a, b);
      edge_faces[edge_key(a, b)].push_back(static_cast<std::uint32_t>(f));
    }
  }
  topo->edges.reserve(edge_faces.size());
  for (const auto& [key, fs] : edge_faces) {
    topo->edges.emplace_back(static_cast<std::uint32_t>(key >> 32),
                             static_cast<std::uint32_t>(key & 0xffffffffu));
    for (std::size_t i = 0; i < fs.size(); ++i) {
      for (std::size_t j = i + 1; j < fs.size(); ++j) {
        topo->adjacent_face_pairs.emplace_back(fs[i], fs[j]);
      }
    }
  }

  std::vector<std::uint32_t> degree(num_vertices, 0);
  for (const auto& [a, b] : topo->edges) {
    ++degree[a];
    ++degree[b];
  }
  topo->ring_offsets.assign(num_vertices + 1, 0);
  for (std::size_t v = 0; v < num_vertices; ++v) {
    topo->ring_offsets[v + 1] = topo->ring_offsets[v] + degree[v];
  }
  topo->ring.resize(topo->ring_offsets.back());
  std::vector<std::uint32_t> fill(topo->ring_offsets.begin(), topo->ring_offsets.end() - 1);
  for (const auto& [a, b] : topo->edges) {
    topo->ring[fill[a]++] = b;
    topo->ring[fill[b]++] = a;
  }

  topo->faces = std::move(faces);
  topo->face_labels = std::move(labels);
  topo->structure_names = std::move(names);
  return topo;
}

}  // namespace

TriangleMesh::TriangleMesh() : topo_(build_topology(0, {}, {}, {})) {}

TriangleMesh::TriangleMesh(std::vector<Vec3> vertices, std::vector<Face> faces,
                           std::vector<std::uint32_t> face_labels,
                           std::vector<std::string> structure_names)
    : vertices_(std::move(vertices)) {
  for (std::size_t v = 0; v < vertices_.size(); ++v) {
    if (!vertices_[v].allFinite()) {
      throw ValidationError("vertex " + std::to_string(v) + " has a non-finite coordinate");
    }
  }
  topo_ = build_topology(vertices_.size(), std::move(faces), std::move(face_labels),
                         std::move(structure_names));
}

TriangleMesh TriangleMesh::with_vertices(std::vector<Vec3> vertices) const {
  if (vertices.size() != vertices_.size()) {
    throw ValidationError("with_vertices: expected " + std::to_string(vertices_.size()) +
                          " vertices, got " + std::to_string(vertices.size()));
  }
  TriangleMesh out;
  out.vertices_ = std::move(vertices);
  out.topo_ = topo_;
  return out;
}

std::optional<std::uint32_t> TriangleMesh::find_structure(const std::string& name) const {
  const auto& names = topo_->structure_names;
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) return std::nullopt;
  return static_cast<std::uint32_t>(it - names.begin());
}

std::vector<std::uint32_t> TriangleMesh::structure_vertices(std::uint32_t label) const {
  std::vector<char> used(vertices_.size(), 0);
  for (std::size_t f = 0; f < topo_->faces.size(); ++f) {
    if (topo_->face_labels[f] != label) continue;
    for (auto v : topo_->faces[f]) used[v] = 1;
  }
  std::vector<std::uint32_t> out;
  for (std::size_t v = 0; v < used.size(); ++v) {
    if (used[v]) out.push_back(static_cast<std::uint32_t>(v));
  }
  return out;
}

TriangleMesh TriangleMesh::extract_structure(std::uint32_t label) const {
  std::vector<std::int64_t> remap(vertices_.size(), -1);
  std::vector<Vec3> verts;
  std::vector<Face> faces;
  for (std::size_t f = 0; f < topo_->faces.size(); ++f) {
    if (topo_->face_labels[f] != label) continue;
    Face nf;
    for (int k = 0; k < 3; ++k) {
      const auto v = topo_->faces[f][k];
      if (remap[v] < 0) {
        remap[v] = static_cast<std::int64_t>(verts.size());
        verts.push_back(vertices_[v]);
      }
      nf[k] = static_cast<std::uint32_t>(remap[v]);
    }
    faces.push_back(nf);
  }
  return TriangleMesh(std::move(verts), std::move(faces), {},
                      {topo_->structure_names.at(label)});
}

// ---------------------------------------------------------------------------
// LinearTransform

std::array<double, LinearTransform::kNumParams> LinearTransform::to_array() const {
  return {scale.x(),       scale.y(),       scale.z(),       rotation.x(),   rotation.y(),
          rotation.z(),    translation.x(), translation.y(), translation.z()};
}

LinearTransform LinearTransform::from_array(const std::array<double, kNumParams>& p) {
  LinearTransform t;
  t.scale = Vec3(p[0], p[1], p[2]);
  t.rotation = Vec3(p[3], p[4], p[5]);
  t.translation = Vec3(p[6], p[7], p[8]);
  return t;
}

namespace {

Mat3 axis_rotation(int axis, double angle) {
  return Eigen::AngleAxisd(angle, Vec3::Unit(axis)).toRotationMatrix();
}

Mat3 axis_rotation_derivative(int axis, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Mat3 d = Mat3::Zero();
  const int i = (axis + 1) % 3, j = (axis + 2) % 3;
  d(i, i) = -s;
  d(i, j) = -c;
  d(j, i) = c;
  d(j, j) = -s;
  return d;
}

}  // namespace

Mat3 LinearTransform::rotation_matrix() const {
  return axis_rotation(0, rotation.x()) * axis_rotation(1, rotation.y()) *
         axis_rotation(2, rotation.z());
}

Mat3 LinearTransform::rotation_derivative(int axis) const {
  Mat3 parts[3];
  for (int a = 0; a < 3; ++a) {
    parts[a] = a == axis ? axis_rotation_derivative(a, rotation[a]) : axis_rotation(a, rotation[a]);
  }
  return parts[0] * parts[1] * parts[2];
}

Vec3 LinearTransform::apply(const Vec3& x) const {
  const Vec3 o = origin();
  return rotation_matrix() * scale.cwiseProduct(x - o) + o + translation;
}

Vec3 LinearTransform::apply_inverse(const Vec3& y) const {
  const Vec3 o = origin();
  return (rotation_matrix().transpose() * (y - o - translation)).cwiseQuotient(scale) + o;
}

bool LinearTransform::is_identity() const {
  return scale == Vec3::Ones() && rotation == Vec3::Zero() && translation == Vec3::Zero();
}

void LinearTransform::validate() const {
  if (!scale.allFinite() || !rotation.allFinite() || !translation.allFinite()) {
    throw ParameterError("linear transform has non-finite parameters");
  }
  for (int k = 0; k < 3; ++k) {
    if (!(scale[k] > 0.0)) {
      std::ostringstream os;
      os << "linear transform scale[" << k << "] = " << scale[k] << " must be positive";
      throw ParameterError(os.str());
    }
  }
}

TriangleMesh apply_linear_transform(const TriangleMesh& mesh, const LinearTransform& t) {
  t.validate();
  if (t.is_identity()) return mesh;
  const Mat3 r = t.rotation_matrix();
  const Vec3 o = LinearTransform::origin();
  std::vector<Vec3> out(mesh.num_vertices());
  for (std::size_t v = 0; v < out.size(); ++v) {
    out[v] = r * t.scale.cwiseProduct(mesh.vertices()[v] - o) + o + t.translation;
  }
  return mesh.with_vertices(std::move(out));
}

TriangleMesh apply_inverse_linear_transform(const TriangleMesh& mesh, const LinearTransform& t) {
  t.validate();
  std::vector<Vec3> out(mesh.num_vertices());
  for (std::size_t v = 0; v < out.size(); ++v) out[v] = t.apply_inverse(mesh.vertices()[v]);
  return mesh.with_vertices(std::move(out));
}

// ---------------------------------------------------------------------------
// Differential quantities

std::vector<Vec3> vertex_normals(const TriangleMesh& mesh) {
  constexpr double kMinArea = 1e-14;
  const auto& x = mesh.vertices();
  std::vector<Vec3> sum(mesh.num_vertices(), Vec3::Zero());
  std::vector<char> has_area(mesh.num_vertices(), 0);
  for (const Face& f : mesh.faces()) {
    // |cross| = 2 * area, so the sum is area weighted.
    const Vec3 n = (x[f[1]] - x[f[0]]).cross(x[f[2]] - x[f[0]]);
    const bool big = 0.5 * n.norm() >= kMinArea;
    for (auto v : f) {
      sum[v] += n;
      if (big) has_area[v] = 1;
    }
  }
  for (std::size_t v = 0; v < sum.size(); ++v) {
    const double len = sum[v].norm();
    if (!has_area[v] || !(len > 0.0)) {
      throw DegenerateNormalError(v, "vertex " + std::to_string(v) +
                                         " has no incident face with non-zero area");
    }
    sum[v] /= len;
  }
  return sum;
}

std::vector<Vec3> face_normals(const TriangleMesh& mesh) {
  const auto& x = mesh.vertices();
  std::vector<Vec3> out;
  out.reserve(mesh.num_faces());
  for (const Face& f : mesh.faces()) {
    Vec3 n = (x[f[1]] - x[f[0]]).cross(x[f[2]] - x[f[0]]);
    const double len = n.norm();
    out.push_back(len > 0.0 ? Vec3(n / len) : Vec3::Zero());
  }
  return out;
}

std::vector<Vec3> uniform_laplacian(const TriangleMesh& mesh) {
  const auto& x = mesh.vertices();
  std::vector<Vec3> out(mesh.num_vertices());
  for (std::uint32_t v = 0; v < out.size(); ++v) {
    const std::size_t deg = mesh.degree(v);
    if (deg == 0) throw ConnectivityError("vertex " + std::to_string(v) + " is isolated");
    Vec3 mean = Vec3::Zero();
    for (auto it = mesh.ring_begin(v); it != mesh.ring_end(v); ++it) mean += x[*it];
    out[v] = mean / static_cast<double>(deg) - x[v];
  }
  return out;
}

double face_area(const TriangleMesh& mesh, std::size_t f) {
  const auto& x = mesh.vertices();
  const Face& t = mesh.faces()[f];
  return 0.5 * (x[t[1]] - x[t[0]]).cross(x[t[2]] - x[t[0]]).norm();
}

double surface_area(const TriangleMesh& mesh) {
  double a = 0.0;
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) a += face_area(mesh, f);
  return a;
}

double signed_volume(const TriangleMesh& mesh) {
  const auto& x = mesh.vertices();
  double v = 0.0;
  for (const Face& f : mesh.faces()) v += x[f[0]].dot(x[f[1]].cross(x[f[2]]));
  return v / 6.0;
}

long euler_characteristic(const TriangleMesh& mesh) {
  std::vector<char> used(mesh.num_vertices(), 0);
  for (const Face& f : mesh.faces()) {
    for (auto v : f) used[v] = 1;
  }
  const long nv = std::count(used.begin(), used.end(), 1);
  return nv - static_cast<long>(mesh.edges().size()) + static_cast<long>(mesh.num_faces());
}

TriangleMesh merge_meshes(const std::vector<TriangleMesh>& parts) {
  std::vector<Vec3> verts;
  std::vector<Face> faces;
  std::vector<std::uint32_t> labels;
  std::vector<std::string> names;
  for (const auto& part : parts) {
    const auto base = static_cast<std::uint32_t>(verts.size());
    verts.insert(verts.end(), part.vertices().begin(), part.vertices().end());
    std::vector<std::uint32_t> label_map;
    for (const auto& n : part.structure_names()) {
      auto it = std::find(names.begin(), names.end(), n);
      if (it == names.end()) {
        names.push_back(n);
        label_map.push_back(static_cast<std::uint32_t>(names.size() - 1));
      } else {
        label_map.push_back(static_cast<std::uint32_t>(it - names.begin()));
      }
    }
    for (std::size_t f = 0; f < part.num_faces(); ++f) {
      const Face& t = part.faces()[f];
      faces.push_back({t[0] + base, t[1] + base, t[2] + base});
      labels.push_back(label_map[part.face_labels()[f]]);
    }
  }
  return TriangleMesh(std::move(verts), std::move(faces), std::move(labels), std::move(names));
}

TriangleMesh flip_winding(const TriangleMesh& mesh) {
  std::vector<Face> faces = mesh.faces();
  for (auto& f : faces) std::swap(f[1], f[2]);
  return TriangleMesh(mesh.vertices(), std::move(faces), mesh.face_labels(),
                      mesh.structure_names());
}

TriangleMesh relabel(const TriangleMesh& mesh, const std::string& name) {
  return TriangleMesh(mesh.vertices(), mesh.faces(), {}, {name});
}

}  // namespace meshflow
