#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace meshflow {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Face = std::array<std::uint32_t, 3>;
using Edge = std::pair<std::uint32_t, std::uint32_t>;  // first < second

/// Cardiac structure names used by the whole-heart templates. Any other name is
/// accepted as a user-defined structure.
inline const std::vector<std::string>& cardiac_structures() {
  static const std::vector<std::string> names{"Epi", "LA", "LV", "RA", "RV", "Ao", "PA"};
  return names;
}

/// Triangle surface mesh with per-face structure labels.
///
/// Vertices live in normalized image coordinates. Connectivity (faces, labels,
/// edge and neighbor tables) is shared between meshes produced by
/// with_vertices(), so deforming a mesh never copies its topology. A mesh is
/// immutable once constructed.
class TriangleMesh {
 public:
  struct Topology {
    std::vector<Face> faces;
    std::vector<std::uint32_t> face_labels;
    std::vector<std::string> structure_names;
    std::vector<Edge> edges;
    // CSR one-ring: neighbors of v are ring[ring_offsets[v] .. ring_offsets[v+1])
    std::vector<std::uint32_t> ring_offsets;
    std::vector<std::uint32_t> ring;
    // Faces sharing an edge (all pairs when an edge is non-manifold).
    std::vector<std::pair<std::uint32_t, std::uint32_t>> adjacent_face_pairs;
  };

  TriangleMesh();

  /// Validates and builds connectivity. Throws ValidationError on out-of-range
  /// or repeated face indices, inconsistent winding, or malformed labels.
  /// Empty `face_labels` puts every face in a single structure named "mesh".
  TriangleMesh(std::vector<Vec3> vertices, std::vector<Face> faces,
               std::vector<std::uint32_t> face_labels = {},
               std::vector<std::string> structure_names = {});

  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<Face>& faces() const { return topo_->faces; }
  const std::vector<std::uint32_t>& face_labels() const { return topo_->face_labels; }
  const std::vector<std::string>& structure_names() const { return topo_->structure_names; }
  const std::vector<Edge>& edges() const { return topo_->edges; }
  const Topology& topology() const { return *topo_; }

  std::size_t num_vertices() const { return vertices_.size(); }
  std::size_t num_faces() const { return topo_->faces.size(); }
  bool empty() const { return topo_->faces.empty(); }

  std::size_t degree(std::uint32_t v) const {
    return topo_->ring_offsets[v + 1] - topo_->ring_offsets[v];
  }
  const std::uint32_t* ring_begin(std::uint32_t v) const {
    return topo_->ring.data() + topo_->ring_offsets[v];
  }
  const std::uint32_t* ring_end(std::uint32_t v) const {
    return topo_->ring.data() + topo_->ring_offsets[v + 1];
  }

  /// Same connectivity and labels, new vertex positions.
  TriangleMesh with_vertices(std::vector<Vec3> vertices) const;

  std::optional<std::uint32_t> find_structure(const std::string& name) const;

  /// Sorted indices of vertices incident to faces carrying `label`.
  std::vector<std::uint32_t> structure_vertices(std::uint32_t label) const;

  /// Sub-mesh of the faces carrying `label`, vertices re-indexed.
  TriangleMesh extract_structure(std::uint32_t label) const;

 private:
  std::vector<Vec3> vertices_;
  std::shared_ptr<const Topology> topo_;
};

/// Global scale-rotate-translate transform about the image center.
///
/// x -> R * (S * (x - origin)) + origin + translation, with R built from
/// intrinsic XYZ Euler angles (R = Rx * Ry * Rz).
struct LinearTransform {
  Vec3 scale = Vec3::Ones();
  Vec3 rotation = Vec3::Zero();
  Vec3 translation = Vec3::Zero();

  static Vec3 origin() { return Vec3::Constant(0.5); }

  static constexpr std::size_t kNumParams = 9;
  /// Parameter order: scale xyz, rotation xyz, translation xyz.
  std::array<double, kNumParams> to_array() const;
  static LinearTransform from_array(const std::array<double, kNumParams>& p);

  Mat3 rotation_matrix() const;
  /// dR/d(rotation[axis]).
  Mat3 rotation_derivative(int axis) const;

  Vec3 apply(const Vec3& x) const;
  Vec3 apply_inverse(const Vec3& y) const;

  bool is_identity() const;
  /// Throws ParameterError unless every scale is positive and all entries finite.
  void validate() const;
};

TriangleMesh apply_linear_transform(const TriangleMesh& mesh, const LinearTransform& t);
TriangleMesh apply_inverse_linear_transform(const TriangleMesh& mesh, const LinearTransform& t);

/// Area-weighted unit vertex normals. Throws DegenerateNormalError for a vertex
/// whose incident faces all have area below 1e-14.
std::vector<Vec3> vertex_normals(const TriangleMesh& mesh);

/// Unit face normals (zero vector for zero-area faces).
std::vector<Vec3> face_normals(const TriangleMesh& mesh);

/// Mean of one-ring neighbor positions minus the vertex position.
/// Throws ConnectivityError for an isolated vertex.
std::vector<Vec3> uniform_laplacian(const TriangleMesh& mesh);

double face_area(const TriangleMesh& mesh, std::size_t f);
double surface_area(const TriangleMesh& mesh);
/// Signed enclosed volume (positive for outward winding of a closed surface).
double signed_volume(const TriangleMesh& mesh);
long euler_characteristic(const TriangleMesh& mesh);

/// Concatenate meshes; structures with the same name are merged.
TriangleMesh merge_meshes(const std::vector<TriangleMesh>& parts);

/// Reverse the winding of every face.
TriangleMesh flip_winding(const TriangleMesh& mesh);

/// Rename every structure of a mesh to `name` (single-structure result).
TriangleMesh relabel(const TriangleMesh& mesh, const std::string& name);

}  // namespace meshflow
