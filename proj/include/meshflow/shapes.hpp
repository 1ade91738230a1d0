#pragma once

#include <string>

#include "meshflow/mesh.hpp"

namespace meshflow {

/// Subdivided icosahedron projected onto a sphere. `level` 0 gives 20 faces and
/// every level multiplies the face count by 4. Faces are wound outward.
TriangleMesh make_icosphere(int level, const Vec3& center = Vec3::Constant(0.5),
                            double radius = 0.25, const std::string& label = "mesh");

/// Icosphere stretched to the given semi-axes.
TriangleMesh make_ellipsoid(int level, const Vec3& center, const Vec3& semi_axes,
                            const std::string& label = "mesh");

/// Closed thick shell: outer sphere wound outward, inner sphere wound inward
/// (normals point out of the wall material). `inner_rotation` rotates the inner
/// sphere about z so its vertices need not align with the outer ones.
TriangleMesh make_spherical_shell(int outer_level, int inner_level, const Vec3& center,
                                  double inner_radius, double outer_radius,
                                  const std::string& label = "mesh",
                                  double inner_rotation = 0.0);

/// One step of 1-to-4 midpoint subdivision; labels are inherited by child faces.
/// Vertex positions of the coarse mesh are kept, new vertices sit at edge midpoints.
TriangleMesh subdivide_midpoint(const TriangleMesh& mesh);

/// Midpoint subdivision followed by projection of new vertices onto the sphere
/// (center, radius); used to refine sphere templates without changing the shape.
TriangleMesh subdivide_on_sphere(const TriangleMesh& mesh, const Vec3& center, double radius);

}  // namespace meshflow
