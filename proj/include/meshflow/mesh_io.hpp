#pragma once

#include <filesystem>
#include <string>

#include "meshflow/mesh.hpp"

namespace meshflow {

/// Load an ASCII OBJ (`o`/`g` statements become structure labels) or a binary
/// little-endian PLY, chosen by extension. For PLY, and for OBJ files without
/// groups, structure labels are read from the `<path>.labels.json` sidecar when
/// it exists. Vertices are returned in file units.
TriangleMesh load_mesh(const std::filesystem::path& path);

/// Write by extension (.obj or .ply). PLY output stores double-precision
/// vertices so a load/save/load round trip is bit exact; it writes the label
/// sidecar whenever the mesh has more than one structure or a non-default name.
void save_mesh(const std::filesystem::path& path, const TriangleMesh& mesh);

TriangleMesh read_obj(const std::filesystem::path& path);
void write_obj(const std::filesystem::path& path, const TriangleMesh& mesh);
TriangleMesh read_ply(const std::filesystem::path& path);
void write_ply(const std::filesystem::path& path, const TriangleMesh& mesh);

/// Sidecar path for a mesh file: `<path>.labels.json`.
std::filesystem::path label_sidecar_path(const std::filesystem::path& mesh_path);

}  // namespace meshflow
