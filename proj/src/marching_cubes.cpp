#include <algorithm>
#include <array>
#include <cmath>

#include "meshflow/error.hpp"
#include "meshflow/quality.hpp"

namespace meshflow {

namespace {

// Cube corners are numbered dx + 2*dy + 4*dz.
struct CubeEdge {
  int c0, c1;  // c1 = c0 + axis bit
  int axis;
};

// Corners of each cube face, counter-clockwise seen from outside the cube.
constexpr int kFaces[6][4] = {{0, 4, 6, 2}, {1, 3, 7, 5}, {0, 1, 5, 4},
                              {2, 6, 7, 3}, {0, 2, 3, 1}, {4, 5, 7, 6}};

struct CaseTable {
  std::array<CubeEdge, 12> edges;
  std::array<int, 12> face_mask{};           // bit f set when the edge lies on face f
  std::array<std::array<int, 8>, 8> edge_of;  // corner pair -> edge id, -1 if none
  std::array<std::vector<std::vector<int>>, 256> loops;
};

CaseTable build_table() {
  CaseTable t;
  for (auto& row : t.edge_of) row.fill(-1);
  int n = 0;
  for (int c = 0; c < 8; ++c) {
    for (int axis = 0; axis < 3; ++axis) {
      const int bit = 1 << axis;
      if (c & bit) continue;
      t.edges[n] = {c, c | bit, axis};
      t.edge_of[c][c | bit] = t.edge_of[c | bit][c] = n;
      ++n;
    }
  }
  for (int f = 0; f < 6; ++f) {
    for (int m = 0; m < 4; ++m) {
      t.face_mask[t.edge_of[kFaces[f][m]][kFaces[f][(m + 1) % 4]]] |= 1 << f;
    }
  }

  for (int config = 1; config < 255; ++config) {
    auto in = [config](int c) { return ((config >> c) & 1) != 0; };
    // next[e]: the crossing that follows e, walking with the inside on the right.
    std::array<int, 12> next;
    next.fill(-1);
    for (const auto& face : kFaces) {
      for (int m = 0; m < 4; ++m) {
        if (in(face[m]) || !in(face[(m + 1) % 4])) continue;  // need an out -> in crossing
        const int from = t.edge_of[face[m]][face[(m + 1) % 4]];
        for (int s = 1; s < 4; ++s) {
          const int a = face[(m + s) % 4], b = face[(m + s + 1) % 4];
          if (in(a) && !in(b)) {
            next[from] = t.edge_of[a][b];
            break;
          }
        }
      }
    }
    std::array<bool, 12> used{};
    for (int e = 0; e < 12; ++e) {
      if (next[e] < 0 || used[e]) continue;
      std::vector<int> loop;
      for (int cur = e; !used[cur]; cur = next[cur]) {
        used[cur] = true;
        loop.push_back(cur);
      }
      t.loops[config].push_back(std::move(loop));
    }
  }
  return t;
}

const CaseTable& table() {
  static const CaseTable t = build_table();
  return t;
}

}  // namespace

TriangleMesh laplacian_smooth(const TriangleMesh& mesh, int iterations, double lambda) {
  if (iterations < 0) throw ParameterError("smoothing iterations must be >= 0");
  TriangleMesh cur = mesh;
  for (int it = 0; it < iterations; ++it) {
    const auto lap = uniform_laplacian(cur);
    std::vector<Vec3> x = cur.vertices();
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += lambda * lap[i];
    cur = cur.with_vertices(std::move(x));
  }
  return cur;
}

TriangleMesh marching_cubes(const ScalarField& field, const MarchingCubesOptions& options) {
  const GridDims d = field.dims();
  const double iso = options.iso;
  if (!std::isfinite(iso)) throw ParameterError("iso value must be finite");
  double lowest = iso;
  for (double v : field.data()) lowest = std::min(lowest, v);
  // Samples beyond the grid sit at or below iso, which closes the surface.
  const double outside = lowest;

  auto sample = [&](int i, int j, int k) {
    if (i < 0 || j < 0 || k < 0 || i >= d.nx || j >= d.ny || k >= d.nz) return outside;
    return field.at(i, j, k);
  };
  const int px = d.nx + 2, py = d.ny + 2, pz = d.nz + 2;
  auto padded = [&](int i, int j, int k) {
    return static_cast<std::size_t>(i + 1) +
           static_cast<std::size_t>(px) *
               (static_cast<std::size_t>(j + 1) + static_cast<std::size_t>(py) * (k + 1));
  };
  std::vector<std::int64_t> edge_vertex(static_cast<std::size_t>(px) * py * pz * 3, -1);
  std::vector<Vec3> verts;
  std::vector<Face> faces;

  const CaseTable& tab = table();
  std::array<double, 8> val;
  std::array<std::uint32_t, 12> local;

  for (int k = -1; k < d.nz; ++k) {
    for (int j = -1; j < d.ny; ++j) {
      for (int i = -1; i < d.nx; ++i) {
        int config = 0;
        for (int c = 0; c < 8; ++c) {
          val[c] = sample(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
          if (val[c] > iso) config |= 1 << c;
        }
        if (config == 0 || config == 255) continue;

        for (const auto& loop : tab.loops[config]) {
          for (int e : loop) {
            const CubeEdge& ce = tab.edges[e];
            const int ci = i + (ce.c0 & 1), cj = j + ((ce.c0 >> 1) & 1), ck = k + ((ce.c0 >> 2) & 1);
            auto& slot = edge_vertex[padded(ci, cj, ck) * 3 + ce.axis];
            if (slot < 0) {
              const double v0 = val[ce.c0], v1 = val[ce.c1];
              const double tpos = (iso - v0) / (v1 - v0);
              Vec3 p((ci + 0.5) / d.nx, (cj + 0.5) / d.ny, (ck + 0.5) / d.nz);
              const Vec3 h = d.spacing();
              p[ce.axis] += tpos * h[ce.axis];
              slot = static_cast<std::int64_t>(verts.size());
              verts.push_back(p);
            }
            local[e] = static_cast<std::uint32_t>(slot);
          }

          const std::size_t n = loop.size();
          if (n == 3) {
            faces.push_back({local[loop[0]], local[loop[1]], local[loop[2]]});
            continue;
          }
          if (n == 4) {
            // Split along a diagonal whose ends share no cube face, so the
            // diagonal cannot coincide with an edge of the neighbouring cell.
            int split = -1;
            for (int s = 0; s < 2 && split < 0; ++s) {
              if ((tab.face_mask[loop[s]] & tab.face_mask[loop[s + 2]]) == 0) split = s;
            }
            if (split >= 0) {
              const std::uint32_t a = local[loop[split]], b = local[loop[split + 1]],
                                  c = local[loop[(split + 2) % 4]], e = local[loop[(split + 3) % 4]];
              faces.push_back({a, b, c});
              faces.push_back({a, c, e});
              continue;
            }
          }
          Vec3 centre = Vec3::Zero();
          for (int e : loop) centre += verts[local[e]];
          centre /= static_cast<double>(n);
          const auto ci = static_cast<std::uint32_t>(verts.size());
          verts.push_back(centre);
          for (std::size_t m = 0; m < n; ++m) {
            faces.push_back({ci, local[loop[m]], local[loop[(m + 1) % n]]});
          }
        }
      }
    }
  }

  if (faces.empty()) return TriangleMesh();
  TriangleMesh mesh(std::move(verts), std::move(faces), {}, {});
  if (options.label != "mesh") mesh = relabel(mesh, options.label);
  return laplacian_smooth(mesh, options.smoothing_iterations, options.smoothing_lambda);
}

}  // namespace meshflow
