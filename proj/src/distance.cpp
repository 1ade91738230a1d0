#include "meshflow/distance.hpp"

#include <algorithm>
#include <limits>

#include "meshflow/error.hpp"

namespace meshflow {

// Voronoi-region walk over the triangle's vertices, edges and face.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  }

  const double denom = va + vb + vc;
  if (denom == 0.0) {
    // Degenerate (zero-area) triangle: fall back to the closest edge point.
    auto seg = [&p](const Vec3& s, const Vec3& e) {
      const Vec3 d = e - s;
      const double len2 = d.squaredNorm();
      const double t = len2 > 0.0 ? std::clamp((p - s).dot(d) / len2, 0.0, 1.0) : 0.0;
      return Vec3(s + t * d);
    };
    Vec3 best = seg(a, b);
    for (const Vec3& q : {seg(b, c), seg(c, a)}) {
      if ((q - p).squaredNorm() < (best - p).squaredNorm()) best = q;
    }
    return best;
  }
  const double v = vb / denom, w = vc / denom;
  return a + ab * v + ac * w;
}

FaceBvh::FaceBvh(const TriangleMesh& mesh) : mesh_(&mesh) {
  const auto& x = mesh.vertices();
  const std::size_t nf = mesh.num_faces();
  boxes_.resize(nf);
  centroids_.resize(nf);
  order_.resize(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    const Face& t = mesh.faces()[f];
    Box3 b(x[t[0]]);
    b.extend(x[t[1]]);
    b.extend(x[t[2]]);
    boxes_[f] = b;
    centroids_[f] = (x[t[0]] + x[t[1]] + x[t[2]]) / 3.0;
    order_[f] = static_cast<std::uint32_t>(f);
  }
  if (nf > 0) {
    nodes_.reserve(2 * nf);
    build(0, static_cast<std::uint32_t>(nf));
  }
}

std::uint32_t FaceBvh::build(std::uint32_t begin, std::uint32_t end) {
  constexpr std::uint32_t kLeafSize = 4;
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.emplace_back();
  Box3 box(boxes_[order_[begin]]);
  Box3 cbox(centroids_[order_[begin]]);
  for (std::uint32_t i = begin + 1; i < end; ++i) {
    box.extend(boxes_[order_[i]]);
    cbox.extend(centroids_[order_[i]]);
  }
  nodes_[id].box = box;
  if (end - begin <= kLeafSize) {
    nodes_[id].leaf = true;
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    return id;
  }
  int axis = 0;
  cbox.sizes().maxCoeff(&axis);
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double ca = centroids_[a][axis], cb = centroids_[b][axis];
                     return ca < cb || (ca == cb && a < b);
                   });
  const std::uint32_t left = build(begin, mid);
  const std::uint32_t right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

FaceBvh::Nearest FaceBvh::nearest(const Vec3& p) const {
  if (nodes_.empty()) throw ValidationError("nearest-point query on an empty mesh");
  const auto& x = mesh_->vertices();
  Nearest best;
  double best_d2 = std::numeric_limits<double>::infinity();
  std::uint32_t best_face = std::numeric_limits<std::uint32_t>::max();

  std::vector<std::uint32_t> stack{0};
  while (!stack.empty()) {
    const Node& n = nodes_[stack.back()];
    stack.pop_back();
    if (n.box.squaredExteriorDistance(p) > best_d2) continue;
    if (n.leaf) {
      for (std::uint32_t i = n.begin; i < n.end; ++i) {
        const std::uint32_t f = order_[i];
        const Face& t = mesh_->faces()[f];
        const Vec3 q = closest_point_on_triangle(p, x[t[0]], x[t[1]], x[t[2]]);
        const double d2 = (q - p).squaredNorm();
        if (d2 < best_d2 || (d2 == best_d2 && f < best_face)) {
          best_d2 = d2;
          best_face = f;
          best.point = q;
        }
      }
      continue;
    }
    // Visit the nearer child first.
    const double dl = nodes_[n.left].box.squaredExteriorDistance(p);
    const double dr = nodes_[n.right].box.squaredExteriorDistance(p);
    if (dl <= dr) {
      stack.push_back(n.right);
      stack.push_back(n.left);
    } else {
      stack.push_back(n.left);
      stack.push_back(n.right);
    }
  }
  best.distance = std::sqrt(best_d2);
  best.face = best_face;
  return best;
}

void FaceBvh::overlapping(const Box3& query,
                          const std::function<void(std::uint32_t)>& visit) const {
  if (nodes_.empty()) return;
  std::vector<std::uint32_t> stack{0};
  while (!stack.empty()) {
    const Node& n = nodes_[stack.back()];
    stack.pop_back();
    if (!n.box.intersects(query)) continue;
    if (n.leaf) {
      for (std::uint32_t i = n.begin; i < n.end; ++i) {
        if (boxes_[order_[i]].intersects(query)) visit(order_[i]);
      }
    } else {
      stack.push_back(n.right);
      stack.push_back(n.left);
    }
  }
}

double distance_to_mesh(const FaceBvh& bvh, const Vec3& p) { return bvh.nearest(p).distance; }

ScalarField unsigned_distance_map(const TriangleMesh& mesh, const GridDims& dims) {
  dims.validate();
  if (mesh.empty()) throw ValidationError("distance map of an empty mesh");
  const FaceBvh bvh(mesh);
  ScalarField out(dims);
  const long n = static_cast<long>(dims.count());
#pragma omp parallel for schedule(dynamic, 1024)
  for (long idx = 0; idx < n; ++idx) {
    const int i = static_cast<int>(idx % dims.nx);
    const int j = static_cast<int>((idx / dims.nx) % dims.ny);
    const int k = static_cast<int>(idx / (static_cast<long>(dims.nx) * dims.ny));
    out[static_cast<std::size_t>(idx)] = bvh.nearest(dims.center(i, j, k)).distance;
  }
  return out;
}

}  // namespace meshflow
