#include "doctest.h"

#include <random>

#include "meshflow/point_search.hpp"

using namespace meshflow;

namespace {

PointTree::Hit brute(const std::vector<Vec3>& pts, const Vec3& q, Norm norm) {
  PointTree::Hit best{0, std::numeric_limits<double>::infinity()};
  for (std::uint32_t i = 0; i < pts.size(); ++i) {
    const double d = norm == Norm::L1 ? (pts[i] - q).lpNorm<1>() : (pts[i] - q).norm();
    if (d < best.distance) best = {i, d};
  }
  return best;
}

}  // namespace

TEST_CASE("kd tree agrees with brute force") {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int n : {1, 2, 7, 100, 2000}) {
    std::vector<Vec3> pts(n);
    for (auto& p : pts) p = Vec3(u(rng), u(rng), u(rng));
    const PointTree tree(pts);
    CHECK(tree.size() == pts.size());
    for (int k = 0; k < 300; ++k) {
      const Vec3 q(1.4 * u(rng) - 0.2, 1.4 * u(rng) - 0.2, 1.4 * u(rng) - 0.2);
      for (Norm norm : {Norm::L1, Norm::L2}) {
        const auto a = tree.nearest(q, norm);
        const auto b = brute(pts, q, norm);
        CHECK(a.index == b.index);
        CHECK(a.distance == b.distance);
      }
    }
  }
}

TEST_CASE("ties go to the lowest index") {
  // Lattice points and duplicates give many exact ties.
  std::vector<Vec3> pts;
  for (int rep = 0; rep < 3; ++rep) {
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        for (int k = 0; k < 4; ++k) pts.emplace_back(i * 0.25, j * 0.25, k * 0.25);
      }
    }
  }
  const PointTree tree(pts);
  std::mt19937 rng(9);
  std::uniform_int_distribution<int> cell(0, 6);
  for (int t = 0; t < 500; ++t) {
    const Vec3 q(cell(rng) * 0.125, cell(rng) * 0.125, cell(rng) * 0.125);
    for (Norm norm : {Norm::L1, Norm::L2}) {
      const auto a = tree.nearest(q, norm);
      const auto b = brute(pts, q, norm);
      CHECK(a.index == b.index);
      CHECK(a.index < 64);
    }
  }
}

TEST_CASE("L1 and L2 nearest can differ") {
  const std::vector<Vec3> pts{{0.3, 0.3, 0}, {0.45, 0, 0}};
  const PointTree tree(pts);
  CHECK(tree.nearest(Vec3::Zero(), Norm::L2).index == 0);
  CHECK(tree.nearest(Vec3::Zero(), Norm::L1).index == 1);
  CHECK(tree.nearest(Vec3::Zero(), Norm::L1).distance == 0.45);
}
