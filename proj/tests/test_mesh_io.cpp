#include "doctest.h"

#include <cstring>
#include <fstream>

#include "meshflow/error.hpp"
#include "meshflow/mesh_io.hpp"
#include "meshflow/shapes.hpp"
#include "test_util.hpp"

using namespace meshflow;
using testutil::TempDir;

namespace {

std::string label_of(const TriangleMesh& m, std::size_t f) {
  return m.structure_names()[m.face_labels()[f]];
}

TriangleMesh two_structures() {
  return merge_meshes({make_icosphere(1, Vec3(0.3, 0.5, 0.5), 0.1, "LV"),
                       make_icosphere(0, Vec3(0.7, 0.5, 0.5), 0.1, "Ao")});
}

}  // namespace

TEST_CASE("smallest obj") {
  TempDir dir("io_small");
  testutil::write_text(dir / "t.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
  const TriangleMesh m = load_mesh(dir / "t.obj");
  CHECK(m.num_faces() == 1);
  CHECK(m.num_vertices() == 3);
  CHECK(m.structure_names() == std::vector<std::string>{"mesh"});
}

TEST_CASE("obj errors") {
  TempDir dir("io_err");
  testutil::write_text(dir / "range.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n");
  CHECK_THROWS_AS(load_mesh(dir / "range.obj"), ValidationError);

  testutil::write_text(dir / "bad.obj", "v 0 0 0\nv 1 zero 0\n");
  try {
    load_mesh(dir / "bad.obj");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  CHECK_THROWS_AS(load_mesh(dir / "missing.obj"), IoError);
  CHECK_THROWS_AS(load_mesh(dir / "x.stl"), IoError);
  testutil::write_text(dir / "x.stl", "solid");
  CHECK_THROWS_AS(load_mesh(dir / "x.stl"), FormatError);
}

TEST_CASE("obj groups become structures") {
  TempDir dir("io_groups");
  testutil::write_text(dir / "g.obj",
                       "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n"
                       "g LV\nf 1 3 2\nf 1 2 4\n"
                       "o Ao\nf 1 4 3\n"
                       "g LV\nf 2 3 4\n");
  const TriangleMesh m = load_mesh(dir / "g.obj");
  CHECK(m.structure_names().size() == 2);
  CHECK(label_of(m, 0) == "LV");
  CHECK(label_of(m, 2) == "Ao");
  CHECK(label_of(m, 3) == "LV");
}

TEST_CASE("obj round trip keeps labels") {
  TempDir dir("io_obj");
  const TriangleMesh m = two_structures();
  save_mesh(dir / "m.obj", m);
  const TriangleMesh r = load_mesh(dir / "m.obj");
  REQUIRE(r.num_faces() == m.num_faces());
  for (std::size_t f = 0; f < m.num_faces(); ++f) {
    CHECK(r.faces()[f] == m.faces()[f]);
    CHECK(label_of(r, f) == label_of(m, f));
  }
  for (std::size_t v = 0; v < m.num_vertices(); ++v) {
    CHECK((r.vertices()[v] - m.vertices()[v]).norm() < 1e-15);
  }
}

TEST_CASE("ply round trip is bit exact") {
  TempDir dir("io_ply");
  const TriangleMesh m = two_structures();
  save_mesh(dir / "a.ply", m);
  CHECK(std::filesystem::exists(label_sidecar_path(dir / "a.ply")));
  const TriangleMesh r = load_mesh(dir / "a.ply");
  CHECK(r.vertices() == m.vertices());
  CHECK(r.faces() == m.faces());
  for (std::size_t f = 0; f < m.num_faces(); ++f) CHECK(label_of(r, f) == label_of(m, f));

  save_mesh(dir / "b.ply", r);
  const TriangleMesh r2 = load_mesh(dir / "b.ply");
  CHECK(r2.vertices() == r.vertices());
  CHECK(testutil::read_text(dir / "a.ply") == testutil::read_text(dir / "b.ply"));

  // A single default structure needs no sidecar.
  save_mesh(dir / "c.ply", make_icosphere(1));
  CHECK_FALSE(std::filesystem::exists(label_sidecar_path(dir / "c.ply")));
}

TEST_CASE("ply truncated data") {
  TempDir dir("io_trunc");
  save_mesh(dir / "a.ply", make_icosphere(1));
  const std::string bytes = testutil::read_text(dir / "a.ply");
  std::ofstream(dir / "b.ply", std::ios::binary) << bytes.substr(0, bytes.size() - 7);
  CHECK_THROWS_AS(load_mesh(dir / "b.ply"), FormatError);
}

TEST_CASE("sidecar labels for obj without groups") {
  TempDir dir("io_sidecar");
  testutil::write_text(dir / "t.obj",
                       "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n"
                       "f 1 3 2\nf 1 2 4\nf 1 4 3\nf 2 3 4\n");
  testutil::write_text(label_sidecar_path(dir / "t.obj"), R"({"LV": [[0, 1], [3, 4]], "RV": [[1, 3]]})");
  const TriangleMesh m = load_mesh(dir / "t.obj");
  CHECK(label_of(m, 0) == "LV");
  CHECK(label_of(m, 1) == "RV");
  CHECK(label_of(m, 2) == "RV");
  CHECK(label_of(m, 3) == "LV");

  testutil::write_text(label_sidecar_path(dir / "t.obj"), R"({"LV": [[0, 3]]})");
  CHECK_THROWS_AS(load_mesh(dir / "t.obj"), ValidationError);
  testutil::write_text(label_sidecar_path(dir / "t.obj"), R"({"LV": [[0, 9]]})");
  CHECK_THROWS_AS(load_mesh(dir / "t.obj"), ValidationError);
  testutil::write_text(label_sidecar_path(dir / "t.obj"), R"({"LV": [0, 4]})");
  CHECK_THROWS_AS(load_mesh(dir / "t.obj"), FormatError);
}

TEST_CASE("icosphere file") {
  TempDir dir("io_ico");
  save_mesh(dir / "s.obj", make_icosphere(2));
  const TriangleMesh m = load_mesh(dir / "s.obj");
  CHECK(m.num_faces() == 320);
  CHECK(m.num_vertices() == 162);
  CHECK(euler_characteristic(m) == 2);
}
