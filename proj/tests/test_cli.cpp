#include "doctest.h"

#include <iostream>
#include <sstream>

#include "json.hpp"

#include "meshflow/cli.hpp"
#include "meshflow/grid.hpp"
#include "meshflow/mesh_io.hpp"
#include "meshflow/quality.hpp"
#include "meshflow/shapes.hpp"
#include "test_util.hpp"

using namespace meshflow;
using nlohmann::json;
using testutil::TempDir;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "meshflow");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  const int code = run_cli(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  return {code, out.str(), err.str()};
}

json read_json(const std::filesystem::path& p) { return json::parse(testutil::read_text(p)); }

void write_small_config(const std::filesystem::path& p) {
  testutil::write_text(p, R"({"field_dims": [8, 8, 8], "flow": {"max_iters": 10}})");
}

}  // namespace

TEST_CASE("fit with template equal to target") {
  TempDir dir("cli_fit");
  // Fine enough that the edge term does not outweigh the chamfer.
  save_mesh(dir / "t.obj", make_icosphere(3));
  write_small_config(dir / "cfg.json");
  const Run r = run({"fit", (dir / "t.obj").string(), (dir / "t.obj").string(), "--config",
                     (dir / "cfg.json").string(), "--out-dir", (dir / "out").string()});
  CHECK(r.code == kExitOk);
  const TriangleMesh in = load_mesh(dir / "t.obj");
  const TriangleMesh out = load_mesh(dir / "out" / "deformed.obj");
  REQUIRE(out.num_vertices() == in.num_vertices());
  for (std::size_t i = 0; i < in.num_vertices(); ++i) {
    CHECK((out.vertices()[i] - in.vertices()[i]).norm() < 1e-6);
  }
  for (const char* f : {"field.grid", "linear.json", "loss_history.json", "sif_report.json", "manifest.json"}) {
    CHECK(std::filesystem::exists(dir / "out" / f));
  }
  const json m = read_json(dir / "out" / "manifest.json");
  CHECK(m["command"] == "fit");
  CHECK(m["inputs"].size() == 3);
  CHECK(m["inputs"][0]["sha256"] == sha256_file(dir / "t.obj"));
  CHECK(m["config"]["field_dims"] == json::array({8, 8, 8}));
  CHECK(read_json(dir / "out" / "loss_history.json")["schema_version"] == 1);
  CHECK(read_vector_grid(dir / "out" / "field.grid").dims().nx == 8);
}

TEST_CASE("fit errors") {
  TempDir dir("cli_fit_err");
  save_mesh(dir / "t.obj", make_icosphere(1));
  const std::string missing = (dir / "nope.obj").string();
  const Run r = run({"fit", (dir / "t.obj").string(), missing, "--out-dir", (dir / "out").string()});
  CHECK(r.code == kExitInputError);
  CHECK(r.err.find(missing) != std::string::npos);

  testutil::write_text(dir / "bad.json", R"({"alpha": -1})");
  CHECK(run({"fit", (dir / "t.obj").string(), (dir / "t.obj").string(), "--config", (dir / "bad.json").string(),
             "--out-dir", (dir / "out").string()})
            .code == kExitInputError);
  CHECK(run({"fit", (dir / "t.obj").string()}).code == kExitInputError);
  CHECK(run({"frobnicate"}).code == kExitInputError);
}

TEST_CASE("fit reports non-convergence") {
  TempDir dir("cli_fit_nc");
  save_mesh(dir / "t.obj", make_icosphere(2, Vec3::Constant(0.5), 0.2));
  save_mesh(dir / "g.obj", testutil::rotated(make_ellipsoid(2, Vec3::Constant(0.5), Vec3(0.2, 0.25, 0.22)), 0.37));
  testutil::write_text(dir / "cfg.json", R"({"field_dims": [8, 8, 8], "flow": {"max_iters": 1}})");
  const Run r = run({"fit", (dir / "t.obj").string(), (dir / "g.obj").string(), "--config",
                     (dir / "cfg.json").string(), "--out-dir", (dir / "out").string()});
  CHECK(r.code == kExitNotConverged);
  CHECK(std::filesystem::exists(dir / "out" / "deformed.obj"));
}

TEST_CASE("check") {
  TempDir dir("cli_check");
  save_mesh(dir / "s.obj", make_icosphere(2));
  CHECK(run({"check", (dir / "s.obj").string(), "--out-dir", (dir / "a").string()}).code == kExitOk);

  save_mesh(dir / "x.obj", testutil::crossing_pair());
  const Run r = run({"check", (dir / "x.obj").string(), "--out-dir", (dir / "b").string()});
  CHECK(r.code == kExitQualityGate);
  const json rep = read_json(dir / "b" / "sif_report.json");
  CHECK(rep["sif_faces"] == json::array({0, 1}));
  CHECK(r.out.find("2 self-intersecting faces") != std::string::npos);

  testutil::write_text(dir / "junk.obj", "v 1 2\nf a b c\n");
  CHECK(run({"check", (dir / "junk.obj").string(), "--out-dir", (dir / "c").string()}).code == kExitInputError);
  CHECK(run({"check", (dir / "none.obj").string(), "--out-dir", (dir / "c").string()}).code == kExitInputError);

  // Same input, same report bytes.
  CHECK(run({"check", (dir / "x.obj").string(), "--out-dir", (dir / "d").string()}).code == kExitQualityGate);
  CHECK(sha256_file(dir / "b" / "sif_report.json") == sha256_file(dir / "d" / "sif_report.json"));
}

TEST_CASE("distmap") {
  TempDir dir("cli_distmap");
  const Vec3 a(0.2, 0.3, 0.4), b(0.7, 0.35, 0.45), c(0.4, 0.8, 0.6);
  save_mesh(dir / "tri.obj", TriangleMesh({a, b, c}, {{0, 1, 2}}));
  const Run r = run({"distmap", (dir / "tri.obj").string(), (dir / "d.grid").string(), "--dims", "12,10,8",
                     "--out-dir", (dir / "out").string()});
  REQUIRE(r.code == kExitOk);
  const ScalarField d = read_scalar_grid(dir / "d.grid");
  CHECK(d.dims().nx == 12);
  CHECK(d.dims().ny == 10);
  CHECK(d.dims().nz == 8);
  const int spots[5][3] = {{0, 0, 0}, {11, 9, 7}, {5, 5, 4}, {3, 7, 2}, {8, 2, 6}};
  for (const auto& s : spots) {
    const Vec3 p = d.dims().center(s[0], s[1], s[2]);
    CHECK(std::abs(d.at(s[0], s[1], s[2]) - testutil::brute_triangle_distance(p, a, b, c)) < 1e-6);
  }

  testutil::write_text(dir / "empty.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\n");
  CHECK(run({"distmap", (dir / "empty.obj").string(), (dir / "e.grid").string(), "--out-dir",
             (dir / "out").string()})
            .code == kExitInputError);
  CHECK(run({"distmap", (dir / "tri.obj").string(), (dir / "e.grid").string(), "--dims", "4,4",
             "--out-dir", (dir / "out").string()})
            .code == kExitInputError);
}

TEST_CASE("deform") {
  TempDir dir("cli_deform");
  const TriangleMesh t = make_icosphere(2);
  save_mesh(dir / "t.ply", t);
  testutil::write_text(dir / "lin.json", linear_transform_to_json(LinearTransform{}).dump());
  write_grid(dir / "zero.grid", VectorField(GridDims::cube(8)));
  const Run r = run({"deform", (dir / "t.ply").string(), (dir / "lin.json").string(), (dir / "zero.grid").string(),
                     (dir / "o.ply").string(), "--out-dir", (dir / "out").string()});
  CHECK(r.code == kExitOk);
  CHECK(load_mesh(dir / "o.ply").vertices() == t.vertices());

  // Header promises more voxels than the file holds.
  std::string bytes = testutil::read_text(dir / "zero.grid");
  bytes.resize(bytes.size() - 12);
  std::ofstream(dir / "short.grid", std::ios::binary) << bytes;
  CHECK(run({"deform", (dir / "t.ply").string(), (dir / "lin.json").string(), (dir / "short.grid").string(),
             (dir / "o2.ply").string(), "--out-dir", (dir / "out").string()})
            .code == kExitInputError);
  // A scalar grid is not a field.
  write_grid(dir / "scalar.grid", ScalarField(GridDims::cube(8)));
  CHECK(run({"deform", (dir / "t.ply").string(), (dir / "lin.json").string(), (dir / "scalar.grid").string(),
             (dir / "o3.ply").string(), "--out-dir", (dir / "out").string()})
            .code == kExitInputError);
}

TEST_CASE("metrics") {
  TempDir dir("cli_metrics");
  const double spacing = 1.5;
  const int n = 40;
  const Vec3 c(0.45, 0.5, 0.5);
  save_mesh(dir / "a.obj", make_icosphere(3, c, 0.2, "LV"));
  save_mesh(dir / "b.obj", make_icosphere(3, c + Vec3(4.0 / n, 0, 0), 0.2, "LV"));
  save_mesh(dir / "ao.obj", make_icosphere(3, c, 0.2, "Ao"));

  const std::vector<std::string> common{"--dims", std::to_string(n), "--spacing", "1.5"};
  auto metrics = [&](const std::string& x, const std::string& y, const std::string& out) {
    std::vector<std::string> args{"metrics", (dir / x).string(), (dir / y).string(), "--out-dir", (dir / out).string()};
    args.insert(args.end(), common.begin(), common.end());
    return run(args);
  };

  REQUIRE(metrics("a.obj", "a.obj", "self").code == kExitOk);
  const json self = read_json(dir / "self" / "metrics.json");
  CHECK(self["structures"]["LV"]["dice"] == 1.0);
  CHECK(self["whole_heart"]["hausdorff"] == 0.0);

  REQUIRE(metrics("a.obj", "b.obj", "shift").code == kExitOk);
  const json shift = read_json(dir / "shift" / "metrics.json");
  CHECK(std::abs(shift["structures"]["LV"]["hausdorff"].get<double>() - 4 * spacing) < 1e-9);
  CHECK(shift["structures"]["LV"]["dice"].get<double>() < 1.0);

  CHECK(metrics("a.obj", "ao.obj", "mismatch").code == kExitInputError);

  testutil::write_text(dir / "open.obj", "g LA\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
  const Run open = metrics("open.obj", "open.obj", "open");
  CHECK(open.code == kExitInputError);
  CHECK(open.err.find("LA") != std::string::npos);
}

TEST_CASE("parse dims") {
  CHECK(parse_dims("64").nx == 64);
  CHECK(parse_dims("64,48,32").ny == 48);
  CHECK(parse_dims("64x48x32").nz == 32);
  CHECK_THROWS(parse_dims("64,48"));
  CHECK_THROWS(parse_dims("sixty"));
  CHECK_THROWS(parse_dims("0"));
}
