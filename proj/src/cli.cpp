#include "meshflow/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <openssl/evp.h>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"

#include "meshflow/distance.hpp"
#include "meshflow/error.hpp"
#include "meshflow/fitter.hpp"
#include "meshflow/mesh_io.hpp"
#include "meshflow/quality.hpp"

namespace meshflow {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw IoError("sha256 unavailable");
  }
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  }
  return os.str();
}

RunManifest::RunManifest(std::string command)
    : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}

void RunManifest::add_input(const fs::path& path) {
  inputs_.push_back({path.string(), sha256_file(path)});
}

void RunManifest::add_output(const fs::path& path) {
  outputs_.push_back({path.string(), sha256_file(path)});
}

json RunManifest::to_json() const {
  auto entries = [](const std::vector<Entry>& v) {
    json a = json::array();
    for (const auto& e : v) a.push_back({{"path", e.path}, {"sha256", e.sha256}});
    return a;
  };
  const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start_;
  return {{"schema_version", 1},
          {"command", command_},
          {"inputs", entries(inputs_)},
          {"config", config_},
          {"outputs", entries(outputs_)},
          {"wall_seconds", dt.count()},
          {"tool_version", kToolVersion}};
}

void RunManifest::write(const fs::path& dir) const {
  const fs::path p = dir / "manifest.json";
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << to_json().dump(2) << '\n';
}

GridDims parse_dims(const std::string& text) {
  std::vector<int> v;
  std::string tok;
  std::string s = text;
  for (char& c : s) {
    if (c == 'x' || c == 'X') c = ',';
  }
  std::istringstream is(s);
  while (std::getline(is, tok, ',')) {
    try {
      std::size_t used = 0;
      const int n = std::stoi(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      v.push_back(n);
    } catch (const std::exception&) {
      throw ParameterError("bad dims '" + text + "'");
    }
  }
  GridDims d;
  if (v.size() == 1) {
    d = GridDims::cube(v[0]);
  } else if (v.size() == 3) {
    d = {v[0], v[1], v[2]};
  } else {
    throw ParameterError("dims must be N or NX,NY,NZ, got '" + text + "'");
  }
  d.validate();
  return d;
}

namespace {

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

void prepare_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

FitConfig load_config(const GlobalOptions& opts) {
  FitConfig cfg = opts.config ? load_fit_config(*opts.config) : FitConfig{};
  if (opts.seed) cfg.seed = *opts.seed;
  return cfg;
}

std::string mesh_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext == ".ply" ? ".ply" : ".obj";
}

json report_to_json(const LossReport& r) {
  const LossTerms& t = r.terms;
  return {{"total", r.total},
          {"chamfer", t.chamfer},
          {"chamfer_normal", t.chamfer_normal},
          {"volume", t.volume},
          {"edge", t.edge},
          {"face_normal", t.face_normal},
          {"laplacian", t.laplacian},
          {"chamfer_by_structure", r.chamfer_by_structure}};
}

void add_mesh_input(RunManifest& m, const fs::path& p) {
  m.add_input(p);
  const fs::path side = label_sidecar_path(p);
  if (fs::exists(side)) m.add_input(side);
}

void add_mesh_output(RunManifest& m, const fs::path& p) {
  m.add_output(p);
  const fs::path side = label_sidecar_path(p);
  if (fs::exists(side)) m.add_output(side);
}

}  // namespace

int cmd_fit(const fs::path& template_path, const fs::path& target_path, const GlobalOptions& opts) {
  RunManifest manifest("fit");
  const FitConfig cfg = load_config(opts);
  const TriangleMesh tmpl = load_mesh(template_path);
  const TriangleMesh target = load_mesh(target_path);
  add_mesh_input(manifest, template_path);
  add_mesh_input(manifest, target_path);
  if (opts.config) manifest.add_input(*opts.config);
  manifest.set_config(fit_config_to_json(cfg));
  prepare_out_dir(opts.out_dir);

  const LinearFit lin = fit_linear(tmpl, target, cfg);
  const FitResult res = fit_flow(tmpl, target, lin.transform, cfg);
  const TriangleMesh deformed = tmpl.with_vertices(res.trace.final_positions);

  const fs::path mesh_out = opts.out_dir / ("deformed" + mesh_extension(template_path));
  save_mesh(mesh_out, deformed);
  add_mesh_output(manifest, mesh_out);

  const fs::path field_out = opts.out_dir / "field.grid";
  write_grid(field_out, res.field);
  manifest.add_output(field_out);

  const fs::path linear_out = opts.out_dir / "linear.json";
  write_json(linear_out, linear_transform_to_json(res.linear));
  manifest.add_output(linear_out);

  json hist;
  hist["schema_version"] = 1;
  hist["linear"] = {{"chamfer", lin.loss_history},
                    {"iterations", lin.iterations},
                    {"converged", lin.converged}};
  json flow = json::array();
  for (const auto& r : res.loss_history) flow.push_back(report_to_json(r));
  hist["flow"] = {{"reports", flow}, {"iterations", res.iterations}, {"converged", res.converged}};
  const fs::path hist_out = opts.out_dir / "loss_history.json";
  write_json(hist_out, hist);
  manifest.add_output(hist_out);

  const fs::path sif_out = opts.out_dir / "sif_report.json";
  write_json(sif_out, sif_report_to_json(detect_self_intersections(deformed)));
  manifest.add_output(sif_out);

  manifest.write(opts.out_dir);
  return lin.converged && res.converged ? kExitOk : kExitNotConverged;
}

int cmd_deform(const fs::path& template_path, const fs::path& linear_json, const fs::path& field_path,
               const fs::path& out_path, const GlobalOptions& opts) {
  RunManifest manifest("deform");
  const FitConfig cfg = load_config(opts);
  const TriangleMesh tmpl = load_mesh(template_path);
  std::ifstream lin_in(linear_json);
  if (!lin_in) throw IoError("cannot read " + linear_json.string());
  json lj;
  try {
    lj = json::parse(lin_in);
  } catch (const json::parse_error& e) {
    throw FormatError(linear_json.string() + ": " + e.what());
  }
  const LinearTransform linear = linear_transform_from_json(lj);
  const VectorField field = read_vector_grid(field_path);
  add_mesh_input(manifest, template_path);
  manifest.add_input(linear_json);
  manifest.add_input(field_path);
  if (opts.config) manifest.add_input(*opts.config);
  manifest.set_config({{"integration", {{"n_steps", cfg.integration.n_steps},
                                        {"dt", cfg.integration.dt}}}});

  const TriangleMesh out = deform(tmpl, linear, field, cfg.integration);
  if (out_path.has_parent_path()) prepare_out_dir(out_path.parent_path());
  save_mesh(out_path, out);
  add_mesh_output(manifest, out_path);
  prepare_out_dir(opts.out_dir);
  manifest.write(opts.out_dir);
  return kExitOk;
}

int cmd_metrics(const fs::path& mesh_a, const fs::path& mesh_b, const GridDims& dims,
                double spacing, const GlobalOptions& opts) {
  if (!(spacing > 0.0) || !std::isfinite(spacing)) throw ParameterError("spacing must be positive");
  RunManifest manifest("metrics");
  const TriangleMesh a = load_mesh(mesh_a);
  const TriangleMesh b = load_mesh(mesh_b);
  add_mesh_input(manifest, mesh_a);
  add_mesh_input(manifest, mesh_b);
  manifest.set_config({{"dims", {dims.nx, dims.ny, dims.nz}}, {"spacing", spacing}});

  {
    std::vector<std::string> na = a.structure_names(), nb = b.structure_names();
    std::sort(na.begin(), na.end());
    std::sort(nb.begin(), nb.end());
    if (na != nb) throw ValidationError("meshes do not carry the same structure labels");
  }
  require_watertight(a);
  require_watertight(b);
  const Vec3 sp = Vec3::Constant(spacing);

  auto metrics_json = [&](const ScalarField& va, const ScalarField& vb) -> json {
    try {
      const SegmentationMetrics m = segmentation_metrics(va, vb, sp);
      return {{"dice", m.dice}, {"jaccard", m.jaccard}, {"assd", m.assd}, {"hausdorff", m.hausdorff}};
    } catch (const UndefinedMetricError& e) {
      return {{"undefined", e.what()}};
    }
  };

  json out;
  out["schema_version"] = 1;
  out["dims"] = {dims.nx, dims.ny, dims.nz};
  out["spacing"] = spacing;
  json per = json::object();
  ScalarField ua(dims), ub(dims);
  for (std::uint32_t s = 0; s < a.structure_names().size(); ++s) {
    const std::string& name = a.structure_names()[s];
    const ScalarField va = voxelize_structure(a, s, dims);
    const ScalarField vb = voxelize_structure(b, *b.find_structure(name), dims);
    for (std::size_t i = 0; i < ua.size(); ++i) {
      ua[i] = std::max(ua[i], va[i]);
      ub[i] = std::max(ub[i], vb[i]);
    }
    per[name] = metrics_json(va, vb);
  }
  out["structures"] = per;
  out["whole_heart"] = metrics_json(ua, ub);

  prepare_out_dir(opts.out_dir);
  const fs::path p = opts.out_dir / "metrics.json";
  write_json(p, out);
  manifest.add_output(p);
  manifest.write(opts.out_dir);
  return kExitOk;
}

int cmd_check(const fs::path& mesh_path, const GlobalOptions& opts) {
  RunManifest manifest("check");
  const TriangleMesh mesh = load_mesh(mesh_path);
  add_mesh_input(manifest, mesh_path);
  const SifReport report = detect_self_intersections(mesh);
  prepare_out_dir(opts.out_dir);
  const fs::path p = opts.out_dir / "sif_report.json";
  write_json(p, sif_report_to_json(report));
  manifest.add_output(p);
  manifest.write(opts.out_dir);
  std::cout << report.sif_faces.size() << " self-intersecting faces of " << report.total_faces
            << " (" << report.sif_percent << "%)\n";
  return report.sif_faces.empty() ? kExitOk : kExitQualityGate;
}

int cmd_distmap(const fs::path& mesh_path, const GridDims& dims, const fs::path& out_path,
                const GlobalOptions& opts) {
  RunManifest manifest("distmap");
  const TriangleMesh mesh = load_mesh(mesh_path);
  add_mesh_input(manifest, mesh_path);
  manifest.set_config({{"dims", {dims.nx, dims.ny, dims.nz}}});
  const ScalarField d = unsigned_distance_map(mesh, dims);
  if (out_path.has_parent_path()) prepare_out_dir(out_path.parent_path());
  write_grid(out_path, d);
  manifest.add_output(out_path);
  prepare_out_dir(opts.out_dir);
  manifest.write(opts.out_dir);
  return kExitOk;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Template mesh fitting with diffeomorphic flows", "meshflow"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  GlobalOptions opts;
  std::string config_path;
  std::uint64_t seed = 0;
  app.add_option("--out-dir", opts.out_dir, "Directory for outputs and manifest.json");
  auto* config_opt = app.add_option("--config", config_path, "Fit configuration (JSON)");
  app.add_option("--threads", opts.threads, "Worker threads (0: runtime default)")
      ->check(CLI::NonNegativeNumber);
  auto* seed_opt = app.add_option("--seed", seed, "Override the configured seed");

  std::string p1, p2, p3, p4, dims_text = "128";
  double spacing = 1.0;

  auto* fit = app.add_subcommand("fit", "Fit the template to a target (linear, then flow)");
  fit->add_option("template", p1)->required();
  fit->add_option("target", p2)->required();

  auto* def = app.add_subcommand("deform", "Apply a fitted transform and field to a mesh");
  def->add_option("template", p1)->required();
  def->add_option("linear", p2, "linear.json from a fit")->required();
  def->add_option("field", p3, "field.grid from a fit")->required();
  def->add_option("output", p4, "Output mesh (.obj or .ply)")->required();

  auto* met = app.add_subcommand("metrics", "Voxel overlap and surface distances of two meshes");
  met->add_option("mesh_a", p1)->required();
  met->add_option("mesh_b", p2)->required();
  met->add_option("--dims", dims_text, "N or NX,NY,NZ")->capture_default_str();
  met->add_option("--spacing", spacing, "Physical size of one voxel")->capture_default_str();

  auto* chk = app.add_subcommand("check", "Self-intersection report (exit 3 when any)");
  chk->add_option("mesh", p1)->required();

  auto* dist = app.add_subcommand("distmap", "Unsigned distance map on a voxel grid");
  dist->add_option("mesh", p1)->required();
  dist->add_option("output", p2)->required();
  dist->add_option("--dims", dims_text, "N or NX,NY,NZ")->capture_default_str();

  for (auto* sub : {fit, def, met, chk, dist}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInputError;
  }

  if (config_opt->count() > 0) opts.config = config_path;
  if (seed_opt->count() > 0) opts.seed = seed;
#ifdef _OPENMP
  if (opts.threads > 0) omp_set_num_threads(opts.threads);
#endif

  try {
    if (*fit) return cmd_fit(p1, p2, opts);
    if (*def) return cmd_deform(p1, p2, p3, p4, opts);
    if (*met) return cmd_metrics(p1, p2, parse_dims(dims_text), spacing, opts);
    if (*chk) return cmd_check(p1, opts);
    if (*dist) return cmd_distmap(p1, parse_dims(dims_text), p2, opts);
  } catch (const OptimizationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNotConverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInputError;
  }
  return kExitInputError;
}

}  // namespace meshflow
