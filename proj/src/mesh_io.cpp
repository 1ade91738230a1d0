#include "meshflow/mesh_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "json.hpp"

#include "meshflow/error.hpp"

namespace meshflow {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "PLY I/O assumes a little-endian host");

namespace {

std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

struct LabelTable {
  std::vector<std::uint32_t> face_labels;
  std::vector<std::string> names;
};

// {"LV": [[first, last_exclusive], ...], ...}
LabelTable read_sidecar(const fs::path& path, std::size_t num_faces) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open label sidecar " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw FormatError(path.string() + ": expected a JSON object");
  LabelTable t;
  std::vector<std::int64_t> assigned(num_faces, -1);
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto label = static_cast<std::uint32_t>(t.names.size());
    t.names.push_back(it.key());
    if (!it.value().is_array()) throw FormatError(path.string() + ": ranges must be arrays");
    for (const auto& r : it.value()) {
      if (!r.is_array() || r.size() != 2 || !r[0].is_number_integer() ||
          !r[1].is_number_integer()) {
        throw FormatError(path.string() + ": face range must be [first, last_exclusive]");
      }
      const auto a = r[0].get<std::int64_t>(), b = r[1].get<std::int64_t>();
      if (a < 0 || b < a || static_cast<std::size_t>(b) > num_faces) {
        throw ValidationError(path.string() + ": face range [" + std::to_string(a) + ", " +
                              std::to_string(b) + ") outside 0.." + std::to_string(num_faces));
      }
      for (auto f = a; f < b; ++f) {
        if (assigned[f] >= 0) {
          throw ValidationError(path.string() + ": face " + std::to_string(f) +
                                " assigned to two structures");
        }
        assigned[f] = label;
      }
    }
  }
  t.face_labels.resize(num_faces);
  for (std::size_t f = 0; f < num_faces; ++f) {
    if (assigned[f] < 0) {
      throw ValidationError(path.string() + ": face " + std::to_string(f) + " has no label");
    }
    t.face_labels[f] = static_cast<std::uint32_t>(assigned[f]);
  }
  return t;
}

void write_sidecar(const fs::path& path, const TriangleMesh& mesh) {
  std::vector<json> ranges(mesh.structure_names().size(), json::array());
  const auto& labels = mesh.face_labels();
  std::size_t f = 0;
  while (f < labels.size()) {
    std::size_t g = f;
    while (g < labels.size() && labels[g] == labels[f]) ++g;
    ranges[labels[f]].push_back({f, g});
    f = g;
  }
  json j = json::object();
  for (std::size_t s = 0; s < ranges.size(); ++s) j[mesh.structure_names()[s]] = ranges[s];
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

bool needs_sidecar(const TriangleMesh& mesh) {
  return mesh.structure_names().size() != 1 || mesh.structure_names()[0] != "mesh";
}

}  // namespace

fs::path label_sidecar_path(const fs::path& mesh_path) {
  return fs::path(mesh_path.string() + ".labels.json");
}

// ---------------------------------------------------------------------------
// OBJ

TriangleMesh read_obj(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Vec3> verts;
  std::vector<Face> faces;
  std::vector<std::uint32_t> labels;
  std::vector<std::string> names;
  std::int64_t current = -1;
  bool saw_group = false;

  auto fail = [&](std::size_t line, const std::string& msg) {
    throw FormatError(path.string() + ":" + std::to_string(line) + ": " + msg);
  };

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z)) fail(lineno, "malformed vertex");
      verts.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<std::int64_t> idx;
      std::string tok;
      while (ls >> tok) {
        const auto slash = tok.find('/');
        const std::string head = tok.substr(0, slash);
        std::int64_t i = 0;
        try {
          std::size_t used = 0;
          i = std::stoll(head, &used);
          if (used != head.size()) fail(lineno, "malformed face index '" + tok + "'");
        } catch (const std::logic_error&) {
          fail(lineno, "malformed face index '" + tok + "'");
        }
        if (i == 0) fail(lineno, "face index 0 is invalid in OBJ");
        // Negative indices are relative to the vertices read so far.
        idx.push_back(i > 0 ? i - 1 : static_cast<std::int64_t>(verts.size()) + i);
      }
      if (idx.size() < 3) fail(lineno, "face with fewer than 3 vertices");
      if (current < 0) {
        names.push_back("mesh");
        current = static_cast<std::int64_t>(names.size() - 1);
      }
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) {
        for (auto i : {idx[0], idx[k], idx[k + 1]}) {
          if (i < 0) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                                  ": face references a vertex before the first one");
          }
        }
        faces.push_back({static_cast<std::uint32_t>(idx[0]), static_cast<std::uint32_t>(idx[k]),
                         static_cast<std::uint32_t>(idx[k + 1])});
        labels.push_back(static_cast<std::uint32_t>(current));
      }
    } else if (tag == "o" || tag == "g") {
      std::string name;
      std::getline(ls >> std::ws, name);
      if (name.empty()) name = "mesh";
      saw_group = true;
      auto it = std::find(names.begin(), names.end(), name);
      if (it == names.end()) {
        names.push_back(name);
        current = static_cast<std::int64_t>(names.size() - 1);
      } else {
        current = it - names.begin();
      }
    }
    // vn, vt, s, usemtl, mtllib: ignored
  }

  // Drop structure names that never received a face (e.g. an `o` followed by `g`).
  std::vector<std::int64_t> remap(names.size(), -1);
  std::vector<std::string> used_names;
  for (auto l : labels) {
    if (remap[l] < 0) {
      remap[l] = static_cast<std::int64_t>(used_names.size());
      used_names.push_back(names[l]);
    }
  }
  for (auto& l : labels) l = static_cast<std::uint32_t>(remap[l]);

  const fs::path sidecar = label_sidecar_path(path);
  if (!saw_group && fs::exists(sidecar)) {
    LabelTable t = read_sidecar(sidecar, faces.size());
    return TriangleMesh(std::move(verts), std::move(faces), std::move(t.face_labels),
                        std::move(t.names));
  }
  return TriangleMesh(std::move(verts), std::move(faces), std::move(labels),
                      std::move(used_names));
}

void write_obj(const fs::path& path, const TriangleMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  for (const auto& v : mesh.vertices()) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  // Faces are grouped by structure; group order follows the structure table.
  for (std::uint32_t s = 0; s < mesh.structure_names().size(); ++s) {
    out << "g " << mesh.structure_names()[s] << '\n';
    for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
      if (mesh.face_labels()[f] != s) continue;
      const Face& t = mesh.faces()[f];
      out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Binary little-endian PLY

namespace {

std::size_t ply_type_size(const std::string& t) {
  static const std::map<std::string, std::size_t> sizes{
      {"char", 1},  {"uchar", 1},  {"int8", 1},   {"uint8", 1},   {"short", 2},  {"ushort", 2},
      {"int16", 2}, {"uint16", 2}, {"int", 4},    {"uint", 4},    {"int32", 4},  {"uint32", 4},
      {"float", 4}, {"float32", 4}, {"double", 8}, {"float64", 8}};
  auto it = sizes.find(t);
  return it == sizes.end() ? 0 : it->second;
}

double ply_read_scalar(const char* p, const std::string& t) {
  auto rd = [p]<typename T>(T) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return static_cast<double>(v);
  };
  if (t == "char" || t == "int8") return rd(std::int8_t{});
  if (t == "uchar" || t == "uint8") return rd(std::uint8_t{});
  if (t == "short" || t == "int16") return rd(std::int16_t{});
  if (t == "ushort" || t == "uint16") return rd(std::uint16_t{});
  if (t == "int" || t == "int32") return rd(std::int32_t{});
  if (t == "uint" || t == "uint32") return rd(std::uint32_t{});
  if (t == "float" || t == "float32") return rd(float{});
  return rd(double{});
}

struct PlyProperty {
  std::string name;
  std::string type;        // scalar type, or index type for lists
  std::string count_type;  // empty for scalars
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

}  // namespace

TriangleMesh read_ply(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  auto fail = [&](std::size_t off, const std::string& msg) {
    throw FormatError(path.string() + ": byte " + std::to_string(off) + ": " + msg);
  };

  std::size_t pos = 0;
  auto next_line = [&]() {
    const std::size_t start = pos;
    while (pos < buf.size() && buf[pos] != '\n') ++pos;
    if (pos >= buf.size()) fail(start, "unterminated PLY header");
    std::string l(buf.data() + start, pos - start);
    ++pos;
    if (!l.empty() && l.back() == '\r') l.pop_back();
    return l;
  };

  if (next_line() != "ply") fail(0, "missing 'ply' magic");
  std::vector<PlyElement> elements;
  bool format_ok = false;
  while (true) {
    const std::size_t line_start = pos;
    std::istringstream ls(next_line());
    std::string tag;
    ls >> tag;
    if (tag == "end_header") break;
    if (tag == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "binary_little_endian") fail(line_start, "unsupported PLY format '" + fmt + "'");
      format_ok = true;
    } else if (tag == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      if (!ls) fail(line_start, "malformed element line");
      elements.push_back(e);
    } else if (tag == "property") {
      if (elements.empty()) fail(line_start, "property before element");
      PlyProperty p;
      std::string t;
      ls >> t;
      if (t == "list") {
        ls >> p.count_type >> p.type >> p.name;
        if (!ply_type_size(p.count_type)) fail(line_start, "bad list count type");
      } else {
        p.type = t;
        ls >> p.name;
      }
      if (!ls || !ply_type_size(p.type)) fail(line_start, "malformed property line");
      elements.back().props.push_back(p);
    }
    // comment / obj_info: ignored
  }
  if (!format_ok) fail(0, "missing format line");

  std::vector<Vec3> verts;
  std::vector<Face> faces;
  auto need = [&](std::size_t n) {
    if (pos + n > buf.size()) fail(pos, "unexpected end of data");
  };
  for (const auto& e : elements) {
    const bool is_vertex = e.name == "vertex";
    const bool is_face = e.name == "face";
    for (std::size_t i = 0; i < e.count; ++i) {
      Vec3 v = Vec3::Zero();
      for (const auto& p : e.props) {
        if (p.count_type.empty()) {
          const std::size_t sz = ply_type_size(p.type);
          need(sz);
          if (is_vertex) {
            const double val = ply_read_scalar(buf.data() + pos, p.type);
            if (p.name == "x") v.x() = val;
            if (p.name == "y") v.y() = val;
            if (p.name == "z") v.z() = val;
          }
          pos += sz;
        } else {
          const std::size_t csz = ply_type_size(p.count_type), isz = ply_type_size(p.type);
          need(csz);
          const double cnt_d = ply_read_scalar(buf.data() + pos, p.count_type);
          if (cnt_d < 0) fail(pos, "negative list length");
          const auto cnt = static_cast<std::size_t>(cnt_d);
          const std::size_t list_start = pos;
          pos += csz;
          need(cnt * isz);
          if (is_face && (p.name == "vertex_indices" || p.name == "vertex_index")) {
            if (cnt < 3) fail(list_start, "face with fewer than 3 vertices");
            std::vector<std::int64_t> idx(cnt);
            for (std::size_t k = 0; k < cnt; ++k) {
              idx[k] = static_cast<std::int64_t>(ply_read_scalar(buf.data() + pos + k * isz, p.type));
              if (idx[k] < 0) {
                throw ValidationError(path.string() + ": byte " + std::to_string(list_start) +
                                      ": negative vertex index");
              }
            }
            for (std::size_t k = 1; k + 1 < cnt; ++k) {
              faces.push_back({static_cast<std::uint32_t>(idx[0]),
                               static_cast<std::uint32_t>(idx[k]),
                               static_cast<std::uint32_t>(idx[k + 1])});
            }
          }
          pos += cnt * isz;
        }
      }
      if (is_vertex) verts.push_back(v);
    }
  }

  const fs::path sidecar = label_sidecar_path(path);
  if (fs::exists(sidecar)) {
    LabelTable t = read_sidecar(sidecar, faces.size());
    return TriangleMesh(std::move(verts), std::move(faces), std::move(t.face_labels),
                        std::move(t.names));
  }
  return TriangleMesh(std::move(verts), std::move(faces));
}

void write_ply(const fs::path& path, const TriangleMesh& mesh) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << mesh.num_vertices() << "\n"
      << "property double x\nproperty double y\nproperty double z\n"
      << "element face " << mesh.num_faces() << "\n"
      << "property list uchar uint vertex_indices\nend_header\n";
  for (const auto& v : mesh.vertices()) {
    const double xyz[3] = {v.x(), v.y(), v.z()};
    out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
  }
  for (const auto& f : mesh.faces()) {
    const std::uint8_t n = 3;
    out.write(reinterpret_cast<const char*>(&n), 1);
    out.write(reinterpret_cast<const char*>(f.data()), 3 * sizeof(std::uint32_t));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------

TriangleMesh load_mesh(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("no such file: " + path.string());
  const std::string ext = lower_ext(path);
  if (ext == ".obj") return read_obj(path);
  if (ext == ".ply") return read_ply(path);
  throw FormatError(path.string() + ": unsupported mesh extension '" + ext + "'");
}

void save_mesh(const fs::path& path, const TriangleMesh& mesh) {
  const std::string ext = lower_ext(path);
  if (ext == ".obj") {
    write_obj(path, mesh);
  } else if (ext == ".ply") {
    write_ply(path, mesh);
    const fs::path sidecar = label_sidecar_path(path);
    if (needs_sidecar(mesh)) {
      write_sidecar(sidecar, mesh);
    } else if (fs::exists(sidecar)) {
      fs::remove(sidecar);
    }
  } else {
    throw FormatError(path.string() + ": unsupported mesh extension '" + ext + "'");
  }
}

}  // namespace meshflow
