#include <cstring>
#include <fstream>

#include "meshflow/error.hpp"
#include "meshflow/grid.hpp"

namespace meshflow {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[12] = {'M', 'E', 'S', 'H', 'F', 'L', 'O', 'W', 'G', 'R', 'I', 'D'};
constexpr std::size_t kHeaderBytes = 32;

void put_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t get_u32(const std::vector<char>& buf, std::size_t off) {
  std::uint32_t v;
  std::memcpy(&v, buf.data() + off, sizeof(v));
  return v;
}

void write_raw(const fs::path& path, const GridDims& dims, std::uint32_t channels,
               const std::vector<float>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put_u32(out, kGridFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(dims.nx));
  put_u32(out, static_cast<std::uint32_t>(dims.ny));
  put_u32(out, static_cast<std::uint32_t>(dims.nz));
  put_u32(out, channels);
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!out) throw IoError("failed writing " + path.string());
}

struct RawGrid {
  GridDims dims;
  std::uint32_t channels;
  std::vector<float> values;
};

RawGrid read_raw(const fs::path& path, std::uint32_t expected_channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < kHeaderBytes) throw FormatError(path.string() + ": truncated grid header");
  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(path.string() + ": bad grid magic");
  }
  const std::uint32_t version = get_u32(buf, 12);
  if (version != kGridFormatVersion) {
    throw FormatError(path.string() + ": unsupported grid version " + std::to_string(version));
  }
  RawGrid g;
  const std::uint32_t nx = get_u32(buf, 16), ny = get_u32(buf, 20), nz = get_u32(buf, 24);
  g.channels = get_u32(buf, 28);
  if (nx == 0 || ny == 0 || nz == 0 || nx > (1u << 16) || ny > (1u << 16) || nz > (1u << 16)) {
    throw FormatError(path.string() + ": invalid grid dims in header");
  }
  if (g.channels != 1 && g.channels != 3) {
    throw FormatError(path.string() + ": channel count must be 1 or 3, got " +
                      std::to_string(g.channels));
  }
  if (g.channels != expected_channels) {
    throw FormatError(path.string() + ": expected " + std::to_string(expected_channels) +
                      " channel(s), file has " + std::to_string(g.channels));
  }
  g.dims = {static_cast<int>(nx), static_cast<int>(ny), static_cast<int>(nz)};
  const std::size_t n = g.dims.count() * g.channels;
  if (buf.size() - kHeaderBytes != n * sizeof(float)) {
    throw FormatError(path.string() + ": data length " + std::to_string(buf.size() - kHeaderBytes) +
                      " bytes does not match header dims (" + std::to_string(n * sizeof(float)) +
                      " bytes expected)");
  }
  g.values.resize(n);
  std::memcpy(g.values.data(), buf.data() + kHeaderBytes, n * sizeof(float));
  return g;
}

}  // namespace

void write_grid(const fs::path& path, const ScalarField& field) {
  std::vector<float> v(field.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(field[i]);
  write_raw(path, field.dims(), 1, v);
}

void write_grid(const fs::path& path, const VectorField& field) {
  std::vector<float> v(field.size() * 3);
  for (std::size_t i = 0; i < field.size(); ++i) {
    for (int c = 0; c < 3; ++c) v[3 * i + c] = static_cast<float>(field[i][c]);
  }
  write_raw(path, field.dims(), 3, v);
}

ScalarField read_scalar_grid(const fs::path& path) {
  RawGrid g = read_raw(path, 1);
  std::vector<double> data(g.values.begin(), g.values.end());
  return ScalarField(g.dims, std::move(data));
}

VectorField read_vector_grid(const fs::path& path) {
  RawGrid g = read_raw(path, 3);
  std::vector<Vec3> data(g.dims.count());
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = Vec3(g.values[3 * i], g.values[3 * i + 1], g.values[3 * i + 2]);
  }
  return VectorField(g.dims, std::move(data));
}

}  // namespace meshflow
