#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "meshflow/grid.hpp"

namespace meshflow {

inline constexpr const char* kToolVersion = "0.1.0";

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitInputError = 1,
  kExitNotConverged = 2,
  kExitQualityGate = 3,
};

struct GlobalOptions {
  std::filesystem::path out_dir = ".";
  std::optional<std::filesystem::path> config;
  int threads = 0;  // 0 leaves the OpenMP default
  std::optional<std::uint64_t> seed;
};

/// Hex SHA-256 of a file's contents. Throws IoError if unreadable.
std::string sha256_file(const std::filesystem::path& path);

/// Record of one command invocation, written as manifest.json next to the outputs.
class RunManifest {
 public:
  explicit RunManifest(std::string command);

  void add_input(const std::filesystem::path& path);
  void add_output(const std::filesystem::path& path);
  void set_config(nlohmann::json config) { config_ = std::move(config); }

  nlohmann::json to_json() const;
  /// Writes `<dir>/manifest.json`.
  void write(const std::filesystem::path& dir) const;

 private:
  struct Entry {
    std::string path;
    std::string sha256;
  };
  std::string command_;
  std::vector<Entry> inputs_, outputs_;
  nlohmann::json config_;
  std::chrono::steady_clock::time_point start_;
};

/// Parse "64" or "64,48,32" (also "64x48x32").
GridDims parse_dims(const std::string& text);

int cmd_fit(const std::filesystem::path& template_path, const std::filesystem::path& target_path,
            const GlobalOptions& opts);
int cmd_deform(const std::filesystem::path& template_path, const std::filesystem::path& linear_json,
               const std::filesystem::path& field_path, const std::filesystem::path& out_path,
               const GlobalOptions& opts);
int cmd_metrics(const std::filesystem::path& mesh_a, const std::filesystem::path& mesh_b,
                const GridDims& dims, double spacing, const GlobalOptions& opts);
int cmd_check(const std::filesystem::path& mesh_path, const GlobalOptions& opts);
int cmd_distmap(const std::filesystem::path& mesh_path, const GridDims& dims,
                const std::filesystem::path& out_path, const GlobalOptions& opts);

/// Parse arguments and dispatch. Never throws; errors map to exit codes.
int run_cli(int argc, const char* const* argv);

}  // namespace meshflow
