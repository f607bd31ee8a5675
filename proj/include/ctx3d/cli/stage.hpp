#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace ctx3d::cli {

/// Collects a command's outputs in a hidden directory next to their final
/// location and moves them into place only on commit(). An uncommitted stage
/// removes everything it wrote, including directories it created.
class OutputStage {
 public:
  explicit OutputStage(std::filesystem::path base_dir);
  ~OutputStage();
  OutputStage(const OutputStage&) = delete;
  OutputStage& operator=(const OutputStage&) = delete;

  // Staged location for `relative` (a path below base_dir).
  std::filesystem::path path(const std::filesystem::path& relative);
  void write(const std::filesystem::path& relative, const std::string& bytes);

  // Every staged file (relative path, FNV-1a 64 hash), sorted by path.
  std::vector<std::pair<std::string, std::uint64_t>> hashes() const;

  void commit();

  const std::filesystem::path& base_dir() const { return base_; }

 private:
  std::filesystem::path base_;
  std::filesystem::path tmp_;
  std::filesystem::path created_root_;
  bool committed_ = false;
};

}  // namespace ctx3d::cli
