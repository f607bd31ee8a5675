#include "ctx3d/cli/stage.hpp"

#include <algorithm>
#include <atomic>
#include <unistd.h>

#include "ctx3d/binary_io.hpp"

namespace ctx3d::cli {
namespace fs = std::filesystem;

namespace {
std::atomic<unsigned> g_stage_counter{0};
}

OutputStage::OutputStage(fs::path base_dir) : base_(std::move(base_dir)) {
  if (base_.empty()) base_ = ".";
  // outermost directory this stage brings into existence, removed again on rollback
  for (fs::path p = fs::absolute(base_); !p.empty() && !fs::exists(p); p = p.parent_path()) {
    created_root_ = p;
    if (p == p.parent_path()) break;
  }
  fs::create_directories(base_);
  tmp_ = base_ / (".ctx3d-stage-" + std::to_string(::getpid()) + "-" + std::to_string(g_stage_counter++));
  fs::remove_all(tmp_);
  fs::create_directories(tmp_);
}

OutputStage::~OutputStage() {
  std::error_code ec;
  fs::remove_all(tmp_, ec);
  if (!committed_ && !created_root_.empty()) fs::remove_all(created_root_, ec);
}

fs::path OutputStage::path(const fs::path& relative) {
  const fs::path p = tmp_ / relative;
  fs::create_directories(p.parent_path());
  return p;
}

void OutputStage::write(const fs::path& relative, const std::string& bytes) { io::write_file_atomic(path(relative), bytes); }

std::vector<std::pair<std::string, std::uint64_t>> OutputStage::hashes() const {
  std::vector<std::pair<std::string, std::uint64_t>> out;
  for (const auto& e : fs::recursive_directory_iterator(tmp_)) {
    if (!e.is_regular_file()) continue;
    out.emplace_back(fs::relative(e.path(), tmp_).generic_string(), io::fnv1a64(io::read_file(e.path())));
  }
  std::sort(out.begin(), out.end());
  return out;
}

void OutputStage::commit() {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(tmp_)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), tmp_));
  }
  std::sort(files.begin(), files.end());
  for (const auto& rel : files) {
    const fs::path dst = base_ / rel;
    fs::create_directories(dst.parent_path());
    fs::rename(tmp_ / rel, dst);
  }
  committed_ = true;
}

}  // namespace ctx3d::cli
