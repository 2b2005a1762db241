#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mobman/scenario.hpp"
#include "mobman/simulation.hpp"

#ifndef MOBMAN_SCENARIO_DIR
#define MOBMAN_SCENARIO_DIR "scenarios"
#endif

namespace testing_support {

inline std::string scenario_path(const std::string& name) {
  return std::string(MOBMAN_SCENARIO_DIR) + "/" + name + ".json";
}

inline mobman::Scenario load(const std::string& name) { return mobman::load_scenario(scenario_path(name)); }

inline std::shared_ptr<const mobman::ReferenceMap> map_for(const mobman::Scenario& s, std::uint64_t seed) {
  return std::make_shared<mobman::ReferenceMap>(mobman::build_map_for(s, s.effective_map_seed(seed)));
}

/// Axis-aligned rectangular room as four inward-facing walls.
inline mobman::WorldModel box_room(double w, double h) {
  mobman::WorldModel m;
  m.segments = {{{0, 0}, {w, 0}}, {{w, 0}, {w, h}}, {{w, h}, {0, h}}, {{0, h}, {0, 0}}};
  return m;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("mobman-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& child = "") const { return child.empty() ? path_.string() : (path_ / child).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_support
