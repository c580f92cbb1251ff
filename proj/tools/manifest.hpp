#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mnem::cli {

inline constexpr const char* kToolkitVersion = "0.1.0";

std::string sha256_file(const std::filesystem::path& path);

// Collected while a command runs, written when it finishes.
class RunManifest {
 public:
  RunManifest(std::string command, std::vector<std::string> argv);

  void config(nlohmann::json resolved) { config_ = std::move(resolved); }
  void seed(std::uint64_t s) { seed_ = s; }
  void input(const std::filesystem::path& p) { inputs_.push_back(p); }
  void output(const std::filesystem::path& p) { outputs_.push_back(p); }
  const std::vector<std::filesystem::path>& outputs() const { return outputs_; }

  // Digests are taken now, so call after the outputs are written.
  nlohmann::json finish() const;

 private:
  std::string command_;
  std::vector<std::string> argv_;
  nlohmann::json config_ = nlohmann::json::object();
  std::uint64_t seed_ = 0;
  std::vector<std::filesystem::path> inputs_, outputs_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace mnem::cli
