#include "manifest.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <memory>

#include "mnem/error.hpp"
#include "mnem/io.hpp"

namespace mnem::cli {

std::string sha256_file(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("sha256 failed for " + path.string());
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

RunManifest::RunManifest(std::string command, std::vector<std::string> argv)
    : command_(std::move(command)), argv_(std::move(argv)) {}

nlohmann::json RunManifest::finish() const {
  auto digests = [](const std::vector<std::filesystem::path>& paths) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& p : paths) {
      if (std::filesystem::is_regular_file(p)) j[p.string()] = sha256_file(p);
    }
    return j;
  };
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  return nlohmann::json{{"command", command_},         {"argv", argv_},
                        {"config", config_},           {"seed", seed_},
                        {"inputs", digests(inputs_)},  {"outputs", digests(outputs_)},
                        {"version", kToolkitVersion}, {"wall_seconds", secs}};
}

}  // namespace mnem::cli
