#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "dmmcs/error.hpp"

#ifndef DMMCS_VERSION
#define DMMCS_VERSION "0.0.0"
#endif

namespace dmmcs {

inline constexpr const char* kEngineVersion = DMMCS_VERSION;

/// Hex SHA-256 of a file's bytes.
inline std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "' for hashing");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 15];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xF];
  }
  return out;
}

/// Provenance record written next to every command output.
struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, std::string> input_digests;  // path -> sha256
  std::map<std::string, std::string> output_digests;
  std::uint64_t seed = 0;
  std::map<std::string, double> timings_ms;  // only filled with --timing

  void add_input(const std::string& path) { input_digests[path] = sha256_file(path); }
  void add_output(const std::string& path) { output_digests[path] = sha256_file(path); }

  nlohmann::json to_json() const {
    nlohmann::json j{{"command", command},
                     {"config", config},
                     {"inputs", input_digests},
                     {"outputs", output_digests},
                     {"seed", seed},
                     {"engine_version", kEngineVersion}};
    if (!timings_ms.empty()) j["timings_ms"] = timings_ms;
    return j;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write manifest '" + path + "'");
    out << to_json().dump(2) << '\n';
  }
};

/// Wall-clock milliseconds since construction.
class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace dmmcs
