#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "fraudability/common.hpp"

namespace fraudability {

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCategory::io, "cannot write " + path);
  out << text;
  require(out.good(), ErrorCategory::io, "write failed: " + path);
}

inline void write_json(const std::string& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

/// Missing files are reported as missing artifacts, unreadable JSON as parse errors.
inline nlohmann::json read_json(const std::string& path) {
  require(std::filesystem::exists(path), ErrorCategory::missing_artifact, "missing artifact: " + path);
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCategory::io, "cannot read " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::parse, path + ": " + e.what());
  }
}

}  // namespace fraudability
