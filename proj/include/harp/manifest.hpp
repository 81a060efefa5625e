#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace harp {

inline constexpr const char* kToolVersion = "0.1.0";

/// How an output directory was produced.
struct RunManifest {
    std::string command;
    nlohmann::json parameters = nlohmann::json::object();
    std::map<std::string, std::string> input_digests;
    std::string tool_version = kToolVersion;
    std::string timestamp;  // UTC, ISO 8601
    std::vector<std::string> outputs;
};

std::string utc_timestamp();
nlohmann::json to_json(const RunManifest& m);

/// Writes `<dir>/manifest.json`, replacing any previous one.
std::string write_manifest(const RunManifest& m, const std::string& dir);

}  // namespace harp
