#include "harp/manifest.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>

#include "harp/errors.hpp"

namespace harp {

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

nlohmann::json to_json(const RunManifest& m) {
    return nlohmann::json{{"command", m.command},
                          {"parameters", m.parameters},
                          {"input_digests", m.input_digests},
                          {"tool_version", m.tool_version},
                          {"timestamp", m.timestamp},
                          {"outputs", m.outputs}};
}

std::string write_manifest(const RunManifest& m, const std::string& dir) {
    const auto path = (std::filesystem::path(dir) / "manifest.json").string();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << to_json(m).dump(2) << '\n';
    if (!out) throw IoError("failed writing " + path);
    return path;
}

}  // namespace harp
