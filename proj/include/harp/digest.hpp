#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace harp {

/// Lower-case hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::string& path);

}  // namespace harp
