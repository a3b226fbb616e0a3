#pragma once

#include <string>
#include <string_view>

namespace duc {

// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view data);
// Throws IoError when the file cannot be read.
std::string sha256_file(const std::string& path);

}  // namespace duc
