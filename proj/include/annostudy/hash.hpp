#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace annostudy {

// 64-bit FNV-1a. The seed is folded in as eight little-endian bytes before
// the data, so seed 0 differs from plain FNV-1a only by those eight zero bytes.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0);

// CRC-32C (Castagnoli), as used for event-log line checksums.
std::uint32_t crc32c(std::string_view data);

std::string to_hex(std::uint64_t v, int width = 16);

}  // namespace annostudy
