#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ctree {

// Binary vector file: 4-byte magic "CTEV", uint32 dimension, then dimension
// float32 values. Everything little-endian.
inline constexpr char kVectorMagic[4] = {'C', 'T', 'E', 'V'};
inline constexpr std::size_t kVectorHeaderBytes = 8;

std::string encode_vector(std::span<const float> values);
/// Throws Error(decode) on a bad magic or a length that disagrees with the header.
std::vector<float> decode_vector(std::string_view bytes);

void write_vector_file(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_vector_file(const std::filesystem::path& path);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::string_view bytes);

}  // namespace ctree
