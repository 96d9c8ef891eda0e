#include "ctree/vector_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ctree/errors.hpp"

namespace ctree {
namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
}

std::uint32_t get_u32(const char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    }
    return v;
}

}  // namespace

std::string encode_vector(std::span<const float> values) {
    std::string out(kVectorMagic, 4);
    put_u32(out, static_cast<std::uint32_t>(values.size()));
    out.reserve(kVectorHeaderBytes + 4 * values.size());
    for (const float f : values) {
        put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
    return out;
}

std::vector<float> decode_vector(std::string_view bytes) {
    if (bytes.size() < kVectorHeaderBytes || std::memcmp(bytes.data(), kVectorMagic, 4) != 0) {
        fail(ErrorCode::decode, "not a vector file (bad header)");
    }
    const std::uint32_t dim = get_u32(bytes.data() + 4);
    if (bytes.size() != kVectorHeaderBytes + 4ull * dim) {
        fail(ErrorCode::decode, "vector file length " + std::to_string(bytes.size()) +
                                    " does not match dimension " + std::to_string(dim));
    }
    std::vector<float> out(dim);
    for (std::uint32_t i = 0; i < dim; ++i) {
        out[i] = std::bit_cast<float>(get_u32(bytes.data() + kVectorHeaderBytes + 4 * i));
    }
    return out;
}

std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorCode::io, "cannot read " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        fail(ErrorCode::io, "cannot write " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        fail(ErrorCode::io, "short write to " + path.string());
    }
}

void write_vector_file(const std::filesystem::path& path, std::span<const float> values) {
    write_file_bytes(path, encode_vector(values));
}

std::vector<float> read_vector_file(const std::filesystem::path& path) {
    return decode_vector(read_file_bytes(path));
}

}  // namespace ctree
