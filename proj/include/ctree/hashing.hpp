#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace ctree {

std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::uint64_t splitmix64(std::uint64_t x);

/// Independent stream seed for a named role under a base seed.
std::uint64_t derive_seed(std::uint64_t base, std::string_view role);

std::string to_hex(std::uint64_t value);

}  // namespace ctree
