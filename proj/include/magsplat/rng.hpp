#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace magsplat {

/// Seed of an independent named stream: FNV-1a of the name mixed with the
/// run seed and an index (iteration, frame, ...) through splitmix64.
std::uint64_t stream_seed(std::uint64_t seed, std::string_view name, std::uint64_t index = 0);

/// Generator for one named stream. A stream depends only on (seed, name,
/// index), so changing one subsystem does not shift another's draws and a
/// resumed run reproduces the same values.
inline std::mt19937_64 make_stream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0) {
  return std::mt19937_64(stream_seed(seed, name, index));
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace magsplat
