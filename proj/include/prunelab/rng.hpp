#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace prunelab {

using Rng = std::mt19937_64;

// Every consumer of randomness draws from its own stream so that changing one
// (e.g. the mask retention p) never shifts the draws of another.
enum class Stream { data, eval, mask, init, monte_carlo };

std::string_view stream_name(Stream stream);

/// Independent generator derived from (master_seed, name).
Rng make_stream(std::uint64_t master_seed, std::string_view name);
Rng make_stream(std::uint64_t master_seed, Stream stream);

/// Uniform double in [0, 1) built from the top 53 bits of one draw.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace prunelab
