#include "prunelab/rng.hpp"

namespace prunelab {

namespace {

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

}  // namespace

std::string_view stream_name(Stream stream) {
  switch (stream) {
    case Stream::data: return "data";
    case Stream::eval: return "eval";
    case Stream::mask: return "mask";
    case Stream::init: return "init";
    case Stream::monte_carlo: return "monte_carlo";
  }
  return "unknown";
}

Rng make_stream(std::uint64_t master_seed, std::string_view name) {
  const std::uint64_t tag = fnv1a(name);
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
  return Rng(seq);
}

Rng make_stream(std::uint64_t master_seed, Stream stream) { return make_stream(master_seed, stream_name(stream)); }

}  // namespace prunelab
