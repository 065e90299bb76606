#pragma once

#include <cstdint>
#include <string_view>

namespace padrec {

/// Named sub-seed: splitmix64(master ^ fnv1a64(name)). Each randomness source
/// (init, dropout, negatives, shuffle, synth) draws from its own stream, so
/// changing one leaves the others untouched.
std::uint64_t derive_seed(std::uint64_t master, std::string_view name);

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view s);

}  // namespace padrec
