#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace opelab {

using Rng = std::mt19937_64;

/// Derive an independent stream seed from a master seed and a label.
/// Every consumer (world, contexts, actions, masking, ...) gets its own
/// label so adding a consumer never shifts another one's draws.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label, std::uint64_t index = 0);

inline Rng make_rng(std::uint64_t master, std::string_view label, std::uint64_t index = 0) {
    return Rng(derive_seed(master, label, index));
}

/// Draw an index with probability proportional to `weights` (nonnegative,
/// positive total). Zero-weight entries are never returned.
std::size_t sample_discrete(std::span<const double> weights, Rng& rng);

}  // namespace opelab
