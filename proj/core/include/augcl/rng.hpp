#pragma once

#include <cstdint>
#include <random>

namespace augcl {

using Rng = std::mt19937_64;

/// Named substreams; mixing a tag into a seed yields an independent stream.
enum class Stream : std::uint64_t {
    model_init = 0x1001,
    predictor_init = 0x1002,
    probe_init = 0x1003,
    split = 0x2001,
    batches = 0x2002,
    probe_batches = 0x2003,
    augment = 0x3001,
    task_draw = 0x3002,
    run = 0x4001,
};

/// SplitMix64 finalizer over (seed, tag).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) noexcept;

template <typename... Tags>
std::uint64_t derive_seed(std::uint64_t seed, Tags... tags) noexcept {
    ((seed = mix_seed(seed, static_cast<std::uint64_t>(tags))), ...);
    return seed;
}

template <typename... Tags>
Rng make_rng(std::uint64_t seed, Tags... tags) {
    return Rng(derive_seed(seed, tags...));
}

double uniform(Rng& rng, double lo, double hi);
bool bernoulli(Rng& rng, double p);

}  // namespace augcl
