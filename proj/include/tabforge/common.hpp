#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>

namespace tabforge {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent per-chunk / per-row seeds
// so results do not depend on how work is split across threads.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

double standard_normal(Rng& rng);

// Worker count: hardware concurrency capped by TABFORGE_THREADS.
std::size_t thread_count();

// Runs fn(i) for i in [0, n). Work items must be independent.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// Warnings go to stderr unless a sink is installed (tests capture them).
using WarningSink = std::function<void(const std::string&)>;
void set_warning_sink(WarningSink sink);
void warn(const std::string& message);

}  // namespace tabforge
