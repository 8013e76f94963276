#pragma once

#include <cstdint>
#include <string_view>

namespace poisonlab {

// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

// Maps (master seed, stage label) to an independent stream seed. Every stage
// of a run pulls its seed through this, so changing one stage's stream never
// perturbs another stage.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label);

}  // namespace poisonlab
