#pragma once

#include <cstdint>

namespace prunelab {

// Cubic sparsity ramp with warm-up and cool-down. `initial` and `final` are
// PRUNED fractions; Top_v keeps 1 - sparsity_at(t).
//
//   t <  warmup                  -> initial
//   t >= total - cooldown        -> final
//   otherwise                    -> final + (initial - final) * (1 - (t - warmup) / D)^3,
//                                   D = total - warmup - cooldown
struct SparsitySchedule {
    double initial = 0.0;
    double final = 0.9;
    std::int64_t warmup = 0;
    std::int64_t cooldown = 0;
    std::int64_t total = 1;

    void validate() const;

    // Defaults used by the CLI: 5% warm-up and 20% cool-down of `total`.
    static SparsitySchedule with_default_phases(double initial, double final, std::int64_t total);
};

double sparsity_at(const SparsitySchedule& schedule, std::int64_t t);

}  // namespace prunelab
