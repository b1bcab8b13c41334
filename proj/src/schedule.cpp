#include "prunelab/schedule.hpp"

#include <algorithm>
#include <string>

#include "prunelab/errors.hpp"

namespace prunelab {

void SparsitySchedule::validate() const {
    if (!(initial >= 0.0 && initial <= 1.0 && final >= 0.0 && final <= 1.0)) {
        throw ConfigError("sparsity schedule: initial and final must lie in [0,1]");
    }
    if (warmup < 0 || cooldown < 0 || total < 0 || warmup + cooldown > total) {
        throw ConfigError("sparsity schedule: need 0 <= warmup, 0 <= cooldown, warmup + cooldown <= total "
                          "(got warmup=" + std::to_string(warmup) + ", cooldown=" +
                          std::to_string(cooldown) + ", total=" + std::to_string(total) + ")");
    }
}

SparsitySchedule SparsitySchedule::with_default_phases(double initial, double final, std::int64_t total) {
    SparsitySchedule s;
    s.initial = initial;
    s.final = final;
    s.total = total;
    s.warmup = total / 20;
    s.cooldown = total / 5;
    return s;
}

double sparsity_at(const SparsitySchedule& s, std::int64_t t) {
    s.validate();
    if (t < 0 || t > s.total) {
        throw RangeError("sparsity_at: step " + std::to_string(t) + " outside [0, " +
                         std::to_string(s.total) + "]");
    }
    if (t >= s.total - s.cooldown) return s.final;
    if (t <= s.warmup) return s.initial;
    const double ramp = static_cast<double>(s.total - s.warmup - s.cooldown);
    const double progress = 1.0 - static_cast<double>(t - s.warmup) / ramp;
    const double v = s.final + (s.initial - s.final) * progress * progress * progress;
    return std::clamp(v, std::min(s.initial, s.final), std::max(s.initial, s.final));
}

}  // namespace prunelab
