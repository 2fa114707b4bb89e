#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "pyramid_isp/errors.hpp"

namespace pyramid_isp {

struct OneCycle {
    double lr_start = 5e-5;
    double lr_max = 1e-4;
    double lr_final = 5e-7;
    double warmup_fraction = 0.2;

    void validate() const {
        if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) throw ConfigError("warmup_fraction must lie in (0, 1)");
        if (!(lr_start <= lr_max)) throw ConfigError("lr_start must not exceed lr_max");
        if (!(lr_final <= lr_start)) throw ConfigError("lr_final must not exceed lr_start");
        if (!(lr_final >= 0.0)) throw ConfigError("learning rates must be non-negative");
    }
};

/// Cosine rise lr_start -> lr_max, then cosine decay lr_max -> lr_final,
/// over f = step / (total - 1). The peak sits on the step nearest
/// f = warmup_fraction so the schedule attains lr_max exactly.
inline double one_cycle_lr(long step, long total_steps, const OneCycle& p) {
    if (total_steps < 2) throw ContractError("one_cycle_lr needs total_steps >= 2");
    if (step < 0 || step >= total_steps)
        throw ContractError("step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + ")");
    auto cos_interp = [](double a, double b, double t) {
        if (t <= 0.0) return a;
        if (t >= 1.0) return b;
        return b + (a - b) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
    };
    const long last = total_steps - 1;
    if (last == 1) return step == 0 ? p.lr_start : p.lr_final;
    const long peak = std::clamp(std::lround(p.warmup_fraction * static_cast<double>(last)), 1L, last - 1);
    if (step <= peak) return cos_interp(p.lr_start, p.lr_max, static_cast<double>(step) / static_cast<double>(peak));
    return cos_interp(p.lr_max, p.lr_final, static_cast<double>(step - peak) / static_cast<double>(last - peak));
}

}  // namespace pyramid_isp
