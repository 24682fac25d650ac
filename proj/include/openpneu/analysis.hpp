#pragma once

// Step-response metrics for recorded pressure traces.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace openpneu::analysis {

struct Sample {
    double time_s;
    double pressure_kpa;
};

/// Settling band: 2% of the step magnitude, never narrower than 0.2 kPa.
inline double settling_band(double step_magnitude_kpa)
{
    return std::max(0.02 * std::abs(step_magnitude_kpa), 0.2);
}

struct StepMetrics {
    double settle_time_s = 0.0;     // NaN when the trace never settles
    double overshoot_kpa = 0.0;     // excursion past the target in the step direction
    double overshoot_fraction = 0.0; // overshoot / step magnitude (0 for a null step)
    double steady_state_error_kpa = 0.0; // mean |target - p| over the final 25% of the hold
    double peak_error_final_kpa = 0.0;   // max |target - p| over the same window
    double oscillation_kpa = 0.0;   // travel in excess of the net pressure change
    [[nodiscard]] bool settled() const { return !std::isnan(settle_time_s); }
};

/// Metrics for one hold. `samples` are the trace after the setpoint change
/// with time measured from the change; `start_kpa` is the pressure at the change.
inline StepMetrics step_metrics(std::span<const Sample> samples, double start_kpa, double target_kpa)
{
    StepMetrics m;
    if (samples.empty()) {
        m.settle_time_s = std::numeric_limits<double>::quiet_NaN();
        return m;
    }
    const double step = target_kpa - start_kpa;
    const double band = settling_band(step);

    // Settled at the sample after the last excursion outside the band.
    std::ptrdiff_t last_out = -1;
    for (std::ptrdiff_t i = static_cast<std::ptrdiff_t>(samples.size()) - 1; i >= 0; --i) {
        if (std::abs(samples[static_cast<std::size_t>(i)].pressure_kpa - target_kpa) > band) {
            last_out = i;
            break;
        }
    }
    if (last_out == static_cast<std::ptrdiff_t>(samples.size()) - 1) {
        m.settle_time_s = std::numeric_limits<double>::quiet_NaN();
    } else if (last_out >= 0) {
        m.settle_time_s = samples[static_cast<std::size_t>(last_out + 1)].time_s;
    } else {
        m.settle_time_s = 0.0;
    }

    const double direction = step >= 0.0 ? 1.0 : -1.0;
    double worst = 0.0;
    for (const auto& s : samples) {
        worst = std::max(worst, direction * (s.pressure_kpa - target_kpa));
    }
    m.overshoot_kpa = worst;
    m.overshoot_fraction = std::abs(step) > 0.0 ? worst / std::abs(step) : 0.0;

    const std::size_t n = samples.size();
    const std::size_t tail = std::max<std::size_t>(1, n / 4);
    double sum = 0.0;
    double peak = 0.0;
    for (std::size_t i = n - tail; i < n; ++i) {
        const double e = std::abs(target_kpa - samples[i].pressure_kpa);
        sum += e;
        peak = std::max(peak, e);
    }
    m.steady_state_error_kpa = sum / static_cast<double>(tail);
    m.peak_error_final_kpa = peak;

    double travel = std::abs(samples.front().pressure_kpa - start_kpa);
    for (std::size_t i = 1; i < n; ++i) {
        travel += std::abs(samples[i].pressure_kpa - samples[i - 1].pressure_kpa);
    }
    m.oscillation_kpa = std::max(0.0, travel - std::abs(samples.back().pressure_kpa - start_kpa));
    return m;
}

} // namespace openpneu::analysis
