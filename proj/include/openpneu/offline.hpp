#pragma once

// Recomputes step metrics from a CSV recording alone. Setpoint changes are
// detected from the recorded target column, so this path shares nothing with
// the live trajectory runner except the file format.

#include "openpneu/recording.hpp"
#include "openpneu/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

namespace openpneu::offline {

struct Step {
    int channel = 0;
    std::uint64_t issue_tick = 0; // last tick recorded with the previous target
    std::uint64_t end_tick = 0;
    double start_kpa = 0.0;
    double target_kpa = 0.0;
    double settle_time_s = std::numeric_limits<double>::quiet_NaN();
    double overshoot_kpa = 0.0;
    double steady_state_error_kpa = 0.0;
    double oscillation_kpa = 0.0;
};

inline std::vector<Step> recompute(const std::vector<recording::RecordingRow>& rows)
{
    std::map<int, std::vector<const recording::RecordingRow*>> by_channel;
    for (const auto& r : rows) {
        by_channel[r.channel].push_back(&r);
    }

    std::vector<Step> steps;
    for (auto& [channel, trace] : by_channel) {
        std::sort(trace.begin(), trace.end(), [](auto* a, auto* b) { return a->sim_tick < b->sim_tick; });

        // Indices where the recorded target differs from the previous row.
        std::vector<std::size_t> changes;
        for (std::size_t i = 1; i < trace.size(); ++i) {
            if (trace[i]->target_kpa != trace[i - 1]->target_kpa) {
                changes.push_back(i);
            }
        }
        for (std::size_t c = 0; c < changes.size(); ++c) {
            const std::size_t first = changes[c];
            const std::size_t stop = c + 1 < changes.size() ? changes[c + 1] : trace.size();
            Step s;
            s.channel = channel;
            s.issue_tick = trace[first - 1]->sim_tick;
            s.end_tick = trace[stop - 1]->sim_tick;
            s.start_kpa = trace[first - 1]->pressure_kpa;
            s.target_kpa = trace[first]->target_kpa;

            const double magnitude = std::fabs(s.target_kpa - s.start_kpa);
            const double band = magnitude * 0.02 < 0.2 ? 0.2 : magnitude * 0.02;
            const bool rising = s.target_kpa >= s.start_kpa;

            // Forward scan: remember where the current in-band run began.
            long run_start = -1;
            double lo = trace[first]->pressure_kpa;
            double hi = lo;
            double travel = std::fabs(trace[first]->pressure_kpa - s.start_kpa);
            for (std::size_t i = first; i < stop; ++i) {
                const double p = trace[i]->pressure_kpa;
                const bool inside = std::fabs(p - s.target_kpa) <= band;
                if (inside && run_start < 0) {
                    run_start = static_cast<long>(i);
                } else if (!inside) {
                    run_start = -1;
                }
                lo = std::min(lo, p);
                hi = std::max(hi, p);
                if (i > first) {
                    travel += std::fabs(p - trace[i - 1]->pressure_kpa);
                }
            }
            if (run_start >= 0) {
                s.settle_time_s =
                    static_cast<double>(trace[static_cast<std::size_t>(run_start)]->sim_tick - s.issue_tick) *
                    kTickPeriodS;
            }
            s.overshoot_kpa = std::max(0.0, rising ? hi - s.target_kpa : s.target_kpa - lo);

            const std::size_t count = stop - first;
            const std::size_t tail = count / 4 == 0 ? 1 : count / 4;
            double total = 0.0;
            for (std::size_t i = stop - tail; i < stop; ++i) {
                total += std::fabs(trace[i]->pressure_kpa - s.target_kpa);
            }
            s.steady_state_error_kpa = total / static_cast<double>(tail);
            s.oscillation_kpa = std::max(0.0, travel - std::fabs(trace[stop - 1]->pressure_kpa - s.start_kpa));
            steps.push_back(s);
        }
    }
    std::sort(steps.begin(), steps.end(), [](const Step& a, const Step& b) {
        return a.issue_tick != b.issue_tick ? a.issue_tick < b.issue_tick : a.channel < b.channel;
    });
    return steps;
}

} // namespace openpneu::offline
