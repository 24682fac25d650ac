#pragma once

#include "openpneu/types.hpp"

#include <cstdint>
#include <vector>

namespace openpneu {

struct ChannelTelemetry {
    double pressure_kpa = 0.0;
    double target_kpa = 0.0;
    double flow_lpm = 0.0;
    PwmDuty inflate_duty;
    PwmDuty deflate_duty;
    Valve valve = Valve::InflatePath;
    bool enabled = true;

    friend bool operator==(const ChannelTelemetry&, const ChannelTelemetry&) = default;
};

/// One tick's worth of post-tick measurements and actuation for every channel.
struct TelemetrySnapshot {
    std::uint64_t tick = 0;
    std::vector<ChannelTelemetry> channels;

    friend bool operator==(const TelemetrySnapshot&, const TelemetrySnapshot&) = default;
};

} // namespace openpneu
