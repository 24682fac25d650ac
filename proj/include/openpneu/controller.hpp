#pragma once

// Per-channel PID pressure regulation evaluated at the 50 Hz tick, and the
// mapping of the signed control effort onto two pump duties and the valve.

#include "openpneu/errors.hpp"
#include "openpneu/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace openpneu::controller {

struct PidGains {
    double kp = 0.5;              // 1/kPa
    double ki = 0.2;              // 1/(kPa*s)
    double kd = 0.001;            // s/kPa
    double output_limit = 1.0;    // |u| <= output_limit <= 1
    double integral_limit = 15.0; // kPa*s

    friend bool operator==(const PidGains&, const PidGains&) = default;
};

enum class Saturation : std::int8_t { None = 0, Upper = 1, Lower = -1 };

struct PidState {
    double integral = 0.0;   // kPa*s
    double prev_error = 0.0; // kPa
    Saturation saturated = Saturation::None;

    void reset() { *this = PidState{}; }

    friend bool operator==(const PidState&, const PidState&) = default;
};

struct ChannelControlConfig {
    PidGains gains;
    double deadband_kpa = 0.05;
    double valve_hysteresis_kpa = 0.1;
    bool enabled = true;

    friend bool operator==(const ChannelControlConfig&, const ChannelControlConfig&) = default;
};

inline void validate(const PidGains& g)
{
    if (!(g.kp >= 0.0) || !(g.ki >= 0.0) || !(g.kd >= 0.0)) {
        throw ConfigError("PID gains must be non-negative");
    }
    if (!(g.output_limit > 0.0) || g.output_limit > 1.0) {
        throw ConfigError("output_limit must lie in (0, 1]");
    }
    if (!(g.integral_limit > 0.0)) {
        throw ConfigError("integral_limit must be > 0");
    }
}

inline void validate(const ChannelControlConfig& c)
{
    validate(c.gains);
    if (!(c.deadband_kpa >= 0.0) || !(c.valve_hysteresis_kpa >= c.deadband_kpa)) {
        throw ConfigError("need deadband >= 0 and valve_hysteresis >= deadband");
    }
}

struct PidOutput {
    double u = 0.0;
    PidState state;
};

/// One PID update with derivative on error. The integral is clamped to
/// +/-integral_limit and is not accumulated while the previous output was
/// saturated in the direction the current error pushes.
inline PidOutput pid_step(const PidState& state, const PidGains& gains, double target_kpa, double measured_kpa,
                          double dt)
{
    if (!(dt > 0.0)) {
        throw std::invalid_argument("pid_step needs dt > 0");
    }
    const double error = target_kpa - measured_kpa;
    const bool deepens = (state.saturated == Saturation::Upper && error > 0.0) ||
                         (state.saturated == Saturation::Lower && error < 0.0);

    PidState next = state;
    if (!deepens) {
        next.integral = std::clamp(state.integral + error * dt, -gains.integral_limit, gains.integral_limit);
    }
    const double derivative = (error - state.prev_error) / dt;
    const double raw = gains.kp * error + gains.ki * next.integral + gains.kd * derivative;

    if (raw > gains.output_limit) {
        next.saturated = Saturation::Upper;
    } else if (raw < -gains.output_limit) {
        next.saturated = Saturation::Lower;
    } else {
        next.saturated = Saturation::None;
    }
    next.prev_error = error;
    return PidOutput{std::clamp(raw, -gains.output_limit, gains.output_limit), next};
}

/// Turns effort u into pump duties and a valve position.
///
/// Inside the deadband nothing runs. Once |error| reaches the hysteresis
/// the valve follows the sign of the error and the matching pump runs at
/// the effort in that direction (zero if the effort disagrees). Between
/// deadband and hysteresis the valve is held and only the pump on the held
/// path may run.
inline ActuationCommand map_actuation(double u, double error_kpa, Valve held, const ChannelControlConfig& config)
{
    const double magnitude = std::abs(error_kpa);
    if (magnitude < config.deadband_kpa) {
        return ActuationCommand::idle(held);
    }

    Valve path = held;
    if (magnitude >= config.valve_hysteresis_kpa) {
        path = error_kpa > 0.0 ? Valve::InflatePath : Valve::DeflatePath;
    }

    ActuationCommand cmd = ActuationCommand::idle(path);
    if (path == Valve::InflatePath && u > 0.0) {
        cmd.inflate_duty = PwmDuty::from_fraction(u);
    } else if (path == Valve::DeflatePath && u < 0.0) {
        cmd.deflate_duty = PwmDuty::from_fraction(-u);
    }
    return cmd;
}

struct TickResult {
    ActuationCommand command;
    PidState state;
};

/// pid_step followed by map_actuation. A disabled channel gets a zero
/// command and keeps its controller memory untouched.
inline TickResult tick_channel(double reading_kpa, double target_kpa, const ChannelControlConfig& config,
                               const PidState& state, Valve held, double dt = kTickPeriodS)
{
    if (!config.enabled) {
        return TickResult{ActuationCommand::idle(held), state};
    }
    const PidOutput out = pid_step(state, config.gains, target_kpa, reading_kpa, dt);
    return TickResult{map_actuation(out.u, target_kpa - reading_kpa, held, config), out.state};
}

} // namespace openpneu::controller
