#pragma once

// Simulated pneumatic channel: two micro-pumps behind a two-way solenoid
// valve feeding a compliant chamber with an optional leak. Units are kPa
// (gauge), L/min, mL and seconds throughout.

#include "openpneu/errors.hpp"
#include "openpneu/types.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace openpneu::plant {

/// Linearized diaphragm pump: flow falls off linearly with back-pressure
/// and reaches zero at the stall pressure. Inflation pumps stall at a
/// positive gauge pressure, deflation pumps at a negative one.
struct PumpCurve {
    double max_flow_lpm = 1.7;
    double stall_pressure_kpa = 80.0;
};

inline constexpr PumpCurve kDefaultInflateCurve{1.7, 80.0};
inline constexpr PumpCurve kDefaultDeflateCurve{1.7, -50.0};

struct ChamberParams {
    double rest_volume_ml = 30.0;
    double compliance_ml_per_kpa = 0.3;
    double leak_coefficient = 0.0; // (L/min) per kPa of gauge pressure

    [[nodiscard]] double volume_ml(double pressure_kpa) const
    {
        return rest_volume_ml + compliance_ml_per_kpa * pressure_kpa;
    }
};

struct SensorModel {
    double min_kpa = -103.4;
    double max_kpa = 103.4;
    double quantization_kpa = 0.01;
    double noise_std_kpa = 0.0;

    /// 0..15 psi gauge sensor.
    static SensorModel positive() { return SensorModel{0.0, 103.4, 0.01, 0.0}; }
    /// +/-15 psi sensor.
    static SensorModel hybrid() { return SensorModel{-103.4, 103.4, 0.01, 0.0}; }
};

struct PlantParams {
    PumpCurve inflate = kDefaultInflateCurve;
    PumpCurve deflate = kDefaultDeflateCurve;
    ChamberParams chamber;
    SensorModel sensor = SensorModel::hybrid();
};

struct ChannelPlantState {
    double pressure_kpa = 0.0;
    Valve valve = Valve::InflatePath;
    double last_flow_lpm = 0.0;     // net flow into the chamber at the end of the last step
    double last_pump_flow_lpm = 0.0; // signed pump contribution to last_flow_lpm
    double disturbance_flow_lpm = 0.0;

    friend bool operator==(const ChannelPlantState&, const ChannelPlantState&) = default;
};

inline void validate(const PumpCurve& curve, bool inflation)
{
    if (!(curve.max_flow_lpm > 0.0)) {
        throw ConfigError("pump max_flow must be > 0");
    }
    if (inflation ? !(curve.stall_pressure_kpa > 0.0) : !(curve.stall_pressure_kpa < 0.0)) {
        throw ConfigError(inflation ? "inflation pump stall pressure must be > 0"
                                    : "deflation pump stall pressure must be < 0");
    }
}

inline void validate(const PlantParams& params)
{
    validate(params.inflate, true);
    validate(params.deflate, false);
    const auto& ch = params.chamber;
    if (!(ch.rest_volume_ml > 0.0) || !(ch.compliance_ml_per_kpa >= 0.0) || !(ch.leak_coefficient >= 0.0)) {
        throw ConfigError("chamber needs rest_volume > 0, compliance >= 0, leak_coefficient >= 0");
    }
    if (!(ch.volume_ml(params.deflate.stall_pressure_kpa) > 0.0)) {
        throw ConfigError("chamber volume collapses inside the pump pressure range");
    }
    if (!(params.sensor.min_kpa < params.sensor.max_kpa) || params.sensor.quantization_kpa < 0.0 ||
        params.sensor.noise_std_kpa < 0.0) {
        throw ConfigError("invalid sensor model");
    }
}

/// Magnitude of the flow a pump moves at the given duty and chamber
/// pressure. The pressure factor is clamped to [0, 1]: an assisting
/// pressure difference never pushes a pump past its free-flow rate.
inline double pump_flow(const PumpCurve& curve, double duty, double pressure_kpa)
{
    const double factor = std::clamp(1.0 - pressure_kpa / curve.stall_pressure_kpa, 0.0, 1.0);
    return duty * curve.max_flow_lpm * factor;
}

/// Signed pump contribution for the active valve path.
inline double pump_contribution(const ActuationCommand& cmd, const PlantParams& params, double pressure_kpa)
{
    if (cmd.valve == Valve::InflatePath) {
        return pump_flow(params.inflate, cmd.inflate_duty.fraction(), pressure_kpa);
    }
    return -pump_flow(params.deflate, cmd.deflate_duty.fraction(), pressure_kpa);
}

inline double net_flow_at(double pressure_kpa, double disturbance_lpm, const ActuationCommand& cmd,
                          const PlantParams& params)
{
    return pump_contribution(cmd, params, pressure_kpa) - params.chamber.leak_coefficient * pressure_kpa +
           disturbance_lpm;
}

/// Net volumetric flow into the chamber, L/min.
inline double net_flow(const ChannelPlantState& state, const ActuationCommand& cmd, const PlantParams& params)
{
    return net_flow_at(state.pressure_kpa, state.disturbance_flow_lpm, cmd, params);
}

/// Isothermal mass balance of the compliant chamber.
inline double pressure_rate(double pressure_kpa, double flow_lpm, const ChamberParams& chamber)
{
    const double absolute = kAtmosphereKpa + pressure_kpa;
    const double flow_ml_per_s = flow_lpm * (1000.0 / 60.0);
    const double capacity = chamber.volume_ml(pressure_kpa) + chamber.compliance_ml_per_kpa * absolute;
    return absolute * flow_ml_per_s / capacity;
}

inline constexpr double kMaxStepS = kTickPeriodS;

/// Advances one channel by dt with the command held constant (RK4).
inline ChannelPlantState step_plant(const ChannelPlantState& state, const ActuationCommand& cmd,
                                    const PlantParams& params, double dt)
{
    if (!(dt > 0.0) || dt > kMaxStepS + 1e-12) {
        throw std::invalid_argument("plant step must satisfy 0 < dt <= 20 ms");
    }
    const double dist = state.disturbance_flow_lpm;
    auto rate = [&](double p) { return pressure_rate(p, net_flow_at(p, dist, cmd, params), params.chamber); };

    const double p0 = state.pressure_kpa;
    const double k1 = rate(p0);
    const double k2 = rate(p0 + 0.5 * dt * k1);
    const double k3 = rate(p0 + 0.5 * dt * k2);
    const double k4 = rate(p0 + dt * k3);
    const double p1 = p0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

    if (!std::isfinite(p1) || !(kAtmosphereKpa + p1 > 0.0)) {
        throw NonFiniteState("plant integration left the physical domain");
    }

    ChannelPlantState next = state;
    next.pressure_kpa = p1;
    next.valve = cmd.valve;
    next.last_pump_flow_lpm = pump_contribution(cmd, params, p1);
    next.last_flow_lpm = net_flow_at(p1, dist, cmd, params);
    return next;
}

/// Pressure reading: noise, then quantization to the nearest step, then clamp.
/// With zero noise the generator is left untouched.
template <class Rng>
double read_sensor(double pressure_kpa, const SensorModel& model, Rng& rng)
{
    double value = pressure_kpa;
    if (model.noise_std_kpa > 0.0) {
        std::normal_distribution<double> noise(0.0, model.noise_std_kpa);
        value += noise(rng);
    }
    if (model.quantization_kpa > 0.0) {
        value = std::round(value / model.quantization_kpa) * model.quantization_kpa;
    }
    return std::clamp(value, model.min_kpa, model.max_kpa);
}

/// Seedable sensor attached to one channel.
class Sensor {
public:
    explicit Sensor(SensorModel model = SensorModel::hybrid(), std::uint64_t seed = 0)
        : model_(model), rng_(seed)
    {
    }

    double read(const ChannelPlantState& state) { return read_sensor(state.pressure_kpa, model_, rng_); }

    [[nodiscard]] const SensorModel& model() const { return model_; }
    void set_model(const SensorModel& model) { model_ = model; }

private:
    SensorModel model_;
    std::mt19937_64 rng_;
};

} // namespace openpneu::plant
