#pragma once

// Plain-text "key = value" configuration for plant and controller
// parameters. '#' starts a comment. Keys (defaults in brackets):
//
//   channels [10]  seed [1]  mode [simulated|external]
//   tick_rate_hz [50]  telemetry_decimation [2]
//   inflate.max_flow [1.7]  inflate.stall_pressure [80]
//   deflate.max_flow [1.7]  deflate.stall_pressure [-50]
//   chamber.rest_volume [30]  chamber.compliance [0.3]  chamber.leak_coefficient [0]
//   sensor.preset [hybrid|positive]  sensor.min  sensor.max
//   sensor.quantization [0.01]  sensor.noise_std [0]
//   pid.kp [0.5]  pid.ki [0.2]  pid.kd [0.001]  pid.output_limit [1]  pid.integral_limit [15]
//   control.deadband [0.05]  control.valve_hysteresis [0.1]  control.enabled [true]
//
// Any plant/sensor/pid/control key may be prefixed with "ch<N>." to
// override it for a single channel, e.g. "ch3.chamber.leak_coefficient = 0.02".

#include "openpneu/device.hpp"
#include "openpneu/errors.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace openpneu::config {

namespace detail {

inline std::string trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

inline double to_double(const std::string& key, const std::string& value)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) {
            throw std::invalid_argument(value);
        }
        return v;
    } catch (const std::exception&) {
        throw ConfigError("'" + key + "' expects a number, got '" + value + "'");
    }
}

inline long to_integer(const std::string& key, const std::string& value)
{
    long v = 0;
    const auto* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, v);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError("'" + key + "' expects an integer, got '" + value + "'");
    }
    return v;
}

inline bool to_bool(const std::string& key, const std::string& value)
{
    if (value == "true" || value == "1" || value == "yes") {
        return true;
    }
    if (value == "false" || value == "0" || value == "no") {
        return false;
    }
    throw ConfigError("'" + key + "' expects true/false, got '" + value + "'");
}

/// Applies one channel-scoped key; returns false if the key is not channel-scoped.
inline bool apply_channel_key(device::ChannelSetup& setup, const std::string& key, const std::string& value)
{
    auto num = [&] { return to_double(key, value); };
    auto& p = setup.plant;
    auto& c = setup.control;
    if (key == "inflate.max_flow") p.inflate.max_flow_lpm = num();
    else if (key == "inflate.stall_pressure") p.inflate.stall_pressure_kpa = num();
    else if (key == "deflate.max_flow") p.deflate.max_flow_lpm = num();
    else if (key == "deflate.stall_pressure") p.deflate.stall_pressure_kpa = num();
    else if (key == "chamber.rest_volume") p.chamber.rest_volume_ml = num();
    else if (key == "chamber.compliance") p.chamber.compliance_ml_per_kpa = num();
    else if (key == "chamber.leak_coefficient") p.chamber.leak_coefficient = num();
    else if (key == "sensor.preset") {
        const auto keep_q = p.sensor.quantization_kpa;
        const auto keep_n = p.sensor.noise_std_kpa;
        if (value == "hybrid") p.sensor = plant::SensorModel::hybrid();
        else if (value == "positive") p.sensor = plant::SensorModel::positive();
        else throw ConfigError("sensor.preset must be hybrid or positive");
        p.sensor.quantization_kpa = keep_q;
        p.sensor.noise_std_kpa = keep_n;
    }
    else if (key == "sensor.min") p.sensor.min_kpa = num();
    else if (key == "sensor.max") p.sensor.max_kpa = num();
    else if (key == "sensor.quantization") p.sensor.quantization_kpa = num();
    else if (key == "sensor.noise_std") p.sensor.noise_std_kpa = num();
    else if (key == "pid.kp") c.gains.kp = num();
    else if (key == "pid.ki") c.gains.ki = num();
    else if (key == "pid.kd") c.gains.kd = num();
    else if (key == "pid.output_limit") c.gains.output_limit = num();
    else if (key == "pid.integral_limit") c.gains.integral_limit = num();
    else if (key == "control.deadband") c.deadband_kpa = num();
    else if (key == "control.valve_hysteresis") c.valve_hysteresis_kpa = num();
    else if (key == "control.enabled") c.enabled = to_bool(key, value);
    else return false;
    return true;
}

} // namespace detail

using Entries = std::vector<std::pair<std::string, std::string>>;

inline Entries parse_entries(std::istream& in)
{
    Entries entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        const auto body = detail::trim(line);
        if (body.empty()) {
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        }
        auto key = detail::trim(std::string_view(body).substr(0, eq));
        auto value = detail::trim(std::string_view(body).substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("line " + std::to_string(line_no) + ": empty key");
        }
        entries.emplace_back(std::move(key), std::move(value));
    }
    return entries;
}

/// Builds a device configuration from parsed entries. Global keys apply to
/// every channel, then ch<N>. overrides apply regardless of file order.
inline device::DeviceConfig build(const Entries& entries)
{
    device::DeviceConfig cfg;
    device::ChannelSetup common;
    int channels = static_cast<int>(cfg.channels.size());
    std::vector<std::pair<int, std::pair<std::string, std::string>>> overrides;

    for (const auto& [key, value] : entries) {
        if (key == "channels") {
            channels = static_cast<int>(detail::to_integer(key, value));
        } else if (key == "seed") {
            cfg.seed = static_cast<std::uint64_t>(detail::to_integer(key, value));
        } else if (key == "mode") {
            if (value == "simulated") cfg.mode = device::Mode::Simulated;
            else if (value == "external") cfg.mode = device::Mode::ExternalPlant;
            else throw ConfigError("mode must be simulated or external");
        } else if (key == "tick_rate_hz") {
            cfg.tick_rate_hz = detail::to_double(key, value);
        } else if (key == "telemetry_decimation") {
            const long d = detail::to_integer(key, value);
            if (d < 1 || d > 255) {
                throw ConfigError("telemetry_decimation must be 1..255");
            }
            cfg.telemetry_decimation = static_cast<unsigned>(d);
        } else if (key.rfind("ch", 0) == 0 && key.find('.') != std::string::npos &&
                   std::isdigit(static_cast<unsigned char>(key[2]))) {
            const auto dot = key.find('.');
            const int ch = static_cast<int>(detail::to_integer(key, key.substr(2, dot - 2)));
            overrides.push_back({ch, {key.substr(dot + 1), value}});
        } else if (!detail::apply_channel_key(common, key, value)) {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
    if (channels < 1 || channels > kMaxChannels) {
        throw ConfigError("channels must be 1..24");
    }
    cfg.channels.assign(static_cast<std::size_t>(channels), common);
    for (const auto& [ch, kv] : overrides) {
        if (ch < 0 || ch >= channels) {
            throw ConfigError("override for channel " + std::to_string(ch) + " outside 0.." +
                              std::to_string(channels - 1));
        }
        if (!detail::apply_channel_key(cfg.channels[static_cast<std::size_t>(ch)], kv.first, kv.second)) {
            throw ConfigError("unknown per-channel key '" + kv.first + "'");
        }
    }
    device::validate(cfg);
    return cfg;
}

inline device::DeviceConfig parse(const std::string& text)
{
    std::istringstream in(text);
    return build(parse_entries(in));
}

inline device::DeviceConfig load(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path);
    }
    return build(parse_entries(in));
}

/// Re-sizes a configuration to n channels, copying channel 0's setup.
inline void resize_channels(device::DeviceConfig& cfg, int n)
{
    if (n < 1 || n > kMaxChannels) {
        throw ConfigError("channels must be 1..24");
    }
    const auto first = cfg.channels.front();
    cfg.channels.resize(static_cast<std::size_t>(n), first);
}

} // namespace openpneu::config
