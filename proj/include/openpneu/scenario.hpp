#pragma once

// Disturbance and leak schedules for simulated channels, plus the
// structured-text scenario script format:
//   {"events": [{"time_s": 5.0, "channel": 0, "kind": "disturbance",
//                "value": -0.5, "duration_s": 1.0}, ...]}
// "channel" may also be the string "all". For kind "leak" the value is the
// leak coefficient in (L/min)/kPa and duration_s = 0 means permanent.

#include "openpneu/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace openpneu::scenario {

using Tick = std::uint64_t;

inline Tick seconds_to_ticks(double seconds, double dt)
{
    return static_cast<Tick>(std::llround(seconds / dt));
}

/// Disturbance windows for one channel, in half-open tick ranges.
class DisturbanceSchedule {
public:
    struct Window {
        Tick begin;
        Tick end;
        double flow_lpm;
    };

    /// Registers flow over [begin, begin + length). Zero flow or zero
    /// length registers nothing.
    void schedule(Tick begin, Tick length, double flow_lpm)
    {
        if (flow_lpm == 0.0 || length == 0) {
            return;
        }
        if (overlaps(begin, length)) {
            throw OverlappingDisturbance();
        }
        windows_.push_back(Window{begin, begin + length, flow_lpm});
    }

    [[nodiscard]] bool overlaps(Tick begin, Tick length) const
    {
        const Tick end = begin + length;
        return std::any_of(windows_.begin(), windows_.end(),
                           [&](const Window& w) { return begin < w.end && w.begin < end; });
    }

    [[nodiscard]] double flow_at(Tick tick) const
    {
        for (const auto& w : windows_) {
            if (tick >= w.begin && tick < w.end) {
                return w.flow_lpm;
            }
        }
        return 0.0;
    }

    [[nodiscard]] bool active_at(Tick tick) const
    {
        for (const auto& w : windows_) {
            if (tick >= w.begin && tick < w.end) {
                return true;
            }
        }
        return false;
    }

    void prune(Tick now)
    {
        std::erase_if(windows_, [now](const Window& w) { return w.end <= now; });
    }

    [[nodiscard]] const std::vector<Window>& windows() const { return windows_; }

private:
    std::vector<Window> windows_;
};

enum class EventKind { Disturbance, Leak };

inline constexpr int kAllChannels = -1;

struct ScenarioEvent {
    double time_s = 0.0;
    int channel = 0; // kAllChannels for every channel
    EventKind kind = EventKind::Disturbance;
    double value = 0.0;
    double duration_s = 0.0;
};

inline ScenarioEvent event_from_json(const nlohmann::json& j)
{
    ScenarioEvent ev;
    try {
        ev.time_s = j.at("time_s").get<double>();
        const auto& ch = j.at("channel");
        if (ch.is_string()) {
            if (ch.get<std::string>() != "all") {
                throw ConfigError("channel must be an index or \"all\"");
            }
            ev.channel = kAllChannels;
        } else {
            ev.channel = ch.get<int>();
        }
        const auto kind = j.at("kind").get<std::string>();
        if (kind == "disturbance") {
            ev.kind = EventKind::Disturbance;
        } else if (kind == "leak") {
            ev.kind = EventKind::Leak;
        } else {
            throw ConfigError("unknown scenario event kind '" + kind + "'");
        }
        ev.value = j.at("value").get<double>();
        ev.duration_s = j.value("duration_s", 0.0);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad scenario event: ") + e.what());
    }
    if (ev.time_s < 0.0 || ev.duration_s < 0.0) {
        throw ConfigError("scenario times must be non-negative");
    }
    if (ev.kind == EventKind::Disturbance && ev.duration_s <= 0.0 && ev.value != 0.0) {
        throw ConfigError("disturbance events need duration_s > 0");
    }
    return ev;
}

inline nlohmann::json event_to_json(const ScenarioEvent& ev)
{
    nlohmann::json j;
    j["time_s"] = ev.time_s;
    if (ev.channel == kAllChannels) {
        j["channel"] = "all";
    } else {
        j["channel"] = ev.channel;
    }
    j["kind"] = ev.kind == EventKind::Disturbance ? "disturbance" : "leak";
    j["value"] = ev.value;
    j["duration_s"] = ev.duration_s;
    return j;
}

inline std::vector<ScenarioEvent> parse_scenario(const nlohmann::json& doc)
{
    const nlohmann::json* list = &doc;
    if (doc.is_object()) {
        if (!doc.contains("events")) {
            throw ConfigError("scenario object needs an \"events\" array");
        }
        list = &doc.at("events");
    }
    if (!list->is_array()) {
        throw ConfigError("scenario must be an array of events");
    }
    std::vector<ScenarioEvent> events;
    for (const auto& item : *list) {
        events.push_back(event_from_json(item));
    }
    return events;
}

inline std::vector<ScenarioEvent> load_scenario(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open scenario file " + path);
    }
    try {
        return parse_scenario(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("scenario " + path + ": " + e.what());
    }
}

} // namespace openpneu::scenario
