#pragma once

// Firmware-equivalent device. Commands mutate targets and configuration
// between ticks; tick() runs the 50 Hz control interrupt for every channel
// in index order and returns the post-tick telemetry snapshot.

#include "openpneu/controller.hpp"
#include "openpneu/errors.hpp"
#include "openpneu/plant.hpp"
#include "openpneu/protocol.hpp"
#include "openpneu/scenario.hpp"
#include "openpneu/telemetry.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace openpneu::device {

enum class Mode { Simulated, ExternalPlant };

/// Replaces the simulated plant with real hardware or a foreign simulator.
class ExternalPlant {
public:
    virtual ~ExternalPlant() = default;
    virtual double read_pressure(int channel) = 0;
    virtual void write_command(int channel, const ActuationCommand& command) = 0;
    virtual double read_flow(int /*channel*/) { return 0.0; }
};

struct ChannelSetup {
    plant::PlantParams plant;
    controller::ChannelControlConfig control;
};

struct DeviceConfig {
    std::vector<ChannelSetup> channels = std::vector<ChannelSetup>(10);
    Mode mode = Mode::Simulated;
    double tick_rate_hz = 50.0;        // pacing of the real-time loop
    unsigned telemetry_decimation = 2; // one snapshot every N ticks on the stream
    std::uint64_t seed = 1;

    static DeviceConfig uniform(int channel_count, const ChannelSetup& setup = {})
    {
        DeviceConfig cfg;
        cfg.channels.assign(static_cast<std::size_t>(channel_count), setup);
        return cfg;
    }

    [[nodiscard]] int channel_count() const { return static_cast<int>(channels.size()); }
};

inline void validate(const DeviceConfig& cfg)
{
    if (cfg.channels.empty() || cfg.channels.size() > static_cast<std::size_t>(kMaxChannels)) {
        throw ConfigError("channel count must be 1..24");
    }
    for (const auto& ch : cfg.channels) {
        plant::validate(ch.plant);
        controller::validate(ch.control);
    }
    if (!(cfg.tick_rate_hz > 0.0)) {
        throw ConfigError("tick rate must be positive");
    }
    if (cfg.telemetry_decimation == 0) {
        throw ConfigError("telemetry decimation must be >= 1");
    }
}

struct ChannelRuntime {
    double target_kpa = 0.0;
    controller::PidState pid;
    controller::ChannelControlConfig control;
    plant::PlantParams params;
    plant::ChannelPlantState plant;
    plant::Sensor sensor;
    scenario::DisturbanceSchedule disturbances;
    ActuationCommand last_command;
};

struct Envelope {
    double min_kpa;
    double max_kpa;
    [[nodiscard]] bool contains(double kpa) const { return kpa >= min_kpa && kpa <= max_kpa; }
};

/// Targets must stay inside what both the pumps and the sensor can reach.
inline Envelope target_envelope(const plant::PlantParams& p)
{
    return Envelope{std::max(p.deflate.stall_pressure_kpa, p.sensor.min_kpa),
                    std::min(p.inflate.stall_pressure_kpa, p.sensor.max_kpa)};
}

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}
} // namespace detail

class Device {
public:
    explicit Device(DeviceConfig config) : config_(std::move(config))
    {
        validate(config_);
        channels_.reserve(config_.channels.size());
        std::uint64_t idx = 0;
        for (const auto& setup : config_.channels) {
            ChannelRuntime rt;
            rt.control = setup.control;
            rt.params = setup.plant;
            rt.sensor = plant::Sensor(setup.plant.sensor, detail::splitmix64(config_.seed ^ (idx++ << 32)));
            channels_.push_back(std::move(rt));
        }
    }

    [[nodiscard]] int channel_count() const { return static_cast<int>(channels_.size()); }
    [[nodiscard]] std::uint64_t tick_count() const { return tick_count_; }
    [[nodiscard]] double sim_time_s() const { return static_cast<double>(tick_count_) * kTickPeriodS; }
    [[nodiscard]] Mode mode() const { return config_.mode; }
    [[nodiscard]] const DeviceConfig& config() const { return config_; }
    [[nodiscard]] const ChannelRuntime& channel(int ch) const { return channels_.at(checked(ch)); }

    void attach_external_plant(ExternalPlant& plant) { external_ = &plant; }

    // -- commands ----------------------------------------------------------

    void set_target(int ch, double kpa)
    {
        auto& rt = channels_[checked(ch)];
        check_envelope(rt, kpa);
        rt.target_kpa = kpa;
    }

    /// All targets change together; nothing changes if any value is rejected.
    void set_all_targets(std::span<const double> kpa)
    {
        if (kpa.size() != channels_.size()) {
            throw DeviceError(DeviceErrorCode::LengthMismatch);
        }
        for (std::size_t i = 0; i < kpa.size(); ++i) {
            check_envelope(channels_[i], kpa[i]);
        }
        for (std::size_t i = 0; i < kpa.size(); ++i) {
            channels_[i].target_kpa = kpa[i];
        }
    }

    void set_enabled(int ch, bool enabled)
    {
        for_channels(ch, [&](ChannelRuntime& rt) {
            if (enabled && !rt.control.enabled) {
                rt.pid.reset();
            }
            rt.control.enabled = enabled;
            if (!enabled) {
                rt.last_command = ActuationCommand::idle(rt.last_command.valve);
            }
        });
    }

    void set_gains(int ch, const controller::PidGains& gains)
    {
        try {
            controller::validate(gains);
        } catch (const ConfigError& e) {
            throw DeviceError(DeviceErrorCode::MalformedPayload, e.what());
        }
        for_channels(ch, [&](ChannelRuntime& rt) { rt.control.gains = gains; });
    }

    void set_leak(int ch, double coefficient)
    {
        if (!(coefficient >= 0.0)) {
            throw DeviceError(DeviceErrorCode::MalformedPayload, "leak coefficient must be >= 0");
        }
        for_channels(ch, [&](ChannelRuntime& rt) { rt.params.chamber.leak_coefficient = coefficient; });
    }

    /// Disturbance flow starting at the next tick boundary.
    void inject_disturbance(int ch, double flow_lpm, double duration_s)
    {
        if (!(duration_s > 0.0)) {
            throw DeviceError(DeviceErrorCode::MalformedPayload, "duration must be > 0");
        }
        schedule_disturbance(ch, tick_count_, scenario::seconds_to_ticks(duration_s, kTickPeriodS), flow_lpm);
    }

    /// Queues a scripted event at an absolute simulation time.
    void schedule(const scenario::ScenarioEvent& ev)
    {
        const int ch = ev.channel == scenario::kAllChannels ? kAll : ev.channel;
        const auto begin = scenario::seconds_to_ticks(ev.time_s, kTickPeriodS);
        const auto length = scenario::seconds_to_ticks(ev.duration_s, kTickPeriodS);
        if (ev.kind == scenario::EventKind::Disturbance) {
            schedule_disturbance(ch, begin, length, ev.value);
        } else {
            if (!(ev.value >= 0.0)) {
                throw DeviceError(DeviceErrorCode::MalformedPayload, "leak coefficient must be >= 0");
            }
            for_channels(ch, [&](ChannelRuntime&) {});
            leak_events_.push_back(LeakEvent{begin, length, ch, ev.value, false, {}});
        }
    }

    [[nodiscard]] double target(int ch) const { return channels_.at(checked(ch)).target_kpa; }
    [[nodiscard]] double pressure(int ch) const { return channels_.at(checked(ch)).plant.pressure_kpa; }
    [[nodiscard]] double flow(int ch) const { return channels_.at(checked(ch)).plant.last_flow_lpm; }

    /// Executes a decoded request and returns the reply frame (Reply or Error).
    protocol::Frame apply_command(const protocol::Frame& request)
    {
        using protocol::CommandId;
        const std::uint8_t id = request.command_id;
        const std::uint8_t ch_byte = request.channel;
        try {
            switch (request.command()) {
            case CommandId::Ping: {
                const std::uint8_t info[] = {protocol::kProtocolVersion, protocol::kFirmwareMajor,
                                             protocol::kFirmwareMinor, static_cast<std::uint8_t>(channel_count())};
                return protocol::msg::reply(id, ch_byte, info);
            }
            case CommandId::SetTarget: {
                if (request.payload.size() != 2) {
                    throw DeviceError(DeviceErrorCode::MalformedPayload);
                }
                protocol::ByteReader r(request.payload);
                set_target(single_channel(ch_byte), protocol::code_to_pressure(r.i16()));
                return protocol::msg::reply(id, ch_byte);
            }
            case CommandId::SetAllTargets: {
                if (request.payload.size() % 2 != 0) {
                    throw DeviceError(DeviceErrorCode::MalformedPayload);
                }
                protocol::ByteReader r(request.payload);
                std::vector<double> targets;
                while (r.remaining() > 0) {
                    targets.push_back(protocol::code_to_pressure(r.i16()));
                }
                set_all_targets(targets);
                return protocol::msg::reply(id, ch_byte);
            }
            case CommandId::ReadPressure:
            case CommandId::ReadFlow: {
                const bool pressure_read = request.command() == CommandId::ReadPressure;
                protocol::ByteWriter w;
                auto emit = [&](int ch) {
                    w.i16(pressure_read ? protocol::pressure_to_code(pressure(ch)) : protocol::flow_to_code(flow(ch)));
                };
                if (ch_byte == protocol::kBroadcastChannel) {
                    for (int ch = 0; ch < channel_count(); ++ch) {
                        emit(ch);
                    }
                } else {
                    emit(single_channel(ch_byte));
                }
                auto data = w.take();
                return protocol::msg::reply(id, ch_byte, data);
            }
            case CommandId::Enable:
            case CommandId::Disable:
                set_enabled(channel_or_all(ch_byte), request.command() == CommandId::Enable);
                return protocol::msg::reply(id, ch_byte);
            case CommandId::SetGains:
                try {
                    set_gains(channel_or_all(ch_byte), protocol::msg::parse_gains(request.payload));
                } catch (const ProtocolError&) {
                    throw DeviceError(DeviceErrorCode::MalformedPayload);
                }
                return protocol::msg::reply(id, ch_byte);
            case CommandId::SubscribeTelemetry:
                if (request.payload.size() > 1) {
                    throw DeviceError(DeviceErrorCode::MalformedPayload);
                }
                return protocol::msg::reply(id, ch_byte);
            case CommandId::InjectScenario: {
                protocol::msg::ScenarioRequest req;
                try {
                    req = protocol::msg::parse_inject(request.payload);
                } catch (const ProtocolError&) {
                    throw DeviceError(DeviceErrorCode::MalformedPayload);
                }
                const int ch = channel_or_all(ch_byte);
                if (req.kind == protocol::msg::ScenarioKind::Disturbance) {
                    inject_disturbance(ch, req.value, req.duration_s);
                } else {
                    scenario::ScenarioEvent ev;
                    ev.time_s = sim_time_s();
                    ev.channel = ch == kAll ? scenario::kAllChannels : ch;
                    ev.kind = scenario::EventKind::Leak;
                    ev.value = req.value;
                    ev.duration_s = req.duration_s;
                    schedule(ev);
                }
                return protocol::msg::reply(id, ch_byte);
            }
            case CommandId::Reply:
            case CommandId::Telemetry:
            case CommandId::Error:
                break;
            }
            throw DeviceError(DeviceErrorCode::UnknownCommand);
        } catch (const DeviceError& e) {
            return protocol::msg::error(id, ch_byte, e.code());
        }
    }

    // -- control tick ------------------------------------------------------

    TelemetrySnapshot tick()
    {
        apply_leak_events();
        for (int i = 0; i < channel_count(); ++i) {
            tick_one(i, channels_[static_cast<std::size_t>(i)]);
        }
        ++tick_count_;
        if (tick_count_ % 512 == 0) {
            for (auto& rt : channels_) {
                rt.disturbances.prune(tick_count_);
            }
        }
        return snapshot();
    }

    [[nodiscard]] TelemetrySnapshot snapshot() const
    {
        TelemetrySnapshot s;
        s.tick = tick_count_;
        s.channels.reserve(channels_.size());
        for (const auto& rt : channels_) {
            ChannelTelemetry t;
            t.pressure_kpa = rt.plant.pressure_kpa;
            t.target_kpa = rt.target_kpa;
            t.flow_lpm = rt.plant.last_flow_lpm;
            t.inflate_duty = rt.last_command.inflate_duty;
            t.deflate_duty = rt.last_command.deflate_duty;
            t.valve = rt.last_command.valve;
            t.enabled = rt.control.enabled;
            s.channels.push_back(t);
        }
        return s;
    }

    static constexpr int kAll = -1;

private:
    struct LeakEvent {
        scenario::Tick begin;
        scenario::Tick length;
        int channel;
        double value;
        bool started;
        std::vector<double> previous;
    };

    [[nodiscard]] std::size_t checked(int ch) const
    {
        if (ch < 0 || ch >= channel_count()) {
            throw DeviceError(DeviceErrorCode::ChannelOutOfRange, "channel " + std::to_string(ch));
        }
        return static_cast<std::size_t>(ch);
    }

    [[nodiscard]] int single_channel(std::uint8_t ch_byte) const
    {
        return static_cast<int>(checked(static_cast<int>(ch_byte)));
    }

    [[nodiscard]] int channel_or_all(std::uint8_t ch_byte) const
    {
        return ch_byte == protocol::kBroadcastChannel ? kAll : single_channel(ch_byte);
    }

    template <class Fn>
    void for_channels(int ch, Fn&& fn)
    {
        if (ch == kAll) {
            for (auto& rt : channels_) {
                fn(rt);
            }
        } else {
            fn(channels_[checked(ch)]);
        }
    }

    static void check_envelope(const ChannelRuntime& rt, double kpa)
    {
        if (!target_envelope(rt.params).contains(kpa)) {
            throw DeviceError(DeviceErrorCode::TargetOutOfRange, std::to_string(kpa) + " kPa");
        }
    }

    void schedule_disturbance(int ch, scenario::Tick begin, scenario::Tick length, double flow_lpm)
    {
        if (flow_lpm == 0.0 || length == 0) {
            for_channels(ch, [](ChannelRuntime&) {});
            return;
        }
        for_channels(ch, [&](ChannelRuntime& rt) {
            if (rt.disturbances.overlaps(begin, length)) {
                throw OverlappingDisturbance();
            }
        });
        for_channels(ch, [&](ChannelRuntime& rt) { rt.disturbances.schedule(begin, length, flow_lpm); });
    }

    void apply_leak_events()
    {
        for (auto& ev : leak_events_) {
            if (!ev.started && tick_count_ >= ev.begin) {
                ev.started = true;
                for_channels(ev.channel, [&](ChannelRuntime& rt) {
                    ev.previous.push_back(rt.params.chamber.leak_coefficient);
                    rt.params.chamber.leak_coefficient = ev.value;
                });
            }
            if (ev.started && ev.length > 0 && tick_count_ >= ev.begin + ev.length) {
                std::size_t k = 0;
                for_channels(ev.channel,
                             [&](ChannelRuntime& rt) { rt.params.chamber.leak_coefficient = ev.previous[k++]; });
                ev.length = 0;
                ev.begin = 0;
                ev.channel = kDone;
            }
        }
        std::erase_if(leak_events_, [](const LeakEvent& ev) { return ev.channel == kDone; });
    }

    void tick_one(int index, ChannelRuntime& rt)
    {
        if (config_.mode == Mode::ExternalPlant) {
            if (external_ == nullptr) {
                throw ConfigError("external plant mode without an attached plant");
            }
            const double reading = external_->read_pressure(index);
            const auto result =
                controller::tick_channel(reading, rt.target_kpa, rt.control, rt.pid, rt.last_command.valve);
            rt.pid = result.state;
            rt.last_command = result.command;
            external_->write_command(index, result.command);
            rt.plant.pressure_kpa = reading;
            rt.plant.valve = result.command.valve;
            rt.plant.last_flow_lpm = external_->read_flow(index);
            return;
        }

        rt.plant.disturbance_flow_lpm = rt.disturbances.flow_at(tick_count_);
        ActuationCommand command = ActuationCommand::idle(rt.last_command.valve);
        if (rt.control.enabled) {
            const double reading = rt.sensor.read(rt.plant);
            const auto result =
                controller::tick_channel(reading, rt.target_kpa, rt.control, rt.pid, rt.last_command.valve);
            rt.pid = result.state;
            command = result.command;
        }
        rt.last_command = command;
        rt.plant = plant::step_plant(rt.plant, command, rt.params, kTickPeriodS);
    }

    static constexpr int kDone = -2;

    DeviceConfig config_;
    std::vector<ChannelRuntime> channels_;
    std::vector<LeakEvent> leak_events_;
    std::uint64_t tick_count_ = 0;
    ExternalPlant* external_ = nullptr;
};

} // namespace openpneu::device
