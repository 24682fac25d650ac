#pragma once

// Host-side client: connect to a device (over TCP or an in-process
// simulated device), issue commands with timeout and retry, stream
// telemetry, record CSV and run scripted pressure trajectories.

#include "openpneu/analysis.hpp"
#include "openpneu/device.hpp"
#include "openpneu/errors.hpp"
#include "openpneu/protocol.hpp"
#include "openpneu/recording.hpp"
#include "openpneu/transport.hpp"

#include <nlohmann/json.hpp>

#include <poll.h>
#include <sys/socket.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace openpneu::host {

using namespace std::chrono_literals;

class EnvelopeViolation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bounded telemetry queue. Keeps ticks strictly increasing and drops the
/// oldest snapshot when full, counting every drop.
class SnapshotBuffer {
public:
    explicit SnapshotBuffer(std::size_t capacity = 1024) : capacity_(capacity) {}

    /// Returns false for stale or duplicate ticks.
    bool push(TelemetrySnapshot snapshot)
    {
        {
            std::lock_guard lock(mutex_);
            if (last_tick_ && snapshot.tick <= *last_tick_) {
                ++stale_;
                return false;
            }
            last_tick_ = snapshot.tick;
            if (queue_.size() >= capacity_) {
                queue_.pop_front();
                ++dropped_;
            }
            queue_.push_back(std::move(snapshot));
        }
        cv_.notify_all();
        return true;
    }

    std::optional<TelemetrySnapshot> pop(std::chrono::milliseconds timeout)
    {
        std::unique_lock lock(mutex_);
        cv_.wait_for(lock, timeout, [&] { return !queue_.empty() || closed_; });
        if (queue_.empty()) {
            if (closed_) {
                throw TransportClosed();
            }
            return std::nullopt;
        }
        auto s = std::move(queue_.front());
        queue_.pop_front();
        return s;
    }

    void close()
    {
        {
            std::lock_guard lock(mutex_);
            closed_ = true;
        }
        cv_.notify_all();
    }

    /// Forget the tick history, e.g. after resubscribing.
    void reset()
    {
        std::lock_guard lock(mutex_);
        queue_.clear();
        last_tick_.reset();
    }

    [[nodiscard]] std::uint64_t dropped() const
    {
        std::lock_guard lock(mutex_);
        return dropped_;
    }
    [[nodiscard]] std::uint64_t stale() const
    {
        std::lock_guard lock(mutex_);
        return stale_;
    }
    [[nodiscard]] std::size_t size() const
    {
        std::lock_guard lock(mutex_);
        return queue_.size();
    }
    [[nodiscard]] std::size_t capacity() const { return capacity_; }

private:
    std::size_t capacity_;
    mutable std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<TelemetrySnapshot> queue_;
    std::optional<std::uint64_t> last_tick_;
    std::uint64_t dropped_ = 0;
    std::uint64_t stale_ = 0;
    bool closed_ = false;
};

/// Byte-level connection to one device as seen by the host.
class Link {
public:
    virtual ~Link() = default;
    virtual void send(const protocol::Frame& frame) = 0;
    /// Reply or Error frame answering (request_id, channel), or nullopt on timeout.
    virtual std::optional<protocol::Frame> await_reply(std::uint8_t request_id, std::uint8_t channel,
                                                       std::chrono::milliseconds timeout) = 0;
    virtual std::optional<TelemetrySnapshot> next_snapshot(std::chrono::milliseconds timeout) = 0;
    /// Clock used to stamp recordings.
    virtual double elapsed_s() = 0;
    virtual std::uint64_t dropped_snapshots() const { return 0; }
    virtual void reset_stream() {}
};

namespace detail {
inline bool matches(const protocol::Frame& f, std::uint8_t request_id, std::uint8_t channel)
{
    const auto id = f.command();
    return (id == protocol::CommandId::Reply || id == protocol::CommandId::Error) && !f.payload.empty() &&
           f.payload[0] == request_id && f.channel == channel;
}
} // namespace detail

/// TCP connection with one background reader thread.
class TcpLink final : public Link {
public:
    TcpLink(const std::string& host, int port, std::size_t buffer_capacity = 1024)
        : fd_(transport::connect_tcp(host, port)), snapshots_(buffer_capacity),
          start_(std::chrono::steady_clock::now())
    {
        reader_ = std::jthread([this](std::stop_token stop) { read_loop(stop); });
    }

    ~TcpLink() override
    {
        reader_.request_stop();
        if (reader_.joinable()) {
            reader_.join();
        }
    }

    void send(const protocol::Frame& frame) override
    {
        if (closed_.load()) {
            throw TransportClosed();
        }
        const auto bytes = protocol::encode_frame(frame);
        std::lock_guard lock(write_mutex_);
        transport::write_all(fd_.get(), bytes);
    }

    std::optional<protocol::Frame> await_reply(std::uint8_t request_id, std::uint8_t channel,
                                               std::chrono::milliseconds timeout) override
    {
        std::unique_lock lock(reply_mutex_);
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        for (;;) {
            while (!replies_.empty()) {
                auto f = std::move(replies_.front());
                replies_.pop_front();
                if (detail::matches(f, request_id, channel)) {
                    return f;
                }
            }
            if (closed_.load()) {
                throw TransportClosed();
            }
            if (reply_cv_.wait_until(lock, deadline) == std::cv_status::timeout && replies_.empty()) {
                if (closed_.load()) {
                    throw TransportClosed();
                }
                return std::nullopt;
            }
        }
    }

    std::optional<TelemetrySnapshot> next_snapshot(std::chrono::milliseconds timeout) override
    {
        return snapshots_.pop(timeout);
    }

    double elapsed_s() override
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

    std::uint64_t dropped_snapshots() const override { return snapshots_.dropped(); }
    void reset_stream() override { snapshots_.reset(); }

private:
    void read_loop(std::stop_token stop)
    {
        protocol::FrameDecoder decoder;
        protocol::TelemetryAssembler assembler;
        std::array<std::uint8_t, 4096> buf{};
        while (!stop.stop_requested()) {
            pollfd p{fd_.get(), POLLIN, 0};
            if (::poll(&p, 1, 50) <= 0) {
                continue;
            }
            const auto n = ::recv(fd_.get(), buf.data(), buf.size(), 0);
            if (n <= 0) {
                if (n < 0 && errno == EINTR) {
                    continue;
                }
                break;
            }
            for (auto& frame : decoder.feed(std::span(buf.data(), static_cast<std::size_t>(n)))) {
                if (frame.command() == protocol::CommandId::Telemetry) {
                    try {
                        if (auto snapshot = assembler.push(frame)) {
                            snapshots_.push(std::move(*snapshot));
                        }
                    } catch (const ProtocolError&) {
                        // malformed telemetry part; wait for the next tick
                    }
                } else {
                    {
                        std::lock_guard lock(reply_mutex_);
                        replies_.push_back(std::move(frame));
                    }
                    reply_cv_.notify_all();
                }
            }
        }
        closed_.store(true);
        snapshots_.close();
        reply_cv_.notify_all();
    }

    transport::Fd fd_;
    SnapshotBuffer snapshots_;
    std::chrono::steady_clock::time_point start_;
    std::mutex write_mutex_;
    std::mutex reply_mutex_;
    std::condition_variable reply_cv_;
    std::deque<protocol::Frame> replies_;
    std::atomic<bool> closed_{false};
    std::jthread reader_;
};

/// In-process simulated device driven in lockstep with the host: requests
/// are applied at the current tick boundary, and simulated time only
/// advances when the host pulls the next snapshot. Telemetry passes through
/// the wire codec so the host sees exactly what a remote device would send.
class SimLink final : public Link {
public:
    explicit SimLink(device::DeviceConfig config)
        : device_(std::move(config)), default_decimation_(device_.config().telemetry_decimation)
    {
    }

    device::Device& device() { return device_; }

    void send(const protocol::Frame& frame) override { pending_.push_back(frame); }

    std::optional<protocol::Frame> await_reply(std::uint8_t request_id, std::uint8_t channel,
                                               std::chrono::milliseconds) override
    {
        process_pending();
        while (!replies_.empty()) {
            auto f = std::move(replies_.front());
            replies_.pop_front();
            if (detail::matches(f, request_id, channel)) {
                return f;
            }
        }
        return std::nullopt;
    }

    std::optional<TelemetrySnapshot> next_snapshot(std::chrono::milliseconds) override
    {
        process_pending();
        if (decimation_ == 0) {
            return std::nullopt;
        }
        for (;;) {
            const auto snapshot = device_.tick();
            if (snapshot.tick % decimation_ != 0) {
                continue;
            }
            std::optional<TelemetrySnapshot> out;
            for (const auto& frame : protocol::encode_telemetry(snapshot)) {
                out = assembler_.push(frame);
            }
            return out;
        }
    }

    double elapsed_s() override { return device_.sim_time_s(); }

private:
    void process_pending()
    {
        for (const auto& frame : pending_) {
            auto reply = device_.apply_command(frame);
            if (frame.command() == protocol::CommandId::SubscribeTelemetry &&
                reply.command() == protocol::CommandId::Reply) {
                decimation_ = frame.payload.empty() ? default_decimation_ : frame.payload[0];
            }
            replies_.push_back(std::move(reply));
        }
        pending_.clear();
    }

    device::Device device_;
    unsigned default_decimation_;
    unsigned decimation_ = 0;
    std::vector<protocol::Frame> pending_;
    std::deque<protocol::Frame> replies_;
    protocol::TelemetryAssembler assembler_;
};

struct RetryPolicy {
    std::chrono::milliseconds timeout = 200ms;
    int retries = 3;
};

struct DeviceInfo {
    std::uint8_t protocol_version = 0;
    std::uint8_t firmware_major = 0;
    std::uint8_t firmware_minor = 0;
    int channel_count = 0;
};

// ---------------------------------------------------------------------------
// Trajectories

inline constexpr int kAllChannels = -1;

struct TrajectoryPoint {
    double time_s = 0.0;
    int channel = 0; // kAllChannels applies target_kpa (or targets) to every channel
    double target_kpa = 0.0;
    std::vector<double> targets; // per-channel list for a broadcast point
};

struct Trajectory {
    std::vector<TrajectoryPoint> points;
    int loops = 1;
    double hold_s = 2.0; // time after the last point before the run ends
};

struct TargetEnvelope {
    double min_kpa = -50.0;
    double max_kpa = 80.0;
};

inline void validate(const Trajectory& traj, const TargetEnvelope& envelope = {})
{
    if (traj.loops < 1) {
        throw ConfigError("trajectory loop count must be >= 1");
    }
    if (!(traj.hold_s >= 0.0)) {
        throw ConfigError("trajectory hold_s must be >= 0");
    }
    double last = 0.0;
    for (const auto& p : traj.points) {
        if (p.time_s < last || p.time_s < 0.0) {
            throw ConfigError("trajectory times must be non-decreasing and non-negative");
        }
        last = p.time_s;
        auto check = [&](double kpa) {
            if (kpa < envelope.min_kpa || kpa > envelope.max_kpa) {
                throw EnvelopeViolation("trajectory target " + std::to_string(kpa) + " kPa outside [" +
                                        std::to_string(envelope.min_kpa) + ", " + std::to_string(envelope.max_kpa) +
                                        "]");
            }
        };
        if (p.targets.empty()) {
            check(p.target_kpa);
        }
        for (double t : p.targets) {
            check(t);
        }
        if (!p.targets.empty() && p.channel != kAllChannels) {
            throw ConfigError("a target list needs channel \"all\"");
        }
    }
}

/// {"loop": 1, "hold_s": 2.0, "points": [{"time_s": 0, "channel": 0, "target_kpa": 30},
///                                       {"time_s": 1, "channel": "all", "targets": [..]}]}
inline Trajectory trajectory_from_json(const nlohmann::json& j)
{
    Trajectory t;
    try {
        t.loops = j.value("loop", 1);
        t.hold_s = j.value("hold_s", 2.0);
        for (const auto& item : j.at("points")) {
            TrajectoryPoint p;
            p.time_s = item.at("time_s").get<double>();
            const auto& ch = item.at("channel");
            if (ch.is_string()) {
                if (ch.get<std::string>() != "all") {
                    throw ConfigError("channel must be an index or \"all\"");
                }
                p.channel = kAllChannels;
            } else {
                p.channel = ch.get<int>();
            }
            if (item.contains("targets")) {
                p.targets = item.at("targets").get<std::vector<double>>();
            } else {
                p.target_kpa = item.at("target_kpa").get<double>();
            }
            t.points.push_back(std::move(p));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad trajectory: ") + e.what());
    }
    return t;
}

inline Trajectory load_trajectory(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open trajectory " + path);
    }
    try {
        return trajectory_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("trajectory " + path + ": " + e.what());
    }
}

struct StepReport {
    int channel = 0;
    std::uint64_t issue_tick = 0; // snapshot tick after which the setpoint was sent
    std::uint64_t end_tick = 0;   // last tick of the hold
    double start_kpa = 0.0;
    double target_kpa = 0.0;
    analysis::StepMetrics metrics;
};

struct TrajectoryReport {
    std::vector<StepReport> steps;
    std::uint64_t start_tick = 0;
    std::uint64_t end_tick = 0;

    [[nodiscard]] bool all_settled() const
    {
        return std::all_of(steps.begin(), steps.end(), [](const StepReport& s) { return s.metrics.settled(); });
    }
    [[nodiscard]] double max_settle_s() const
    {
        double worst = 0.0;
        for (const auto& s : steps) {
            worst = std::max(worst, s.metrics.settled() ? s.metrics.settle_time_s
                                                        : std::numeric_limits<double>::infinity());
        }
        return worst;
    }
    [[nodiscard]] double max_overshoot_kpa() const
    {
        double worst = 0.0;
        for (const auto& s : steps) {
            worst = std::max(worst, s.metrics.overshoot_kpa);
        }
        return worst;
    }
};

inline nlohmann::json report_to_json(const TrajectoryReport& r)
{
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : r.steps) {
        nlohmann::json j;
        j["channel"] = s.channel;
        j["issue_tick"] = s.issue_tick;
        j["start_kpa"] = s.start_kpa;
        j["target_kpa"] = s.target_kpa;
        j["settled"] = s.metrics.settled();
        j["settle_time_s"] = s.metrics.settled() ? nlohmann::json(s.metrics.settle_time_s) : nlohmann::json(nullptr);
        j["overshoot_kpa"] = s.metrics.overshoot_kpa;
        j["steady_state_error_kpa"] = s.metrics.steady_state_error_kpa;
        j["oscillation_kpa"] = s.metrics.oscillation_kpa;
        steps.push_back(j);
    }
    return nlohmann::json{{"start_tick", r.start_tick}, {"end_tick", r.end_tick}, {"steps", steps}};
}

// ---------------------------------------------------------------------------

class Client;

/// Telemetry subscription; unsubscribes when destroyed.
class Subscription {
public:
    Subscription(const Subscription&) = delete;
    Subscription& operator=(const Subscription&) = delete;
    Subscription(Subscription&& other) noexcept : client_(std::exchange(other.client_, nullptr)) {}
    ~Subscription();

    /// Next snapshot in tick order, or nullopt on timeout.
    std::optional<TelemetrySnapshot> next(std::chrono::milliseconds timeout = 1000ms);
    [[nodiscard]] std::uint64_t dropped() const;

private:
    friend class Client;
    explicit Subscription(Client* client) : client_(client) {}
    Client* client_;
};

class Client {
public:
    explicit Client(std::unique_ptr<Link> link, RetryPolicy policy = {}) : link_(std::move(link)), policy_(policy)
    {
        info_ = ping();
    }

    Client(const Client&) = delete;
    Client& operator=(const Client&) = delete;

    [[nodiscard]] Link& link() { return *link_; }
    [[nodiscard]] const DeviceInfo& info() const { return info_; }
    [[nodiscard]] int channel_count() const { return info_.channel_count; }

    DeviceInfo ping()
    {
        const auto reply = request(protocol::msg::ping());
        if (reply.payload.size() < 5) {
            throw ProtocolError("short Ping reply");
        }
        return DeviceInfo{reply.payload[1], reply.payload[2], reply.payload[3], reply.payload[4]};
    }

    void set_pressure(int channel, double kpa) { request(protocol::msg::set_target(channel_byte(channel), kpa)); }

    void set_all(std::span<const double> kpa)
    {
        if (static_cast<int>(kpa.size()) != channel_count()) {
            throw DeviceError(DeviceErrorCode::LengthMismatch, std::to_string(kpa.size()) + " targets for " +
                                                                  std::to_string(channel_count()) + " channels");
        }
        request(protocol::msg::set_all_targets(kpa));
    }

    double read_pressure(int channel) { return read_one(protocol::msg::read_pressure(channel_byte(channel)), true); }
    double read_flow(int channel) { return read_one(protocol::msg::read_flow(channel_byte(channel)), false); }

    std::vector<double> read_all_pressures() { return read_all(protocol::msg::read_pressure(protocol::kBroadcastChannel), true); }
    std::vector<double> read_all_flows() { return read_all(protocol::msg::read_flow(protocol::kBroadcastChannel), false); }

    void enable(int channel) { request(protocol::msg::enable(channel_or_all(channel))); }
    void disable(int channel) { request(protocol::msg::disable(channel_or_all(channel))); }
    void set_gains(int channel, const controller::PidGains& gains)
    {
        request(protocol::msg::set_gains(channel_or_all(channel), gains));
    }
    void inject(int channel, const protocol::msg::ScenarioRequest& req)
    {
        request(protocol::msg::inject(channel_or_all(channel), req));
    }

    Subscription stream_telemetry(std::optional<std::uint8_t> decimation = std::nullopt)
    {
        link_->reset_stream();
        request(protocol::msg::subscribe(decimation));
        return Subscription(this);
    }

    /// Delivers snapshots to `callback` until it returns false or `count` snapshots arrived.
    void stream_telemetry(const std::function<bool(const TelemetrySnapshot&)>& callback, std::size_t count,
                          std::optional<std::uint8_t> decimation = std::nullopt)
    {
        auto sub = stream_telemetry(decimation);
        for (std::size_t i = 0; i < count; ++i) {
            auto s = sub.next(2000ms);
            if (!s) {
                throw Timeout();
            }
            if (!callback(*s)) {
                break;
            }
        }
    }

    /// Records `duration_s` of simulated time (by telemetry tick) to CSV.
    void record_csv(std::ostream& out, double duration_s, std::optional<std::uint8_t> decimation = std::nullopt)
    {
        recording::CsvWriter writer(out);
        auto sub = stream_telemetry(decimation);
        const double t0 = link_->elapsed_s();
        std::optional<std::uint64_t> first_tick;
        const auto span_ticks = static_cast<std::uint64_t>(std::llround(duration_s / kTickPeriodS));
        for (;;) {
            auto s = sub.next(2000ms);
            if (!s) {
                throw Timeout();
            }
            if (!first_tick) {
                first_tick = s->tick;
            }
            if (s->tick - *first_tick > span_ticks) {
                break;
            }
            writer.write(*s, link_->elapsed_s() - t0);
        }
    }

    void record_csv(const std::string& path, double duration_s, std::optional<std::uint8_t> decimation = std::nullopt)
    {
        std::ofstream out(path);
        if (!out) {
            throw ConfigError("cannot write " + path);
        }
        record_csv(out, duration_s, decimation);
    }

    /// Issues the trajectory's setpoints on telemetry tick boundaries and
    /// reports per-step settling, overshoot, steady-state error and
    /// oscillation. Every received snapshot is also written to `csv` if given.
    TrajectoryReport run_trajectory(const Trajectory& traj, std::ostream* csv = nullptr,
                                    const TargetEnvelope& envelope = {})
    {
        validate(traj, envelope);
        for (const auto& p : traj.points) {
            if (p.channel != kAllChannels && (p.channel < 0 || p.channel >= channel_count())) {
                throw DeviceError(DeviceErrorCode::ChannelOutOfRange, std::to_string(p.channel));
            }
            if (!p.targets.empty() && static_cast<int>(p.targets.size()) != channel_count()) {
                throw DeviceError(DeviceErrorCode::LengthMismatch);
            }
        }

        struct Scheduled {
            std::uint64_t offset;
            const TrajectoryPoint* point;
        };
        const double period = (traj.points.empty() ? 0.0 : traj.points.back().time_s) + traj.hold_s;
        std::vector<Scheduled> schedule;
        for (int loop = 0; loop < traj.loops; ++loop) {
            for (const auto& p : traj.points) {
                schedule.push_back(
                    Scheduled{static_cast<std::uint64_t>(std::llround((p.time_s + loop * period) / kTickPeriodS)), &p});
            }
        }
        const auto total = static_cast<std::uint64_t>(std::llround(traj.loops * period / kTickPeriodS));

        std::optional<recording::CsvWriter> writer;
        if (csv != nullptr) {
            writer.emplace(*csv);
        }
        auto sub = stream_telemetry(std::uint8_t{1});
        const double t0 = link_->elapsed_s();
        auto current = sub.next(2000ms);
        if (!current) {
            throw Timeout();
        }
        const std::uint64_t start = current->tick;

        struct Issue {
            int channel;
            std::uint64_t tick;
            double start_kpa;
            double target_kpa;
        };
        std::vector<Issue> issues;
        std::map<int, std::vector<std::pair<std::uint64_t, double>>> traces;

        std::size_t next = 0;
        for (;;) {
            if (writer) {
                writer->write(*current, link_->elapsed_s() - t0);
            }
            for (std::size_t ch = 0; ch < current->channels.size(); ++ch) {
                traces[static_cast<int>(ch)].emplace_back(current->tick, current->channels[ch].pressure_kpa);
            }
            const std::uint64_t elapsed = current->tick - start;
            while (next < schedule.size() && schedule[next].offset <= elapsed) {
                const auto& p = *schedule[next].point;
                if (p.channel == kAllChannels) {
                    std::vector<double> targets =
                        p.targets.empty() ? std::vector<double>(static_cast<std::size_t>(channel_count()), p.target_kpa)
                                          : p.targets;
                    set_all(targets);
                    for (int ch = 0; ch < channel_count(); ++ch) {
                        issues.push_back(Issue{ch, current->tick,
                                               current->channels[static_cast<std::size_t>(ch)].pressure_kpa,
                                               targets[static_cast<std::size_t>(ch)]});
                    }
                } else {
                    set_pressure(p.channel, p.target_kpa);
                    issues.push_back(Issue{p.channel, current->tick,
                                           current->channels[static_cast<std::size_t>(p.channel)].pressure_kpa,
                                           p.target_kpa});
                }
                ++next;
            }
            if (elapsed >= total && next >= schedule.size()) {
                break;
            }
            current = sub.next(2000ms);
            if (!current) {
                throw Timeout();
            }
        }

        TrajectoryReport report;
        report.start_tick = start;
        report.end_tick = current->tick;
        for (std::size_t i = 0; i < issues.size(); ++i) {
            const auto& is = issues[i];
            std::uint64_t end = report.end_tick;
            for (std::size_t j = i + 1; j < issues.size(); ++j) {
                if (issues[j].channel == is.channel) {
                    end = issues[j].tick;
                    break;
                }
            }
            std::vector<analysis::Sample> samples;
            for (const auto& [tick, p] : traces[is.channel]) {
                if (tick > is.tick && tick <= end) {
                    samples.push_back(analysis::Sample{static_cast<double>(tick - is.tick) * kTickPeriodS, p});
                }
            }
            report.steps.push_back(StepReport{is.channel, is.tick, end, is.start_kpa, is.target_kpa,
                                              analysis::step_metrics(samples, is.start_kpa, is.target_kpa)});
        }
        return report;
    }

private:
    friend class Subscription;

    protocol::Frame request(const protocol::Frame& frame)
    {
        std::lock_guard lock(mutex_);
        for (int attempt = 0; attempt <= policy_.retries; ++attempt) {
            link_->send(frame);
            auto reply = link_->await_reply(frame.command_id, frame.channel, policy_.timeout);
            if (!reply) {
                continue;
            }
            if (reply->command() == protocol::CommandId::Error) {
                const auto code = reply->payload.size() >= 2 ? static_cast<DeviceErrorCode>(reply->payload[1])
                                                             : DeviceErrorCode::UnknownCommand;
                throw DeviceError(code);
            }
            return std::move(*reply);
        }
        throw Timeout();
    }

    [[nodiscard]] std::uint8_t channel_byte(int channel) const
    {
        if (channel < 0 || channel >= 0xFF) {
            throw DeviceError(DeviceErrorCode::ChannelOutOfRange, std::to_string(channel));
        }
        return static_cast<std::uint8_t>(channel);
    }

    [[nodiscard]] std::uint8_t channel_or_all(int channel) const
    {
        return channel == kAllChannels ? protocol::kBroadcastChannel : channel_byte(channel);
    }

    double read_one(const protocol::Frame& frame, bool pressure)
    {
        const auto reply = request(frame);
        if (reply.payload.size() != 3) {
            throw ProtocolError("unexpected read reply length");
        }
        protocol::ByteReader r(std::span(reply.payload).subspan(1));
        const auto code = r.i16();
        return pressure ? protocol::code_to_pressure(code) : protocol::code_to_flow(code);
    }

    std::vector<double> read_all(const protocol::Frame& frame, bool pressure)
    {
        const auto reply = request(frame);
        protocol::ByteReader r(std::span(reply.payload).subspan(1));
        std::vector<double> values;
        while (r.remaining() >= 2) {
            const auto code = r.i16();
            values.push_back(pressure ? protocol::code_to_pressure(code) : protocol::code_to_flow(code));
        }
        return values;
    }

    void unsubscribe() noexcept
    {
        try {
            request(protocol::msg::subscribe(std::uint8_t{0}));
        } catch (...) {
            // connection already gone
        }
    }

    std::unique_ptr<Link> link_;
    RetryPolicy policy_;
    DeviceInfo info_;
    std::mutex mutex_;
};

inline Subscription::~Subscription()
{
    if (client_ != nullptr) {
        client_->unsubscribe();
    }
}

inline std::optional<TelemetrySnapshot> Subscription::next(std::chrono::milliseconds timeout)
{
    return client_->link_->next_snapshot(timeout);
}

inline std::uint64_t Subscription::dropped() const { return client_->link_->dropped_snapshots(); }

} // namespace openpneu::host
