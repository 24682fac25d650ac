#pragma once

// Real-time serve loop. One thread owns the Device; transport sessions only
// exchange frames with it. Commands that arrive during a tick period are
// applied together at the next tick boundary, then the tick runs and
// telemetry goes out to subscribed sessions.

#include "openpneu/device.hpp"
#include "openpneu/protocol.hpp"
#include "openpneu/transport.hpp"

#include <poll.h>

#include <array>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stop_token>
#include <vector>

namespace openpneu::server {

struct LoopOptions {
    bool accelerated = false;
    double tick_rate_hz = 50.0;
    unsigned telemetry_decimation = 2;
    std::optional<std::uint64_t> max_ticks; // stop after this many ticks
    std::size_t max_output_backlog = 1 << 20;
};

struct LoopStats {
    std::uint64_t ticks = 0;
    std::uint64_t commands = 0;
    std::uint64_t late_ticks = 0; // ticks started more than one period late
    std::chrono::nanoseconds worst_lateness{0};
};

/// Frames a session may send without being the commander.
inline bool is_read_only(protocol::CommandId id)
{
    using protocol::CommandId;
    return id == CommandId::Ping || id == CommandId::ReadPressure || id == CommandId::ReadFlow ||
           id == CommandId::SubscribeTelemetry;
}

class ControlLoop {
public:
    using SnapshotObserver = std::function<void(const TelemetrySnapshot&)>;

    ControlLoop(device::Device& device, LoopOptions options) : device_(device), options_(options) {}

    /// Accepts TCP sessions on an already listening socket.
    void add_listener(transport::Fd listener) { listener_ = std::move(listener); }

    /// Serves one session over a pair of descriptors, e.g. stdin/stdout.
    int add_stream_session(int in_fd, int out_fd)
    {
        transport::set_nonblocking(in_fd);
        return add_session(Session{transport::Fd{}, in_fd, out_fd});
    }

    /// Scripted command applied at the boundary before tick `tick` runs
    /// (after tick_count() == tick). Replies are passed to the observer.
    void schedule_command(std::uint64_t tick, protocol::Frame frame)
    {
        scripted_.emplace(tick, std::move(frame));
    }

    void on_snapshot(SnapshotObserver observer) { observer_ = std::move(observer); }
    void on_scripted_reply(std::function<void(const protocol::Frame&)> fn) { scripted_reply_ = std::move(fn); }

    [[nodiscard]] const LoopStats& stats() const { return stats_; }
    [[nodiscard]] std::size_t session_count() const { return sessions_.size(); }

    void run(std::stop_token stop = {})
    {
        using clock = std::chrono::steady_clock;
        const auto period = std::chrono::duration_cast<clock::duration>(
            std::chrono::duration<double>(1.0 / options_.tick_rate_hz));
        auto deadline = clock::now() + period;

        while (!stop.stop_requested()) {
            if (options_.max_ticks && stats_.ticks >= *options_.max_ticks) {
                break;
            }
            int timeout_ms = 0;
            if (!options_.accelerated) {
                const auto remaining = deadline - clock::now();
                timeout_ms = remaining > clock::duration::zero()
                                 ? static_cast<int>(std::chrono::ceil<std::chrono::milliseconds>(remaining).count())
                                 : 0;
                timeout_ms = std::min(timeout_ms, 50);
            }
            service_io(timeout_ms);

            const auto now = clock::now();
            if (!options_.accelerated && now < deadline) {
                continue;
            }
            if (!options_.accelerated) {
                const auto lateness = now - deadline;
                if (lateness > period) {
                    ++stats_.late_ticks;
                }
                stats_.worst_lateness = std::max(stats_.worst_lateness,
                                                 std::chrono::duration_cast<std::chrono::nanoseconds>(lateness));
                deadline += period;
                if (now - deadline > 10 * period) {
                    deadline = now + period; // fell far behind (suspended); resynchronize
                }
            }
            run_tick();
        }
        flush_all();
    }

private:
    struct Session {
        Session(transport::Fd fd, int in, int out) : owned(std::move(fd)), in_fd(in), out_fd(out) {}

        transport::Fd owned;
        int in_fd = -1;
        int out_fd = -1;
        protocol::FrameDecoder decoder;
        std::vector<std::uint8_t> outbox;
        unsigned decimation = 0; // 0 = not subscribed
        bool closed = false;
    };

    int add_session(Session s)
    {
        const int id = next_session_id_++;
        sessions_.emplace(id, std::make_unique<Session>(std::move(s)));
        if (!commander_) {
            commander_ = id;
        }
        return id;
    }

    void service_io(int timeout_ms)
    {
        std::vector<pollfd> fds;
        std::vector<int> owners; // session id per entry, -1 for the listener
        if (listener_) {
            fds.push_back(pollfd{listener_.get(), POLLIN, 0});
            owners.push_back(-1);
        }
        for (auto& [id, s] : sessions_) {
            fds.push_back(pollfd{s->in_fd, POLLIN, 0});
            owners.push_back(id);
            if (!s->outbox.empty() && s->out_fd != s->in_fd) {
                fds.push_back(pollfd{s->out_fd, POLLOUT, 0});
                owners.push_back(id);
            } else if (!s->outbox.empty()) {
                fds.back().events |= POLLOUT;
            }
        }
        if (fds.empty()) {
            if (timeout_ms > 0) {
                ::poll(nullptr, 0, timeout_ms);
            }
            return;
        }
        if (::poll(fds.data(), fds.size(), timeout_ms) <= 0) {
            return;
        }
        for (std::size_t i = 0; i < fds.size(); ++i) {
            if (fds[i].revents == 0) {
                continue;
            }
            if (owners[i] == -1) {
                accept_pending();
                continue;
            }
            auto it = sessions_.find(owners[i]);
            if (it == sessions_.end()) {
                continue;
            }
            Session& s = *it->second;
            if ((fds[i].revents & (POLLIN | POLLHUP | POLLERR)) && fds[i].fd == s.in_fd) {
                read_session(owners[i], s);
            }
            if ((fds[i].revents & POLLOUT) && fds[i].fd == s.out_fd) {
                flush(s);
            }
        }
        reap();
    }

    void accept_pending()
    {
        for (;;) {
            auto fd = transport::accept_client(listener_.get());
            if (!fd) {
                return;
            }
            const int raw = fd.get();
            add_session(Session{std::move(fd), raw, raw});
        }
    }

    void read_session(int id, Session& s)
    {
        std::array<std::uint8_t, 4096> buf{};
        for (;;) {
            std::size_t got = 0;
            const auto status = transport::read_some(s.in_fd, buf, got);
            if (status == transport::ReadStatus::Data) {
                for (auto& frame : s.decoder.feed(std::span(buf.data(), got))) {
                    inbox_.push_back(Pending{id, std::move(frame)});
                }
                continue;
            }
            if (status == transport::ReadStatus::Closed) {
                s.closed = true;
            }
            return;
        }
    }

    void flush(Session& s)
    {
        while (!s.outbox.empty()) {
            const auto n = ::send(s.out_fd, s.outbox.data(), s.outbox.size(), MSG_NOSIGNAL | MSG_DONTWAIT);
            ssize_t written = n;
            if (n < 0 && errno == ENOTSOCK) {
                written = ::write(s.out_fd, s.outbox.data(), s.outbox.size());
            }
            if (written > 0) {
                s.outbox.erase(s.outbox.begin(), s.outbox.begin() + written);
                continue;
            }
            if (written < 0 && (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR)) {
                return;
            }
            s.closed = true;
            return;
        }
    }

    void flush_all()
    {
        for (auto& [id, s] : sessions_) {
            flush(*s);
        }
    }

    void reap()
    {
        for (auto it = sessions_.begin(); it != sessions_.end();) {
            if (it->second->closed) {
                if (commander_ == it->first) {
                    commander_.reset();
                }
                it = sessions_.erase(it);
            } else {
                ++it;
            }
        }
        if (!commander_ && !sessions_.empty()) {
            commander_ = sessions_.begin()->first; // oldest remaining session
        }
    }

    void send(Session& s, const protocol::Frame& frame)
    {
        const auto bytes = protocol::encode_frame(frame);
        s.outbox.insert(s.outbox.end(), bytes.begin(), bytes.end());
        if (s.outbox.size() > options_.max_output_backlog) {
            s.closed = true; // consumer is not keeping up
        }
    }

    protocol::Frame process(int session_id, const protocol::Frame& request, Session* session)
    {
        ++stats_.commands;
        const auto id = request.command();
        if (session != nullptr && !is_read_only(id) && commander_ != session_id) {
            return protocol::msg::error(request.command_id, request.channel, DeviceErrorCode::NotCommander);
        }
        auto reply = device_.apply_command(request);
        if (session != nullptr && id == protocol::CommandId::SubscribeTelemetry &&
            reply.command() == protocol::CommandId::Reply) {
            session->decimation = request.payload.empty() ? options_.telemetry_decimation : request.payload[0];
        }
        return reply;
    }

    void run_tick()
    {
        const auto boundary = device_.tick_count();
        for (auto it = scripted_.begin(); it != scripted_.end() && it->first <= boundary;) {
            const auto reply = process(-1, it->second, nullptr);
            if (scripted_reply_) {
                scripted_reply_(reply);
            }
            it = scripted_.erase(it);
        }
        for (auto& pending : inbox_) {
            auto found = sessions_.find(pending.session);
            Session* s = found == sessions_.end() ? nullptr : found->second.get();
            if (s == nullptr) {
                continue;
            }
            send(*s, process(pending.session, pending.frame, s));
        }
        inbox_.clear();

        const auto snapshot = device_.tick();
        ++stats_.ticks;
        if (observer_) {
            observer_(snapshot);
        }
        std::optional<std::vector<protocol::Frame>> frames;
        for (auto& [id, s] : sessions_) {
            if (s->decimation == 0 || snapshot.tick % s->decimation != 0) {
                continue;
            }
            if (!frames) {
                frames = protocol::encode_telemetry(snapshot);
            }
            for (const auto& f : *frames) {
                send(*s, f);
            }
        }
        flush_all();
        reap();
    }

    struct Pending {
        int session;
        protocol::Frame frame;
    };

    device::Device& device_;
    LoopOptions options_;
    transport::Fd listener_;
    std::map<int, std::unique_ptr<Session>> sessions_;
    std::optional<int> commander_;
    int next_session_id_ = 1;
    std::vector<Pending> inbox_;
    std::multimap<std::uint64_t, protocol::Frame> scripted_;
    SnapshotObserver observer_;
    std::function<void(const protocol::Frame&)> scripted_reply_;
    LoopStats stats_;
};

} // namespace openpneu::server
