#pragma once

// WebSocket bridge between a host Client and the browser console.
//
// Telemetry goes out as text messages
//   {"type":"telemetry","tick":N,"channels":[{"p":kPa,"t":kPa,"q":L/min,
//     "di":duty,"dd":duty,"v":0|1,"en":bool}, ...]}
// where di/dd are PWM duty fractions (0..1) and v is 0 for the inflate path
// and 1 for the deflate path. Commands come in as
//   {"type":"set_target","channel":0,"kpa":30}
//   {"type":"set_all","kpa":[...]}
//   {"type":"enable"|"disable","channel":0|"all"}
//   {"type":"inject_disturbance","channel":0|"all","flow_lpm":0.5,"duration_s":0.5}
//   {"type":"set_leak","channel":0|"all","coefficient":0.02,"duration_s":0}
// and are answered with {"type":"ack","request":<type>} or
// {"type":"error","request":<type>,"code":<name>,"message":<text>}.
// Plain HTTP GET requests are served from the assets directory.

#include "openpneu/errors.hpp"
#include "openpneu/host.hpp"
#include "openpneu/transport.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <openssl/sha.h>

#include <poll.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cerrno>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stop_token>
#include <string>
#include <string_view>
#include <vector>

namespace openpneu::ui {

namespace ws {

enum class Opcode : std::uint8_t { Continuation = 0x0, Text = 0x1, Binary = 0x2, Close = 0x8, Ping = 0x9, Pong = 0xA };

inline constexpr std::size_t kMaxMessage = 1 << 20;

/// Sec-WebSocket-Accept for a client key.
inline std::string accept_key(std::string_view client_key)
{
    std::string input(client_key);
    input += "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
    std::array<unsigned char, SHA_DIGEST_LENGTH> digest{};
    SHA1(reinterpret_cast<const unsigned char*>(input.data()), input.size(), digest.data());
    std::array<unsigned char, 4 * ((SHA_DIGEST_LENGTH + 2) / 3) + 1> out{};
    const int n = EVP_EncodeBlock(out.data(), digest.data(), static_cast<int>(digest.size()));
    return std::string(reinterpret_cast<const char*>(out.data()), static_cast<std::size_t>(n));
}

/// One frame. Servers send unmasked frames; clients must mask.
inline std::vector<std::uint8_t> encode(Opcode op, std::string_view payload,
                                        std::optional<std::array<std::uint8_t, 4>> mask = std::nullopt)
{
    std::vector<std::uint8_t> out;
    out.push_back(static_cast<std::uint8_t>(0x80 | static_cast<std::uint8_t>(op)));
    const std::uint8_t mask_bit = mask ? 0x80 : 0x00;
    const std::size_t n = payload.size();
    if (n < 126) {
        out.push_back(static_cast<std::uint8_t>(mask_bit | n));
    } else if (n <= 0xFFFF) {
        out.push_back(static_cast<std::uint8_t>(mask_bit | 126));
        out.push_back(static_cast<std::uint8_t>(n >> 8));
        out.push_back(static_cast<std::uint8_t>(n));
    } else {
        out.push_back(static_cast<std::uint8_t>(mask_bit | 127));
        for (int i = 7; i >= 0; --i) {
            out.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(n) >> (8 * i)));
        }
    }
    if (mask) {
        out.insert(out.end(), mask->begin(), mask->end());
    }
    for (std::size_t i = 0; i < n; ++i) {
        auto b = static_cast<std::uint8_t>(payload[i]);
        out.push_back(mask ? static_cast<std::uint8_t>(b ^ (*mask)[i % 4]) : b);
    }
    return out;
}

struct Message {
    Opcode opcode;
    std::string payload;
};

/// Incremental frame parser that joins fragmented messages.
class Decoder {
public:
    void push(std::span<const std::uint8_t> bytes) { buffer_.insert(buffer_.end(), bytes.begin(), bytes.end()); }

    /// Next complete message; throws ProtocolError on malformed or oversized input.
    std::optional<Message> poll()
    {
        for (;;) {
            if (buffer_.size() < 2) {
                return std::nullopt;
            }
            const bool fin = (buffer_[0] & 0x80) != 0;
            const auto op = static_cast<Opcode>(buffer_[0] & 0x0F);
            const bool masked = (buffer_[1] & 0x80) != 0;
            std::uint64_t len = buffer_[1] & 0x7F;
            std::size_t pos = 2;
            if (len == 126) {
                if (buffer_.size() < 4) {
                    return std::nullopt;
                }
                len = (static_cast<std::uint64_t>(buffer_[2]) << 8) | buffer_[3];
                pos = 4;
            } else if (len == 127) {
                if (buffer_.size() < 10) {
                    return std::nullopt;
                }
                len = 0;
                for (std::size_t i = 0; i < 8; ++i) {
                    len = (len << 8) | buffer_[2 + i];
                }
                pos = 10;
            }
            if (len > kMaxMessage) {
                throw ProtocolError("websocket frame too large");
            }
            std::array<std::uint8_t, 4> key{};
            if (masked) {
                if (buffer_.size() < pos + 4) {
                    return std::nullopt;
                }
                std::copy_n(buffer_.begin() + static_cast<std::ptrdiff_t>(pos), 4, key.begin());
                pos += 4;
            }
            if (buffer_.size() < pos + len) {
                return std::nullopt;
            }
            std::string payload(len, '\0');
            for (std::size_t i = 0; i < len; ++i) {
                const auto b = buffer_[pos + i];
                payload[i] = static_cast<char>(masked ? b ^ key[i % 4] : b);
            }
            buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(pos + len));

            const auto code = static_cast<std::uint8_t>(op);
            if (code >= 0x8) {
                return Message{op, std::move(payload)}; // control frames are never fragmented
            }
            if (op != Opcode::Continuation) {
                partial_opcode_ = op;
                partial_.clear();
            } else if (!partial_opcode_) {
                throw ProtocolError("unexpected continuation frame");
            }
            partial_ += payload;
            if (partial_.size() > kMaxMessage) {
                throw ProtocolError("websocket message too large");
            }
            if (fin) {
                Message m{*partial_opcode_, std::move(partial_)};
                partial_.clear();
                partial_opcode_.reset();
                return m;
            }
        }
    }

private:
    std::vector<std::uint8_t> buffer_;
    std::string partial_;
    std::optional<Opcode> partial_opcode_;
};

} // namespace ws

inline nlohmann::json telemetry_message(const TelemetrySnapshot& s)
{
    nlohmann::json channels = nlohmann::json::array();
    for (const auto& ch : s.channels) {
        channels.push_back({{"p", ch.pressure_kpa},
                            {"t", ch.target_kpa},
                            {"q", ch.flow_lpm},
                            {"di", ch.inflate_duty.fraction()},
                            {"dd", ch.deflate_duty.fraction()},
                            {"v", ch.valve == Valve::InflatePath ? 0 : 1},
                            {"en", ch.enabled}});
    }
    return {{"type", "telemetry"}, {"tick", s.tick}, {"channels", channels}};
}

namespace detail {

inline int channel_field(const nlohmann::json& msg)
{
    const auto& ch = msg.at("channel");
    if (ch.is_string()) {
        if (ch.get<std::string>() != "all") {
            throw DeviceError(DeviceErrorCode::ChannelOutOfRange, ch.get<std::string>());
        }
        return host::kAllChannels;
    }
    return ch.get<int>();
}

} // namespace detail

/// Applies one console command through the client. Returns the reply message.
inline nlohmann::json handle_message(host::Client& client, const std::string& text)
{
    std::string type = "unknown";
    try {
        const auto msg = nlohmann::json::parse(text);
        type = msg.at("type").get<std::string>();
        if (type == "set_target") {
            client.set_pressure(msg.at("channel").get<int>(), msg.at("kpa").get<double>());
        } else if (type == "set_all") {
            client.set_all(msg.at("kpa").get<std::vector<double>>());
        } else if (type == "enable") {
            client.enable(detail::channel_field(msg));
        } else if (type == "disable") {
            client.disable(detail::channel_field(msg));
        } else if (type == "inject_disturbance") {
            client.inject(detail::channel_field(msg),
                          protocol::msg::ScenarioRequest{protocol::msg::ScenarioKind::Disturbance,
                                                         msg.at("flow_lpm").get<double>(),
                                                         msg.at("duration_s").get<double>()});
        } else if (type == "set_leak") {
            client.inject(detail::channel_field(msg),
                          protocol::msg::ScenarioRequest{protocol::msg::ScenarioKind::Leak,
                                                         msg.at("coefficient").get<double>(),
                                                         msg.value("duration_s", 0.0)});
        } else {
            return {{"type", "error"}, {"request", type}, {"code", "UnknownMessage"}, {"message", "unknown type"}};
        }
        return {{"type", "ack"}, {"request", type}};
    } catch (const DeviceError& e) {
        return {{"type", "error"}, {"request", type}, {"code", to_string(e.code())}, {"message", e.what()}};
    } catch (const nlohmann::json::exception& e) {
        return {{"type", "error"}, {"request", type}, {"code", "BadMessage"}, {"message", e.what()}};
    } catch (const Timeout& e) {
        return {{"type", "error"}, {"request", type}, {"code", "Timeout"}, {"message", e.what()}};
    }
}

inline const char* content_type(const std::filesystem::path& p)
{
    const auto ext = p.extension().string();
    if (ext == ".html" || ext == ".htm") {
        return "text/html; charset=utf-8";
    }
    if (ext == ".js" || ext == ".mjs") {
        return "text/javascript";
    }
    if (ext == ".css") {
        return "text/css";
    }
    if (ext == ".json") {
        return "application/json";
    }
    if (ext == ".svg") {
        return "image/svg+xml";
    }
    if (ext == ".png") {
        return "image/png";
    }
    return "application/octet-stream";
}

inline constexpr const char* kFallbackIndex = R"(<!doctype html>
<html><head><meta charset="utf-8"><title>OpenPneu</title></head>
<body><p>Console assets are not installed. Raw telemetry:</p><pre id="out"></pre>
<script>
const ws = new WebSocket(`ws://${location.host}/ws`);
ws.onmessage = (e) => { document.getElementById('out').textContent = e.data; };
</script></body></html>
)";

struct BridgeOptions {
    int port = 8080;
    std::string bind_address = "127.0.0.1";
    std::string assets_dir; // empty: serve a minimal built-in page
    std::optional<std::uint8_t> decimation;
    std::size_t max_backlog = 1 << 20; // telemetry is skipped for clients further behind
};

class UiBridge {
public:
    /// Throws PortInUse if the port is taken.
    UiBridge(host::Client& client, BridgeOptions options)
        : client_(client), options_(std::move(options)),
          listener_(transport::listen_tcp(options_.port, options_.bind_address))
    {
    }

    [[nodiscard]] int port() const { return transport::local_port(listener_.get()); }
    [[nodiscard]] std::size_t connection_count() const { return conns_.size(); }

    void run(std::stop_token stop = {})
    {
        auto sub = client_.stream_telemetry(options_.decimation);
        while (!stop.stop_requested()) {
            std::vector<pollfd> fds;
            fds.push_back(pollfd{listener_.get(), POLLIN, 0});
            for (auto& [fd, c] : conns_) {
                fds.push_back(pollfd{fd, static_cast<short>(POLLIN | (c->outbox.empty() ? 0 : POLLOUT)), 0});
            }
            ::poll(fds.data(), fds.size(), 5);
            if (fds[0].revents & POLLIN) {
                accept_pending();
            }
            for (std::size_t i = 1; i < fds.size(); ++i) {
                auto it = conns_.find(fds[i].fd);
                if (it == conns_.end()) {
                    continue;
                }
                if (fds[i].revents & (POLLIN | POLLHUP | POLLERR)) {
                    read_conn(*it->second);
                }
            }
            // Bounded so a lockstep link that always has a snapshot cannot starve the sockets.
            for (int i = 0; i < kMaxSnapshotsPerPass; ++i) {
                auto snapshot = sub.next(std::chrono::milliseconds(0));
                if (!snapshot) {
                    break;
                }
                broadcast(telemetry_message(*snapshot).dump());
            }
            for (auto& [fd, c] : conns_) {
                flush(*c);
            }
            std::erase_if(conns_, [](const auto& kv) { return kv.second->closed && kv.second->outbox.empty(); });
            std::erase_if(conns_, [](const auto& kv) { return kv.second->dead; });
        }
    }

private:
    static constexpr int kMaxSnapshotsPerPass = 16;

    struct Conn {
        transport::Fd fd;
        bool websocket = false;
        bool closed = false; // close after the outbox drains
        bool dead = false;
        std::string request;
        ws::Decoder decoder;
        std::vector<std::uint8_t> outbox;
    };

    void accept_pending()
    {
        for (;;) {
            auto fd = transport::accept_client(listener_.get());
            if (!fd) {
                return;
            }
            const int key = fd.get();
            auto c = std::make_unique<Conn>();
            c->fd = std::move(fd);
            conns_.emplace(key, std::move(c));
        }
    }

    void read_conn(Conn& c)
    {
        std::array<std::uint8_t, 4096> buf{};
        for (;;) {
            std::size_t got = 0;
            const auto st = transport::read_some(c.fd.get(), buf, got);
            if (st == transport::ReadStatus::WouldBlock) {
                return;
            }
            if (st == transport::ReadStatus::Closed) {
                c.dead = true;
                return;
            }
            if (c.closed) {
                continue;
            }
            if (!c.websocket) {
                c.request.append(reinterpret_cast<const char*>(buf.data()), got);
                if (c.request.size() > 16384) {
                    respond(c, "431 Request Header Fields Too Large", "text/plain", "header too large\n");
                    continue;
                }
                const auto end = c.request.find("\r\n\r\n");
                if (end == std::string::npos) {
                    continue;
                }
                const auto rest = c.request.substr(end + 4);
                handle_http(c, c.request.substr(0, end));
                if (c.websocket && !rest.empty()) {
                    c.decoder.push(std::span(reinterpret_cast<const std::uint8_t*>(rest.data()), rest.size()));
                    handle_frames(c);
                }
                continue;
            }
            c.decoder.push(std::span(buf.data(), got));
            handle_frames(c);
        }
    }

    void handle_frames(Conn& c)
    {
        try {
            while (auto m = c.decoder.poll()) {
                switch (m->opcode) {
                case ws::Opcode::Text: {
                    const auto reply = handle_message(client_, m->payload).dump();
                    queue(c, ws::encode(ws::Opcode::Text, reply));
                    break;
                }
                case ws::Opcode::Ping: queue(c, ws::encode(ws::Opcode::Pong, m->payload)); break;
                case ws::Opcode::Close:
                    queue(c, ws::encode(ws::Opcode::Close, m->payload.substr(0, 2)));
                    c.closed = true;
                    return;
                default: break;
                }
            }
        } catch (const ProtocolError&) {
            queue(c, ws::encode(ws::Opcode::Close, std::string("\x03\xEA", 2))); // 1002 protocol error
            c.closed = true;
        }
    }

    static std::string header_value(const std::string& head, std::string name)
    {
        std::istringstream in(head);
        std::string line;
        for (auto& ch : name) {
            ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        }
        while (std::getline(in, line)) {
            const auto colon = line.find(':');
            if (colon == std::string::npos) {
                continue;
            }
            std::string key = line.substr(0, colon);
            for (auto& ch : key) {
                ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            }
            if (key == name) {
                auto value = line.substr(colon + 1);
                const auto first = value.find_first_not_of(" \t");
                const auto last = value.find_last_not_of(" \t\r");
                return first == std::string::npos ? std::string() : value.substr(first, last - first + 1);
            }
        }
        return {};
    }

    void handle_http(Conn& c, const std::string& head)
    {
        std::istringstream in(head);
        std::string method;
        std::string target;
        in >> method >> target;
        if (method != "GET") {
            respond(c, "405 Method Not Allowed", "text/plain", "only GET is supported\n");
            return;
        }
        const auto key = header_value(head, "Sec-WebSocket-Key");
        if (!key.empty()) {
            const std::string response = "HTTP/1.1 101 Switching Protocols\r\n"
                                         "Upgrade: websocket\r\n"
                                         "Connection: Upgrade\r\n"
                                         "Sec-WebSocket-Accept: " +
                                         ws::accept_key(key) + "\r\n\r\n";
            queue(c, std::vector<std::uint8_t>(response.begin(), response.end()));
            c.websocket = true;
            return;
        }
        serve_static(c, target);
    }

    void serve_static(Conn& c, std::string target)
    {
        if (const auto q = target.find('?'); q != std::string::npos) {
            target.resize(q);
        }
        if (target.empty() || target == "/") {
            target = "/index.html";
        }
        if (target.find("..") != std::string::npos) {
            respond(c, "403 Forbidden", "text/plain", "forbidden\n");
            return;
        }
        if (!options_.assets_dir.empty()) {
            const std::filesystem::path path = std::filesystem::path(options_.assets_dir) / target.substr(1);
            std::ifstream file(path, std::ios::binary);
            if (file) {
                std::ostringstream body;
                body << file.rdbuf();
                respond(c, "200 OK", content_type(path), body.str());
                return;
            }
        }
        if (target == "/index.html") {
            respond(c, "200 OK", "text/html; charset=utf-8", kFallbackIndex);
            return;
        }
        respond(c, "404 Not Found", "text/plain", "not found\n");
    }

    void respond(Conn& c, const std::string& status, const std::string& type, const std::string& body)
    {
        const std::string head = "HTTP/1.1 " + status + "\r\nContent-Type: " + type +
                                 "\r\nContent-Length: " + std::to_string(body.size()) +
                                 "\r\nConnection: close\r\n\r\n";
        queue(c, std::vector<std::uint8_t>(head.begin(), head.end()));
        queue(c, std::vector<std::uint8_t>(body.begin(), body.end()));
        c.closed = true;
    }

    static void queue(Conn& c, const std::vector<std::uint8_t>& bytes)
    {
        c.outbox.insert(c.outbox.end(), bytes.begin(), bytes.end());
    }

    void broadcast(const std::string& text)
    {
        const auto frame = ws::encode(ws::Opcode::Text, text);
        for (auto& [fd, c] : conns_) {
            if (c->websocket && !c->closed && c->outbox.size() < options_.max_backlog) {
                queue(*c, frame);
            }
        }
    }

    static void flush(Conn& c)
    {
        while (!c.outbox.empty() && !c.dead) {
            const auto n = ::send(c.fd.get(), c.outbox.data(), c.outbox.size(), MSG_NOSIGNAL);
            if (n > 0) {
                c.outbox.erase(c.outbox.begin(), c.outbox.begin() + n);
            } else if (n < 0 && errno == EINTR) {
                continue;
            } else if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
                return;
            } else {
                c.dead = true;
            }
        }
    }

    host::Client& client_;
    BridgeOptions options_;
    transport::Fd listener_;
    std::map<int, std::unique_ptr<Conn>> conns_;
};

/// Serves the bridge until `stop` is requested.
inline void serve_ui_bridge(host::Client& client, BridgeOptions options, std::stop_token stop = {})
{
    UiBridge bridge(client, std::move(options));
    bridge.run(stop);
}

} // namespace openpneu::ui
