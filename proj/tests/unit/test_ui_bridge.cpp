#include "openpneu/ui_bridge.hpp"

#include <gtest/gtest.h>

#include <sys/socket.h>
#include <sys/time.h>

#include <filesystem>
#include <fstream>
#include <thread>

using namespace openpneu;
using namespace std::chrono_literals;
using ui::ws::Opcode;

namespace {

std::vector<std::uint8_t> bytes_of(std::string_view s) { return {s.begin(), s.end()}; }

// Minimal blocking peer for the bridge: plain HTTP or an upgraded websocket.
class Peer {
public:
    explicit Peer(int port) : fd_(transport::connect_tcp("127.0.0.1", port))
    {
        timeval tv{0, 200000};
        ::setsockopt(fd_.get(), SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    }

    void send_raw(std::string_view s) { transport::write_all(fd_.get(), bytes_of(s)); }

    /// Reads until the end of the HTTP head, or the whole response when `to_eof`.
    std::string read_http(bool to_eof)
    {
        const auto deadline = std::chrono::steady_clock::now() + 3s;
        while (std::chrono::steady_clock::now() < deadline) {
            if (!to_eof) {
                const auto end = raw_.find("\r\n\r\n");
                if (end != std::string::npos) {
                    std::string head = raw_.substr(0, end + 4);
                    decoder_.push(bytes_of(std::string_view(raw_).substr(end + 4)));
                    raw_.clear();
                    return head;
                }
            }
            char buf[4096];
            const auto n = ::recv(fd_.get(), buf, sizeof(buf), 0);
            if (n == 0) {
                break;
            }
            if (n > 0) {
                raw_.append(buf, static_cast<std::size_t>(n));
            }
        }
        return std::exchange(raw_, {});
    }

    void upgrade()
    {
        send_raw("GET /ws HTTP/1.1\r\nHost: localhost\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
                 "Sec-WebSocket-Key: dGhlIHNhbXBsZSBub25jZQ==\r\nSec-WebSocket-Version: 13\r\n\r\n");
        head_ = read_http(false);
    }

    void send_text(std::string_view text)
    {
        transport::write_all(fd_.get(), ui::ws::encode(Opcode::Text, text, std::array<std::uint8_t, 4>{1, 2, 3, 4}));
    }

    std::optional<ui::ws::Message> next(std::chrono::milliseconds timeout = 3000ms)
    {
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        for (;;) {
            if (auto m = decoder_.poll()) {
                return m;
            }
            if (std::chrono::steady_clock::now() > deadline) {
                return std::nullopt;
            }
            std::uint8_t buf[4096];
            const auto n = ::recv(fd_.get(), buf, sizeof(buf), 0);
            if (n == 0) {
                return std::nullopt;
            }
            if (n > 0) {
                decoder_.push(std::span(buf, static_cast<std::size_t>(n)));
            }
        }
    }

    /// Skips telemetry until a message of `type` arrives.
    nlohmann::json next_of(const std::string& type)
    {
        for (int i = 0; i < 500; ++i) {
            auto m = next();
            if (!m) {
                break;
            }
            if (m->opcode != Opcode::Text) {
                continue;
            }
            auto j = nlohmann::json::parse(m->payload);
            if (j.at("type") == type) {
                return j;
            }
        }
        return {};
    }

    [[nodiscard]] const std::string& head() const { return head_; }

private:
    transport::Fd fd_;
    std::string raw_;
    std::string head_;
    ui::ws::Decoder decoder_;
};

struct Bridged {
    explicit Bridged(ui::BridgeOptions opts = {})
        : client(std::make_unique<host::SimLink>(device::DeviceConfig::uniform(4))),
          bridge(client, with_ephemeral_port(std::move(opts)))
    {
        thread = std::jthread([this](std::stop_token st) { bridge.run(st); });
    }
    static ui::BridgeOptions with_ephemeral_port(ui::BridgeOptions o)
    {
        o.port = 0;
        return o;
    }
    host::Client client;
    ui::UiBridge bridge;
    std::jthread thread;
};

} // namespace

TEST(WebSocket, AcceptKeyMatchesHandshakeExample)
{
    EXPECT_EQ(ui::ws::accept_key("dGhlIHNhbXBsZSBub25jZQ=="), "s3pPLMBiTxaQ9kYGzzhZRbK+xOo=");
}

TEST(WebSocket, EncodesShortUnmaskedText)
{
    const auto f = ui::ws::encode(Opcode::Text, "Hello");
    EXPECT_EQ(f, (std::vector<std::uint8_t>{0x81, 0x05, 'H', 'e', 'l', 'l', 'o'}));
}

TEST(WebSocket, DecodesMaskedExample)
{
    ui::ws::Decoder d;
    const std::vector<std::uint8_t> frame = {0x81, 0x85, 0x37, 0xfa, 0x21, 0x3d, 0x7f, 0x9f, 0x4d, 0x51, 0x58};
    d.push(std::span(frame.data(), 3));
    EXPECT_FALSE(d.poll().has_value());
    d.push(std::span(frame.data() + 3, frame.size() - 3));
    const auto m = d.poll();
    ASSERT_TRUE(m.has_value());
    EXPECT_EQ(m->opcode, Opcode::Text);
    EXPECT_EQ(m->payload, "Hello");
}

TEST(WebSocket, ReassemblesFragmentsAroundControlFrames)
{
    ui::ws::Decoder d;
    d.push(std::vector<std::uint8_t>{0x01, 0x03, 'H', 'e', 'l'});
    d.push(std::vector<std::uint8_t>{0x89, 0x00});
    d.push(std::vector<std::uint8_t>{0x80, 0x02, 'l', 'o'});
    auto ping = d.poll();
    ASSERT_TRUE(ping.has_value());
    EXPECT_EQ(ping->opcode, Opcode::Ping);
    auto text = d.poll();
    ASSERT_TRUE(text.has_value());
    EXPECT_EQ(text->payload, "Hello");
}

TEST(WebSocket, ExtendedLengthsRoundTrip)
{
    for (const std::size_t n : {125u, 126u, 65535u, 65536u, 200000u}) {
        const std::string payload(n, 'x');
        ui::ws::Decoder d;
        d.push(ui::ws::encode(Opcode::Binary, payload, std::array<std::uint8_t, 4>{9, 8, 7, 6}));
        const auto m = d.poll();
        ASSERT_TRUE(m.has_value()) << n;
        EXPECT_EQ(m->payload, payload);
    }
}

TEST(WebSocket, RejectsMalformedStreams)
{
    ui::ws::Decoder stray;
    stray.push(std::vector<std::uint8_t>{0x80, 0x00});
    EXPECT_THROW(stray.poll(), ProtocolError);

    ui::ws::Decoder huge;
    huge.push(std::vector<std::uint8_t>{0x82, 0x7F, 0, 0, 0, 0, 0x10, 0, 0, 0});
    EXPECT_THROW(huge.poll(), ProtocolError);
}

TEST(ConsoleMessages, TelemetrySchema)
{
    TelemetrySnapshot s{42, {}};
    ChannelTelemetry ch;
    ch.pressure_kpa = 12.5;
    ch.target_kpa = 20.0;
    ch.flow_lpm = 0.8;
    ch.inflate_duty = PwmDuty::from_fraction(0.5);
    ch.valve = Valve::DeflatePath;
    ch.enabled = true;
    s.channels.push_back(ch);
    const auto j = ui::telemetry_message(s);
    EXPECT_EQ(j.at("type"), "telemetry");
    EXPECT_EQ(j.at("tick"), 42);
    const auto& c = j.at("channels").at(0);
    EXPECT_DOUBLE_EQ(c.at("p").get<double>(), 12.5);
    EXPECT_DOUBLE_EQ(c.at("t").get<double>(), 20.0);
    EXPECT_DOUBLE_EQ(c.at("q").get<double>(), 0.8);
    EXPECT_NEAR(c.at("di").get<double>(), 0.5, 1.0 / 4096);
    EXPECT_DOUBLE_EQ(c.at("dd").get<double>(), 0.0);
    EXPECT_EQ(c.at("v"), 1);
    EXPECT_EQ(c.at("en"), true);
}

TEST(ConsoleMessages, CommandsMapToClientCalls)
{
    host::Client client(std::make_unique<host::SimLink>(device::DeviceConfig::uniform(3)));
    auto ack = ui::handle_message(client, R"({"type":"set_target","channel":1,"kpa":25})");
    EXPECT_EQ(ack.at("type"), "ack");
    EXPECT_EQ(ack.at("request"), "set_target");
    EXPECT_EQ(ui::handle_message(client, R"({"type":"set_all","kpa":[1,2,3]})").at("type"), "ack");
    EXPECT_EQ(ui::handle_message(client, R"({"type":"disable","channel":"all"})").at("type"), "ack");
    EXPECT_EQ(ui::handle_message(client, R"({"type":"enable","channel":2})").at("type"), "ack");
    EXPECT_EQ(ui::handle_message(client, R"({"type":"inject_disturbance","channel":0,"flow_lpm":0.5,"duration_s":0.5})")
                  .at("type"),
              "ack");
    EXPECT_EQ(ui::handle_message(client, R"({"type":"set_leak","channel":1,"coefficient":0.02})").at("type"), "ack");

    const auto range = ui::handle_message(client, R"({"type":"set_target","channel":0,"kpa":95})");
    EXPECT_EQ(range.at("type"), "error");
    EXPECT_EQ(range.at("code"), "TargetOutOfRange");
    EXPECT_EQ(ui::handle_message(client, R"({"type":"set_target","channel":7,"kpa":5})").at("code"),
              "ChannelOutOfRange");
    EXPECT_EQ(ui::handle_message(client, R"({"type":"set_all","kpa":[1]})").at("code"), "LengthMismatch");
    EXPECT_EQ(ui::handle_message(client, R"({"type":"set_target"})").at("code"), "BadMessage");
    EXPECT_EQ(ui::handle_message(client, "not json").at("code"), "BadMessage");
    EXPECT_EQ(ui::handle_message(client, R"({"type":"reboot"})").at("code"), "UnknownMessage");
}

TEST(UiBridge, StreamsTelemetryAndAcceptsCommands)
{
    Bridged b;
    Peer peer(b.bridge.port());
    peer.upgrade();
    EXPECT_NE(peer.head().find("101 Switching Protocols"), std::string::npos);
    EXPECT_NE(peer.head().find("s3pPLMBiTxaQ9kYGzzhZRbK+xOo="), std::string::npos);

    auto first = peer.next_of("telemetry");
    ASSERT_FALSE(first.is_null());
    EXPECT_EQ(first.at("channels").size(), 4u);

    peer.send_text(R"({"type":"set_target","channel":2,"kpa":30})");
    const auto ack = peer.next_of("ack");
    ASSERT_FALSE(ack.is_null());
    EXPECT_EQ(ack.at("request"), "set_target");

    bool seen = false;
    for (int i = 0; i < 200 && !seen; ++i) {
        const auto t = peer.next_of("telemetry");
        ASSERT_FALSE(t.is_null());
        seen = t.at("channels").at(2).at("t").get<double>() == 30.0;
    }
    EXPECT_TRUE(seen);

    peer.send_text(R"({"type":"set_target","channel":2,"kpa":-70})");
    const auto err = peer.next_of("error");
    ASSERT_FALSE(err.is_null());
    EXPECT_EQ(err.at("code"), "TargetOutOfRange");
}

TEST(UiBridge, ServesFallbackIndexAndRejectsOthers)
{
    Bridged b;
    {
        Peer peer(b.bridge.port());
        peer.send_raw("GET / HTTP/1.1\r\nHost: localhost\r\n\r\n");
        const auto r = peer.read_http(true);
        EXPECT_NE(r.find("200 OK"), std::string::npos);
        EXPECT_NE(r.find("text/html"), std::string::npos);
        EXPECT_NE(r.find("WebSocket"), std::string::npos);
    }
    {
        Peer peer(b.bridge.port());
        peer.send_raw("GET /missing.js HTTP/1.1\r\n\r\n");
        EXPECT_NE(peer.read_http(true).find("404"), std::string::npos);
    }
    {
        Peer peer(b.bridge.port());
        peer.send_raw("GET /../secret HTTP/1.1\r\n\r\n");
        EXPECT_NE(peer.read_http(true).find("403"), std::string::npos);
    }
}

TEST(UiBridge, ServesAssetsDirectory)
{
    const auto dir = std::filesystem::temp_directory_path() / "openpneu_ui_assets_test";
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "app.js") << "console.log(1);\n";
    ui::BridgeOptions opts;
    opts.assets_dir = dir.string();
    Bridged b(opts);
    Peer peer(b.bridge.port());
    peer.send_raw("GET /app.js HTTP/1.1\r\n\r\n");
    const auto r = peer.read_http(true);
    EXPECT_NE(r.find("200 OK"), std::string::npos);
    EXPECT_NE(r.find("text/javascript"), std::string::npos);
    EXPECT_NE(r.find("console.log(1);"), std::string::npos);
    std::filesystem::remove_all(dir);
}

TEST(UiBridge, PortInUseIsReported)
{
    auto taken = transport::listen_tcp(0, "127.0.0.1");
    host::Client client(std::make_unique<host::SimLink>(device::DeviceConfig::uniform(1)));
    ui::BridgeOptions opts;
    opts.port = transport::local_port(taken.get());
    EXPECT_THROW(ui::UiBridge(client, opts), PortInUse);
}
