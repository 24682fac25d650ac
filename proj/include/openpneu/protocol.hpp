#pragma once

// Wire format shared by host and device. See docs/protocol.md for the
// normative byte layout.
//
//   AA | command_id | channel | length | payload[length] | crc8
//
// The CRC covers command_id through the last payload byte
// (polynomial 0x07, init 0x00, no reflection, no final xor).

#include "openpneu/controller.hpp"
#include "openpneu/errors.hpp"
#include "openpneu/telemetry.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <variant>
#include <vector>

namespace openpneu::protocol {

inline constexpr std::uint8_t kStartOfFrame = 0xAA;
inline constexpr std::uint8_t kBroadcastChannel = 0xFF;
inline constexpr std::size_t kMaxPayload = 64;
inline constexpr std::size_t kHeaderSize = 4; // sof, id, channel, length
inline constexpr std::size_t kOverhead = kHeaderSize + 1;
inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::uint8_t kFirmwareMajor = 1;
inline constexpr std::uint8_t kFirmwareMinor = 0;

enum class CommandId : std::uint8_t {
    Ping = 0x01,
    SetTarget = 0x02,
    SetAllTargets = 0x03,
    ReadPressure = 0x04,
    ReadFlow = 0x05,
    Enable = 0x06,
    Disable = 0x07,
    SetGains = 0x08,
    SubscribeTelemetry = 0x09,
    Reply = 0x0A,
    Telemetry = 0x0B,
    Error = 0x0C,
    // Simulator-only extension: schedule a disturbance or leak change.
    InjectScenario = 0x0D,
};

inline constexpr std::uint8_t to_byte(CommandId id) { return static_cast<std::uint8_t>(id); }

// ---------------------------------------------------------------------------
// CRC-8

namespace detail {
constexpr std::array<std::uint8_t, 256> make_crc8_table()
{
    std::array<std::uint8_t, 256> table{};
    for (int i = 0; i < 256; ++i) {
        auto crc = static_cast<std::uint8_t>(i);
        for (int bit = 0; bit < 8; ++bit) {
            crc = static_cast<std::uint8_t>((crc & 0x80) ? (crc << 1) ^ 0x07 : crc << 1);
        }
        table[static_cast<std::size_t>(i)] = crc;
    }
    return table;
}
inline constexpr auto kCrc8Table = make_crc8_table();
} // namespace detail

constexpr std::uint8_t crc8_update(std::uint8_t crc, std::uint8_t byte)
{
    return detail::kCrc8Table[crc ^ byte];
}

constexpr std::uint8_t crc8(std::span<const std::uint8_t> bytes, std::uint8_t crc = 0x00)
{
    for (auto b : bytes) {
        crc = crc8_update(crc, b);
    }
    return crc;
}

// ---------------------------------------------------------------------------
// Fixed-point codes

/// Pressure on the wire: int16, 0.01 kPa per count.
inline std::int16_t pressure_to_code(double kpa)
{
    const double counts = std::round(kpa * 100.0);
    return static_cast<std::int16_t>(std::clamp(counts, -32767.0, 32767.0));
}
inline double code_to_pressure(std::int16_t code) { return code / 100.0; }

/// Flow on the wire: int16, 1 mL/min per count.
inline std::int16_t flow_to_code(double lpm)
{
    const double counts = std::round(lpm * 1000.0);
    return static_cast<std::int16_t>(std::clamp(counts, -32767.0, 32767.0));
}
inline double code_to_flow(std::int16_t code) { return code / 1000.0; }

/// Little-endian payload builder.
class ByteWriter {
public:
    ByteWriter& u8(std::uint8_t v)
    {
        bytes_.push_back(v);
        return *this;
    }
    ByteWriter& u16(std::uint16_t v)
    {
        bytes_.push_back(static_cast<std::uint8_t>(v & 0xFF));
        bytes_.push_back(static_cast<std::uint8_t>(v >> 8));
        return *this;
    }
    ByteWriter& i16(std::int16_t v) { return u16(static_cast<std::uint16_t>(v)); }
    ByteWriter& u32(std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i) {
            bytes_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
        }
        return *this;
    }
    ByteWriter& i32(std::int32_t v) { return u32(static_cast<std::uint32_t>(v)); }

    [[nodiscard]] std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

/// Little-endian payload reader; throws ProtocolError on underrun.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint8_t u8()
    {
        need(1);
        return bytes_[pos_++];
    }
    std::uint16_t u16()
    {
        need(2);
        const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::int16_t i16() { return static_cast<std::int16_t>(u16()); }
    std::uint32_t u32()
    {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        }
        pos_ += 4;
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }

    [[nodiscard]] std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const
    {
        if (remaining() < n) {
            throw ProtocolError("payload too short");
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Frames

struct Frame {
    std::uint8_t command_id = 0;
    std::uint8_t channel = 0;
    std::vector<std::uint8_t> payload;

    [[nodiscard]] CommandId command() const { return static_cast<CommandId>(command_id); }

    friend bool operator==(const Frame&, const Frame&) = default;
};

inline Frame make_frame(CommandId id, std::uint8_t channel, std::vector<std::uint8_t> payload = {})
{
    return Frame{to_byte(id), channel, std::move(payload)};
}

inline std::vector<std::uint8_t> encode_frame(std::uint8_t command_id, std::uint8_t channel,
                                              std::span<const std::uint8_t> payload)
{
    if (payload.size() > kMaxPayload) {
        throw PayloadTooLarge(payload.size());
    }
    std::vector<std::uint8_t> out;
    out.reserve(kOverhead + payload.size());
    out.push_back(kStartOfFrame);
    out.push_back(command_id);
    out.push_back(channel);
    out.push_back(static_cast<std::uint8_t>(payload.size()));
    out.insert(out.end(), payload.begin(), payload.end());
    out.push_back(crc8(std::span<const std::uint8_t>(out).subspan(1)));
    return out;
}

inline std::vector<std::uint8_t> encode_frame(const Frame& frame)
{
    return encode_frame(frame.command_id, frame.channel, frame.payload);
}

enum class DecodeError { CrcMismatch, LengthOverflow };

struct NeedMoreBytes {};

using DecodeResult = std::variant<NeedMoreBytes, Frame, DecodeError>;

/// Incremental frame parser for one byte stream.
///
/// Push bytes as they arrive, then poll() until it returns NeedMoreBytes.
/// A rejected candidate frame only consumes its start byte, so scanning
/// resumes at the next 0xAA inside the rejected bytes and any valid frame
/// hidden in garbage is still recovered.
class FrameDecoder {
public:
    void push(std::span<const std::uint8_t> bytes) { buffer_.insert(buffer_.end(), bytes.begin(), bytes.end()); }
    void push(std::uint8_t byte) { buffer_.push_back(byte); }

    DecodeResult poll()
    {
        for (;;) {
            while (head_ < buffer_.size() && buffer_[head_] != kStartOfFrame) {
                ++head_;
            }
            compact();
            const std::size_t available = buffer_.size() - head_;
            if (available < kHeaderSize) {
                return NeedMoreBytes{};
            }
            const std::size_t length = buffer_[head_ + 3];
            if (length > kMaxPayload) {
                ++head_;
                ++stats_.length_overflows;
                return DecodeError::LengthOverflow;
            }
            if (available < kOverhead + length) {
                return NeedMoreBytes{};
            }
            const auto body = std::span<const std::uint8_t>(buffer_).subspan(head_ + 1, 3 + length);
            if (crc8(body) != buffer_[head_ + kHeaderSize + length]) {
                ++head_;
                ++stats_.crc_mismatches;
                return DecodeError::CrcMismatch;
            }
            Frame frame;
            frame.command_id = body[0];
            frame.channel = body[1];
            frame.payload.assign(body.begin() + 3, body.end());
            head_ += kOverhead + length;
            ++stats_.frames;
            return frame;
        }
    }

    /// Convenience: push bytes and collect every complete frame.
    std::vector<Frame> feed(std::span<const std::uint8_t> bytes)
    {
        push(bytes);
        std::vector<Frame> frames;
        for (;;) {
            auto result = poll();
            if (std::holds_alternative<NeedMoreBytes>(result)) {
                break;
            }
            if (auto* f = std::get_if<Frame>(&result)) {
                frames.push_back(std::move(*f));
            }
        }
        return frames;
    }

    struct Stats {
        std::uint64_t frames = 0;
        std::uint64_t crc_mismatches = 0;
        std::uint64_t length_overflows = 0;
    };
    [[nodiscard]] const Stats& stats() const { return stats_; }
    [[nodiscard]] std::size_t buffered() const { return buffer_.size() - head_; }

private:
    void compact()
    {
        if (head_ > 4096 || head_ == buffer_.size()) {
            buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(head_));
            head_ = 0;
        }
    }

    std::vector<std::uint8_t> buffer_;
    std::size_t head_ = 0;
    Stats stats_;
};

// ---------------------------------------------------------------------------
// Requests and replies

namespace msg {

inline Frame ping() { return make_frame(CommandId::Ping, 0); }

inline Frame set_target(std::uint8_t channel, double kpa)
{
    return make_frame(CommandId::SetTarget, channel, ByteWriter().i16(pressure_to_code(kpa)).take());
}

inline Frame set_all_targets(std::span<const double> kpa)
{
    ByteWriter w;
    for (double p : kpa) {
        w.i16(pressure_to_code(p));
    }
    auto payload = w.take();
    if (payload.size() > kMaxPayload) {
        throw PayloadTooLarge(payload.size());
    }
    return make_frame(CommandId::SetAllTargets, kBroadcastChannel, std::move(payload));
}

inline Frame read_pressure(std::uint8_t channel) { return make_frame(CommandId::ReadPressure, channel); }
inline Frame read_flow(std::uint8_t channel) { return make_frame(CommandId::ReadFlow, channel); }
inline Frame enable(std::uint8_t channel) { return make_frame(CommandId::Enable, channel); }
inline Frame disable(std::uint8_t channel) { return make_frame(CommandId::Disable, channel); }

/// Gains travel as five uint32 values in millionths:
/// kp, ki, kd, output_limit, integral_limit.
inline Frame set_gains(std::uint8_t channel, const controller::PidGains& g)
{
    auto micro = [](double v) {
        return static_cast<std::uint32_t>(std::clamp(std::round(v * 1e6), 0.0, 4294967295.0));
    };
    return make_frame(CommandId::SetGains, channel,
                      ByteWriter()
                          .u32(micro(g.kp))
                          .u32(micro(g.ki))
                          .u32(micro(g.kd))
                          .u32(micro(g.output_limit))
                          .u32(micro(g.integral_limit))
                          .take());
}

inline controller::PidGains parse_gains(std::span<const std::uint8_t> payload)
{
    if (payload.size() != 20) {
        throw ProtocolError("SetGains payload must be 20 bytes");
    }
    ByteReader r(payload);
    controller::PidGains g;
    g.kp = r.u32() / 1e6;
    g.ki = r.u32() / 1e6;
    g.kd = r.u32() / 1e6;
    g.output_limit = r.u32() / 1e6;
    g.integral_limit = r.u32() / 1e6;
    return g;
}

/// Empty payload subscribes at the device's default decimation; a single
/// byte N subscribes to every Nth tick, and N = 0 unsubscribes.
inline Frame subscribe(std::optional<std::uint8_t> decimation = std::nullopt)
{
    std::vector<std::uint8_t> payload;
    if (decimation) {
        payload.push_back(*decimation);
    }
    return make_frame(CommandId::SubscribeTelemetry, 0, std::move(payload));
}

enum class ScenarioKind : std::uint8_t { Disturbance = 0, Leak = 1 };

struct ScenarioRequest {
    ScenarioKind kind = ScenarioKind::Disturbance;
    double value = 0.0;      // L/min for disturbances, (L/min)/kPa for leaks
    double duration_s = 0.0; // 0 = permanent (leak only)
};

/// kind u8, value int32 in millionths, duration uint32 in ms.
inline Frame inject(std::uint8_t channel, const ScenarioRequest& req)
{
    return make_frame(CommandId::InjectScenario, channel,
                      ByteWriter()
                          .u8(static_cast<std::uint8_t>(req.kind))
                          .i32(static_cast<std::int32_t>(std::round(req.value * 1e6)))
                          .u32(static_cast<std::uint32_t>(std::round(req.duration_s * 1000.0)))
                          .take());
}

inline ScenarioRequest parse_inject(std::span<const std::uint8_t> payload)
{
    if (payload.size() != 9) {
        throw ProtocolError("InjectScenario payload must be 9 bytes");
    }
    ByteReader r(payload);
    ScenarioRequest req;
    const auto kind = r.u8();
    if (kind > 1) {
        throw ProtocolError("unknown scenario kind");
    }
    req.kind = static_cast<ScenarioKind>(kind);
    req.value = r.i32() / 1e6;
    req.duration_s = r.u32() / 1000.0;
    return req;
}

/// Replies echo the request's command id as their first payload byte so
/// the host can match them by (command id, channel).
inline Frame reply(std::uint8_t request_id, std::uint8_t channel, std::span<const std::uint8_t> data = {})
{
    std::vector<std::uint8_t> payload;
    payload.reserve(1 + data.size());
    payload.push_back(request_id);
    payload.insert(payload.end(), data.begin(), data.end());
    return Frame{to_byte(CommandId::Reply), channel, std::move(payload)};
}

inline Frame error(std::uint8_t request_id, std::uint8_t channel, DeviceErrorCode code)
{
    return Frame{to_byte(CommandId::Error), channel, {request_id, static_cast<std::uint8_t>(code)}};
}

} // namespace msg

// ---------------------------------------------------------------------------
// Telemetry

inline constexpr std::size_t kChannelsPerTelemetryFrame = 5;
inline constexpr std::size_t kTelemetryRecordSize = 9;

namespace detail {
inline std::uint8_t telemetry_flags(const ChannelTelemetry& ch)
{
    std::uint8_t flags = 0;
    if (ch.valve == Valve::DeflatePath) {
        flags |= 0x01;
    }
    if (ch.enabled) {
        flags |= 0x02;
    }
    return flags;
}
} // namespace detail

/// Splits a snapshot into frames of at most five channel records. Each
/// frame's channel byte carries (part_index << 4) | part_count; the payload
/// is the tick (u32) followed by the records
/// {pressure i16, target i16, flow i16, duty u16, flags u8}.
/// The duty field is the duty of the active path.
inline std::vector<Frame> encode_telemetry(const TelemetrySnapshot& snapshot)
{
    const std::size_t count = snapshot.channels.size();
    if (count > static_cast<std::size_t>(kMaxChannels)) {
        throw ProtocolError("telemetry supports at most 24 channels");
    }
    const std::size_t parts = count == 0 ? 1 : (count + kChannelsPerTelemetryFrame - 1) / kChannelsPerTelemetryFrame;
    std::vector<Frame> frames;
    frames.reserve(parts);
    for (std::size_t part = 0; part < parts; ++part) {
        ByteWriter w;
        w.u32(static_cast<std::uint32_t>(snapshot.tick));
        const std::size_t first = part * kChannelsPerTelemetryFrame;
        const std::size_t last = std::min(count, first + kChannelsPerTelemetryFrame);
        for (std::size_t i = first; i < last; ++i) {
            const auto& ch = snapshot.channels[i];
            const PwmDuty duty = ch.valve == Valve::InflatePath ? ch.inflate_duty : ch.deflate_duty;
            w.i16(pressure_to_code(ch.pressure_kpa))
                .i16(pressure_to_code(ch.target_kpa))
                .i16(flow_to_code(ch.flow_lpm))
                .u16(duty.counts())
                .u8(detail::telemetry_flags(ch));
        }
        frames.push_back(make_frame(CommandId::Telemetry,
                                    static_cast<std::uint8_t>((part << 4) | (parts & 0x0F)), w.take()));
    }
    return frames;
}

/// Rebuilds snapshots from telemetry frames. Parts of one tick may arrive
/// in any order; an incomplete snapshot is dropped when a newer tick shows up.
class TelemetryAssembler {
public:
    std::optional<TelemetrySnapshot> push(const Frame& frame)
    {
        if (frame.command() != CommandId::Telemetry) {
            return std::nullopt;
        }
        const std::size_t part = frame.channel >> 4;
        const std::size_t parts = frame.channel & 0x0F;
        if (parts == 0 || part >= parts) {
            throw ProtocolError("bad telemetry sequence field");
        }
        ByteReader r(frame.payload);
        const std::uint32_t tick = r.u32();
        if (r.remaining() % kTelemetryRecordSize != 0) {
            throw ProtocolError("telemetry payload is not a whole number of records");
        }
        if (!pending_ || pending_tick_ != tick || pending_parts_ != parts) {
            pending_ = true;
            pending_tick_ = tick;
            pending_parts_ = parts;
            received_mask_ = 0;
            records_.assign(parts, {});
        }
        std::vector<ChannelTelemetry> records;
        while (r.remaining() > 0) {
            ChannelTelemetry ch;
            ch.pressure_kpa = code_to_pressure(r.i16());
            ch.target_kpa = code_to_pressure(r.i16());
            ch.flow_lpm = code_to_flow(r.i16());
            const auto duty = PwmDuty::from_counts(r.u16());
            const auto flags = r.u8();
            ch.valve = (flags & 0x01) ? Valve::DeflatePath : Valve::InflatePath;
            ch.enabled = (flags & 0x02) != 0;
            (ch.valve == Valve::InflatePath ? ch.inflate_duty : ch.deflate_duty) = duty;
            records.push_back(ch);
        }
        records_[part] = std::move(records);
        received_mask_ |= 1u << part;
        if (received_mask_ != (1u << parts) - 1) {
            return std::nullopt;
        }
        TelemetrySnapshot snapshot;
        snapshot.tick = tick;
        for (auto& chunk : records_) {
            snapshot.channels.insert(snapshot.channels.end(), chunk.begin(), chunk.end());
        }
        pending_ = false;
        return snapshot;
    }

private:
    bool pending_ = false;
    std::uint32_t pending_tick_ = 0;
    std::size_t pending_parts_ = 0;
    std::uint32_t received_mask_ = 0;
    std::vector<std::vector<ChannelTelemetry>> records_;
};

/// Applies the wire quantization to a snapshot, i.e. what a receiver sees.
inline TelemetrySnapshot quantize_for_wire(const TelemetrySnapshot& s)
{
    TelemetrySnapshot q = s;
    q.tick = static_cast<std::uint32_t>(s.tick);
    for (auto& ch : q.channels) {
        ch.pressure_kpa = code_to_pressure(pressure_to_code(ch.pressure_kpa));
        ch.target_kpa = code_to_pressure(pressure_to_code(ch.target_kpa));
        ch.flow_lpm = code_to_flow(flow_to_code(ch.flow_lpm));
        if (ch.valve == Valve::InflatePath) {
            ch.deflate_duty = PwmDuty{};
        } else {
            ch.inflate_duty = PwmDuty{};
        }
    }
    return q;
}

} // namespace openpneu::protocol
