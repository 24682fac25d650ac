#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace openpneu {

/// Device-side error codes. Values travel on the wire in Error frames and
/// must stay stable.
enum class DeviceErrorCode : std::uint8_t {
    UnknownCommand = 0x01,
    ChannelOutOfRange = 0x02,
    TargetOutOfRange = 0x03,
    MalformedPayload = 0x04,
    LengthMismatch = 0x05,
    NotCommander = 0x06,
    OverlappingDisturbance = 0x07,
};

inline const char* to_string(DeviceErrorCode code)
{
    switch (code) {
    case DeviceErrorCode::UnknownCommand: return "UnknownCommand";
    case DeviceErrorCode::ChannelOutOfRange: return "ChannelOutOfRange";
    case DeviceErrorCode::TargetOutOfRange: return "TargetOutOfRange";
    case DeviceErrorCode::MalformedPayload: return "MalformedPayload";
    case DeviceErrorCode::LengthMismatch: return "LengthMismatch";
    case DeviceErrorCode::NotCommander: return "NotCommander";
    case DeviceErrorCode::OverlappingDisturbance: return "OverlappingDisturbance";
    }
    return "Unknown";
}

class DeviceError : public std::runtime_error {
public:
    explicit DeviceError(DeviceErrorCode code)
        : std::runtime_error(std::string("device error: ") + to_string(code)), code_(code)
    {
    }
    DeviceError(DeviceErrorCode code, const std::string& detail)
        : std::runtime_error(std::string("device error: ") + to_string(code) + " (" + detail + ")"), code_(code)
    {
    }

    [[nodiscard]] DeviceErrorCode code() const noexcept { return code_; }

private:
    DeviceErrorCode code_;
};

/// Plant integration produced NaN/Inf or a non-physical absolute pressure.
class NonFiniteState : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class OverlappingDisturbance : public DeviceError {
public:
    OverlappingDisturbance() : DeviceError(DeviceErrorCode::OverlappingDisturbance) {}
};

class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class PayloadTooLarge : public ProtocolError {
public:
    explicit PayloadTooLarge(std::size_t size)
        : ProtocolError("payload of " + std::to_string(size) + " bytes exceeds 64")
    {
    }
};

/// Anything that went wrong below the protocol: sockets, closed streams, timeouts.
class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TransportClosed : public TransportError {
public:
    TransportClosed() : TransportError("transport closed") {}
};

class Timeout : public TransportError {
public:
    Timeout() : TransportError("timed out waiting for device reply") {}
};

class PortInUse : public TransportError {
public:
    explicit PortInUse(int port) : TransportError("port " + std::to_string(port) + " already in use") {}
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace openpneu
