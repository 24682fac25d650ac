#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace openpneu {

/// Atmospheric pressure used to convert gauge to absolute, kPa.
inline constexpr double kAtmosphereKpa = 101.325;

/// Control loop period of the firmware timer interrupt (50 Hz).
inline constexpr double kTickPeriodS = 0.02;

inline constexpr int kMaxChannels = 24;

enum class Valve : std::uint8_t { InflatePath = 0, DeflatePath = 1 };

/// 12-bit PWM duty. Stored as counts so every duty is an exact k/4096.
class PwmDuty {
public:
    static constexpr std::uint16_t kResolution = 4096;
    static constexpr std::uint16_t kMaxCount = kResolution - 1;

    constexpr PwmDuty() = default;

    static constexpr PwmDuty from_counts(std::uint16_t counts)
    {
        PwmDuty d;
        d.counts_ = counts > kMaxCount ? kMaxCount : counts;
        return d;
    }

    /// Nearest count; a fraction of 1.0 lands on the top count 4095.
    static PwmDuty from_fraction(double fraction)
    {
        const double clamped = std::clamp(fraction, 0.0, 1.0);
        const auto counts = static_cast<long>(std::lround(clamped * kResolution));
        return from_counts(static_cast<std::uint16_t>(std::min<long>(counts, kMaxCount)));
    }

    [[nodiscard]] constexpr std::uint16_t counts() const { return counts_; }
    [[nodiscard]] constexpr double fraction() const { return static_cast<double>(counts_) / kResolution; }
    [[nodiscard]] constexpr bool is_zero() const { return counts_ == 0; }

    friend constexpr bool operator==(PwmDuty, PwmDuty) = default;

private:
    std::uint16_t counts_ = 0;
};

/// The firmware's output to one channel: two pump duties and the valve.
/// At most one duty is nonzero and the valve sits on that duty's path.
struct ActuationCommand {
    PwmDuty inflate_duty;
    PwmDuty deflate_duty;
    Valve valve = Valve::InflatePath;

    static ActuationCommand idle(Valve held) { return ActuationCommand{{}, {}, held}; }

    friend bool operator==(const ActuationCommand&, const ActuationCommand&) = default;
};

} // namespace openpneu
