// Headless acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include "openpneu/analysis.hpp"
#include "openpneu/controller.hpp"
#include "openpneu/device.hpp"
#include "openpneu/host.hpp"
#include "openpneu/plant.hpp"
#include "openpneu/protocol.hpp"
#include "openpneu/server.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace openpneu;

namespace {

// Tolerances.
constexpr double kA1MaxSettleS = 1.2;
constexpr double kA1MaxOvershoot = 0.05;
constexpr double kA1MaxWallS = 1.0;
constexpr double kA2MaxErrorKpa = 0.1;
constexpr double kA3MaxMeanErrorKpa = 0.3;
constexpr double kA3MaxDriftKpa = 0.1; // last-10 s mean vs first-10 s mean
constexpr double kA3OpenLoopBelowKpa = 15.0;
constexpr double kA4MaxRecoveryS = 2.0;
constexpr double kA5MinKpa = -50.0;
constexpr double kA5MaxKpa = 80.0;
constexpr double kA5MaxPumpLpm = 1.7;
constexpr double kA6MaxSettleS = 1.2;
constexpr double kA7MaxDiffKpa = 1e-3;
constexpr double kA9MinTicksPerS = 5000.0;

int failures = 0;

void report(const char* id, const char* name, bool pass, const std::string& detail)
{
    std::printf("%s %-30s %s  %s\n", id, name, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (!pass) {
        ++failures;
    }
}

void guarded(const char* id, const char* name, const std::function<void()>& fn)
{
    try {
        fn();
    } catch (const std::exception& e) {
        report(id, name, false, std::string("exception: ") + e.what());
    }
}

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

std::vector<analysis::Sample> samples_after(const std::vector<TelemetrySnapshot>& trace, std::uint64_t issue_tick,
                                            std::uint64_t end_tick, int ch)
{
    std::vector<analysis::Sample> out;
    for (const auto& s : trace) {
        if (s.tick > issue_tick && s.tick <= end_tick) {
            out.push_back({static_cast<double>(s.tick - issue_tick) * kTickPeriodS,
                           s.channels[static_cast<std::size_t>(ch)].pressure_kpa});
        }
    }
    return out;
}

std::uint64_t ticks(double seconds) { return static_cast<std::uint64_t>(std::llround(seconds / kTickPeriodS)); }

// A1, A2: 0 -> 30 kPa step on the default channel, run by the accelerated serve loop.
void step_response()
{
    device::Device dev(device::DeviceConfig::uniform(1));
    server::LoopOptions opts;
    opts.accelerated = true;
    opts.max_ticks = ticks(10.0);
    server::ControlLoop loop(dev, opts);
    loop.schedule_command(0, protocol::msg::set_target(0, 30.0));
    std::vector<TelemetrySnapshot> trace;
    loop.on_snapshot([&](const TelemetrySnapshot& s) { trace.push_back(s); });

    const auto t0 = std::chrono::steady_clock::now();
    loop.run();
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const auto samples = samples_after(trace, 0, ticks(5.0), 0);
    const auto m = analysis::step_metrics(samples, 0.0, 30.0);
    report("A1", "step response", m.settled() && m.settle_time_s <= kA1MaxSettleS &&
                                      m.overshoot_fraction <= kA1MaxOvershoot && wall < kA1MaxWallS,
           fmt("settle=%.2fs (<=%.1f) overshoot=%.2f%% (<=%.0f%%) wall=%.4fs for 10 s sim (<%.0f)", m.settle_time_s,
               kA1MaxSettleS, 100.0 * m.overshoot_fraction, 100.0 * kA1MaxOvershoot, wall, kA1MaxWallS));

    double worst = 0.0;
    for (const auto& s : trace) {
        if (s.tick >= ticks(5.0)) {
            worst = std::max(worst, std::abs(s.channels[0].pressure_kpa - 30.0));
        }
    }
    report("A2", "steady-state accuracy", worst <= kA2MaxErrorKpa,
           fmt("max |p-target| over 5-10 s = %.3f kPa (<=%.1f)", worst, kA2MaxErrorKpa));
}

// A3: leak compensation over a 60 s hold; the open-loop contrast must decay.
void leak_compensation()
{
    auto cfg = device::DeviceConfig::uniform(2);
    for (auto& ch : cfg.channels) {
        ch.plant.chamber.leak_coefficient = 0.02;
    }
    device::Device dev(cfg);
    dev.set_target(0, 30.0);
    dev.set_target(1, 30.0);
    for (std::uint64_t i = 0; i < ticks(5.0); ++i) {
        dev.tick();
    }
    dev.set_enabled(1, false);
    std::vector<double> held;
    double open_loop_end = 0.0;
    for (std::uint64_t i = 0; i < ticks(60.0); ++i) {
        const auto s = dev.tick();
        held.push_back(s.channels[0].pressure_kpa);
        open_loop_end = s.channels[1].pressure_kpa;
    }
    double sum = 0.0;
    for (double p : held) {
        sum += std::abs(p - 30.0);
    }
    const double mean_error = sum / static_cast<double>(held.size());
    const auto window = static_cast<std::ptrdiff_t>(ticks(10.0));
    auto mean = [](auto b, auto e) { return std::accumulate(b, e, 0.0) / static_cast<double>(e - b); };
    const double first = mean(held.begin(), held.begin() + window);
    const double last = mean(held.end() - window, held.end());
    const double drift = first - last;
    report("A3", "leak compensation",
           mean_error <= kA3MaxMeanErrorKpa && drift <= kA3MaxDriftKpa && open_loop_end < kA3OpenLoopBelowKpa,
           fmt("mean |e| over 60 s = %.3f kPa (<=%.1f), drift first-last 10 s = %.3f kPa (<=%.1f), "
               "controller off ends at %.2f kPa (<%.0f)",
               mean_error, kA3MaxMeanErrorKpa, drift, kA3MaxDriftKpa, open_loop_end, kA3OpenLoopBelowKpa));
}

// A4: +/-0.5 L/min, 0.5 s pulses at steady state.
void disturbance_recovery()
{
    double worst_recovery = 0.0;
    double worst_excursion = 0.0;
    bool ok = true;
    for (const double flow : {0.5, -0.5}) {
        device::Device dev(device::DeviceConfig::uniform(1));
        dev.set_target(0, 30.0);
        for (std::uint64_t i = 0; i < ticks(5.0); ++i) {
            dev.tick();
        }
        const auto issue = dev.tick_count();
        dev.inject_disturbance(0, flow, 0.5);
        std::vector<analysis::Sample> samples;
        for (std::uint64_t i = 0; i < ticks(5.0); ++i) {
            const auto s = dev.tick();
            samples.push_back({static_cast<double>(s.tick - issue) * kTickPeriodS, s.channels[0].pressure_kpa});
            worst_excursion = std::max(worst_excursion, std::abs(s.channels[0].pressure_kpa - 30.0));
        }
        // Back in the +/-2% band of the 30 kPa operating point.
        const double band = 0.02 * 30.0;
        double recovered = 0.0;
        for (std::size_t i = samples.size(); i-- > 0;) {
            if (std::abs(samples[i].pressure_kpa - 30.0) > band) {
                recovered = i + 1 < samples.size() ? samples[i + 1].time_s : INFINITY;
                break;
            }
        }
        worst_recovery = std::max(worst_recovery, recovered);
        ok = ok && recovered <= kA4MaxRecoveryS;
    }
    report("A4", "disturbance recovery", ok,
           fmt("worst return to +/-0.6 kPa band = %.2fs after pulse start (<=%.1f), peak excursion %.2f kPa",
               worst_recovery, kA4MaxRecoveryS, worst_excursion));
}

// A5: randomized command schedules never leave the physical envelope.
void envelope()
{
    double p_min = 0.0;
    double p_max = 0.0;
    double q_max = 0.0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        auto cfg = device::DeviceConfig::uniform(10);
        cfg.seed = seed;
        for (auto& ch : cfg.channels) {
            ch.plant.sensor.noise_std_kpa = 0.05;
        }
        device::Device dev(cfg);
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> target(kA5MinKpa, kA5MaxKpa);
        std::uniform_real_distribution<double> gap(0.1, 3.0);
        std::uniform_real_distribution<double> leak(0.0, 0.05);
        std::uniform_int_distribution<int> channel(0, 9);
        std::uniform_int_distribution<int> action(0, 9);
        double next_command = 0.0;
        for (std::uint64_t i = 0; i < ticks(60.0); ++i) {
            while (dev.sim_time_s() >= next_command) {
                const int ch = channel(rng);
                switch (action(rng)) {
                case 0: dev.set_enabled(ch, false); break;
                case 1: dev.set_enabled(ch, true); break;
                case 2: dev.set_leak(ch, leak(rng)); break;
                case 3: {
                    std::vector<double> all(10);
                    for (auto& v : all) {
                        v = target(rng);
                    }
                    dev.set_all_targets(all);
                    break;
                }
                default: dev.set_target(ch, target(rng)); break;
                }
                next_command += gap(rng);
            }
            dev.tick();
            for (int ch = 0; ch < 10; ++ch) {
                const auto& plant = dev.channel(ch).plant;
                p_min = std::min(p_min, plant.pressure_kpa);
                p_max = std::max(p_max, plant.pressure_kpa);
                q_max = std::max(q_max, std::abs(plant.last_pump_flow_lpm));
            }
        }
    }
    report("A5", "envelope", p_min >= kA5MinKpa && p_max <= kA5MaxKpa && q_max <= kA5MaxPumpLpm,
           fmt("100 seeds x 60 s x 10 ch: p in [%.2f, %.2f] kPa, max |pump flow| %.3f L/min", p_min, p_max, q_max));
}

// A6: identical channels are bitwise identical; gesture changes settle together.
void uniformity()
{
    device::Device dev(device::DeviceConfig::uniform(10));
    dev.set_all_targets(std::vector<double>(10, 30.0));
    bool identical = true;
    for (std::uint64_t i = 0; i < ticks(5.0); ++i) {
        const auto s = dev.tick();
        for (int ch = 1; ch < 10; ++ch) {
            const double a = dev.channel(0).plant.pressure_kpa;
            const double b = dev.channel(ch).plant.pressure_kpa;
            identical = identical && std::memcmp(&a, &b, sizeof(double)) == 0 &&
                        s.channels[static_cast<std::size_t>(ch)] == s.channels[0];
        }
    }

    // Two five-finger hands; flexed fingers at 30 kPa, extended at -10 kPa.
    constexpr double f = 30.0;
    constexpr double x = -10.0;
    const std::vector<std::pair<const char*, std::vector<double>>> gestures = {
        {"rock", {f, f, f, f, f, f, f, f, f, f}},
        {"paper", {x, x, x, x, x, x, x, x, x, x}},
        {"scissors", {f, x, x, f, f, f, x, x, f, f}},
        {"rock", {f, f, f, f, f, f, f, f, f, f}},
        {"scissors", {f, x, x, f, f, f, x, x, f, f}},
        {"paper", {x, x, x, x, x, x, x, x, x, x}},
        {"rock", {f, f, f, f, f, f, f, f, f, f}},
    };
    device::Device hands(device::DeviceConfig::uniform(10));
    double worst = 0.0;
    bool settled = true;
    for (const auto& [name, targets] : gestures) {
        std::vector<double> start(10);
        for (int ch = 0; ch < 10; ++ch) {
            start[static_cast<std::size_t>(ch)] = hands.snapshot().channels[static_cast<std::size_t>(ch)].pressure_kpa;
        }
        hands.set_all_targets(targets);
        std::vector<TelemetrySnapshot> trace;
        const auto issue = hands.tick_count();
        for (std::uint64_t i = 0; i < ticks(3.0); ++i) {
            trace.push_back(hands.tick());
        }
        for (int ch = 0; ch < 10; ++ch) {
            const auto m = analysis::step_metrics(samples_after(trace, issue, issue + ticks(3.0), ch),
                                                  start[static_cast<std::size_t>(ch)],
                                                  targets[static_cast<std::size_t>(ch)]);
            settled = settled && m.settled();
            worst = std::max(worst, m.settled() ? m.settle_time_s : INFINITY);
        }
    }
    report("A6", "multi-channel uniformity", identical && settled && worst <= kA6MaxSettleS,
           fmt("10 identical steps bitwise equal: %s; worst gesture change settle %.2fs (<=%.1f)",
               identical ? "yes" : "no", worst, kA6MaxSettleS));
}

// Forward Euler on the chamber balance, written out from the model equations.
struct EulerReference {
    double pressure = 0.0;

    void advance(double seconds, double inflate_duty, double deflate_duty, bool inflate_path, double leak,
                 double disturbance)
    {
        constexpr double h = 1e-5;
        constexpr double pa = 101.325;
        constexpr double v0 = 30.0;
        constexpr double c = 0.3;
        const long n = std::lround(seconds / h);
        for (long i = 0; i < n; ++i) {
            double pump = 0.0;
            if (inflate_path) {
                pump = inflate_duty * 1.7 * std::clamp(1.0 - pressure / 80.0, 0.0, 1.0);
            } else {
                pump = -deflate_duty * 1.7 * std::clamp(1.0 - pressure / -50.0, 0.0, 1.0);
            }
            const double q = (pump - leak * pressure + disturbance) * 1000.0 / 60.0;
            pressure += h * (pa + pressure) * q / (v0 + 2.0 * c * pressure + c * pa);
        }
    }
};

// A7: RK4 at the tick period against fine-step Euler over a mixed open-loop script.
void integrator_oracle()
{
    struct Segment {
        double inflate;
        double deflate;
        bool inflate_path;
        double leak;
        double disturbance;
    };
    const std::vector<Segment> script = {
        {1.0, 0.0, true, 0.0, 0.0},   {0.6, 0.0, true, 0.0, 0.3},   {0.0, 0.0, true, 0.02, 0.0},
        {0.0, 0.8, false, 0.02, 0.0}, {0.0, 1.0, false, 0.0, -0.2}, {0.0, 0.3, false, 0.0, 0.0},
        {0.0, 0.0, false, 0.05, 0.0}, {0.8, 0.0, true, 0.01, 0.0},  {0.25, 0.0, true, 0.0, 0.5},
        {0.0, 0.5, false, 0.03, 0.1},
    };
    plant::PlantParams params;
    plant::ChannelPlantState state;
    EulerReference euler;
    double worst = 0.0;
    for (const auto& seg : script) {
        params.chamber.leak_coefficient = seg.leak;
        state.disturbance_flow_lpm = seg.disturbance;
        ActuationCommand cmd = ActuationCommand::idle(seg.inflate_path ? Valve::InflatePath : Valve::DeflatePath);
        cmd.inflate_duty = PwmDuty::from_fraction(seg.inflate);
        cmd.deflate_duty = PwmDuty::from_fraction(seg.deflate);
        for (int i = 0; i < 50; ++i) {
            state = plant::step_plant(state, cmd, params, kTickPeriodS);
            euler.advance(kTickPeriodS, cmd.inflate_duty.fraction(), cmd.deflate_duty.fraction(), seg.inflate_path,
                          seg.leak, seg.disturbance);
            worst = std::max(worst, std::abs(state.pressure_kpa - euler.pressure));
        }
    }
    report("A7", "integrator oracle", worst <= kA7MaxDiffKpa,
           fmt("10 s mixed script, max |RK4(20 ms) - Euler(1e-5 s)| = %.2e kPa (<=%.0e)", worst, kA7MaxDiffKpa));
}

std::uint8_t crc8_reference(const std::vector<std::uint8_t>& bytes, std::size_t begin, std::size_t end)
{
    std::uint8_t crc = 0;
    for (std::size_t i = begin; i < end; ++i) {
        for (int bit = 7; bit >= 0; --bit) {
            const bool top = ((crc >> 7) & 1) != (((bytes[i] >> bit) & 1) != 0);
            crc = static_cast<std::uint8_t>(crc << 1);
            if (top) {
                crc ^= 0x07;
            }
        }
    }
    return crc;
}

// A8: round-trips, fuzzing and single-bit error detection.
void protocol_soundness()
{
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> byte(0, 255);
    auto random_frame = [&](std::size_t len) {
        protocol::Frame f;
        f.command_id = static_cast<std::uint8_t>(byte(rng));
        f.channel = static_cast<std::uint8_t>(byte(rng));
        f.payload.resize(len);
        for (auto& b : f.payload) {
            b = static_cast<std::uint8_t>(byte(rng));
        }
        return f;
    };

    // Round-trips: every frame alone, and all of them as one randomly chunked stream.
    std::uniform_int_distribution<std::size_t> length(0, protocol::kMaxPayload);
    std::vector<protocol::Frame> frames;
    std::vector<std::uint8_t> stream;
    std::size_t mismatches = 0;
    for (int i = 0; i < 100000; ++i) {
        frames.push_back(random_frame(length(rng)));
        const auto bytes = protocol::encode_frame(frames.back());
        protocol::FrameDecoder d;
        const auto out = d.feed(bytes);
        mismatches += (out.size() == 1 && out[0] == frames.back()) ? 0 : 1;
        stream.insert(stream.end(), bytes.begin(), bytes.end());
    }
    protocol::FrameDecoder streaming;
    std::vector<protocol::Frame> decoded;
    std::uniform_int_distribution<std::size_t> chunk(1, 300);
    for (std::size_t pos = 0; pos < stream.size();) {
        const std::size_t n = std::min(chunk(rng), stream.size() - pos);
        for (auto& f : streaming.feed(std::span(stream.data() + pos, n))) {
            decoded.push_back(std::move(f));
        }
        pos += n;
    }
    const bool stream_ok = decoded == frames;

    // Fuzz: random bytes must never crash the decoder, and every frame it
    // accepts must carry a checksum that an independent CRC agrees with.
    std::size_t panics = 0;
    std::size_t bad_accepts = 0;
    std::size_t accepted = 0;
    std::vector<std::uint8_t> noise(1000000);
    for (auto& b : noise) {
        b = static_cast<std::uint8_t>(byte(rng));
    }
    protocol::FrameDecoder fuzz;
    for (std::size_t pos = 0; pos < noise.size();) {
        const std::size_t n = std::min(chunk(rng), noise.size() - pos);
        try {
            for (const auto& f : fuzz.feed(std::span(noise.data() + pos, n))) {
                ++accepted;
                const auto wire = protocol::encode_frame(f);
                std::vector<std::uint8_t> body(wire.begin() + 1, wire.end() - 1);
                if (crc8_reference(body, 0, body.size()) != wire.back() ||
                    std::search(noise.begin(), noise.end(), wire.begin(), wire.end()) == noise.end()) {
                    ++bad_accepts;
                }
            }
        } catch (...) {
            ++panics;
        }
        pos += n;
    }

    // Every single-bit flip of every frame with <= 8 payload bytes is rejected.
    std::size_t flips = 0;
    std::size_t undetected = 0;
    for (std::size_t len = 0; len <= 8; ++len) {
        for (int k = 0; k < 256; ++k) {
            const auto wire = protocol::encode_frame(random_frame(len));
            for (std::size_t bit = 0; bit < wire.size() * 8; ++bit) {
                auto bad = wire;
                bad[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
                ++flips;
                const bool crc_catches = bad[0] != protocol::kStartOfFrame || bad[3] > protocol::kMaxPayload ||
                                         bad[3] != wire[3] ||
                                         crc8_reference(bad, 1, bad.size() - 1) != bad.back();
                protocol::FrameDecoder d;
                bool accepted_whole = false;
                for (const auto& f : d.feed(bad)) {
                    accepted_whole = accepted_whole || protocol::encode_frame(f).size() == wire.size();
                }
                if (!crc_catches || accepted_whole) {
                    ++undetected;
                }
            }
        }
    }

    report("A8", "protocol soundness",
           mismatches == 0 && stream_ok && panics == 0 && bad_accepts == 0 && undetected == 0,
           fmt("1e5 round-trips: %zu mismatches, stream %s; 1e6 fuzz bytes: %zu panics, %zu frames accepted, "
               "%zu failing CRC recheck; %zu single-bit flips, %zu undetected",
               mismatches, stream_ok ? "exact" : "DIFFERS", panics, accepted, bad_accepts, flips, undetected));
}

// A9: byte-identical recordings for identical inputs, and raw tick throughput.
void determinism_and_speed()
{
    auto record = [](std::uint64_t seed) {
        auto cfg = device::DeviceConfig::uniform(10);
        cfg.seed = seed;
        for (auto& ch : cfg.channels) {
            ch.plant.sensor.noise_std_kpa = 0.05;
        }
        auto link = std::make_unique<host::SimLink>(cfg);
        link->device().schedule({2.0, 3, scenario::EventKind::Disturbance, 0.5, 0.5});
        link->device().schedule({4.0, scenario::kAllChannels, scenario::EventKind::Leak, 0.02, 3.0});
        host::Client client(std::move(link));
        client.set_all(std::vector<double>{30, 20, 10, 0, -10, -20, -30, 40, 50, 60});
        std::ostringstream out;
        client.record_csv(out, 10.0);
        return out.str();
    };
    const auto a = record(77);
    const auto b = record(77);
    const auto other = record(78);
    const bool identical = a == b && a != other;

    device::Device dev(device::DeviceConfig::uniform(10));
    dev.set_all_targets(std::vector<double>{30, 20, 10, 0, -10, -20, -30, 40, 50, 60});
    constexpr int kTicks = 100000;
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < kTicks; ++i) {
        if (i % 500 == 0) {
            dev.set_target(i / 500 % 10, (i / 500 % 2 == 0) ? 25.0 : -15.0);
        }
        dev.tick();
    }
    const double rate = kTicks / std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report("A9", "determinism and performance", identical && rate >= kA9MinTicksPerS,
           fmt("same seed CSVs %s (%zu bytes), other seed differs: %s; 10 channels at %.0f ticks/s (>=%.0f)",
               a == b ? "byte-identical" : "DIFFER", a.size(), a != other ? "yes" : "no", rate, kA9MinTicksPerS));
}

// A10: golden PID trace and randomized anti-windup bounds.
void pid_contracts()
{
    // Constant error e = 10 kPa from rest, kp = 0.02, ki = 0.3, kd = 0.001, dt = 20 ms:
    //   I_k = I_{k-1} + e*dt  while not saturated, frozen once u hits the limit
    //   u_1 = kp*e + ki*I_1 + kd*e/dt = 0.2 + 0.06 + 0.5 = 0.76
    //   u_k = 0.2 + 0.06k for k >= 2 until 0.2 + 0.06k > 1 (k = 14), then 1.
    controller::PidGains g{0.02, 0.3, 0.001, 1.0, 15.0};
    controller::PidState state;
    double integral = 0.0;
    bool saturated = false;
    bool golden = true;
    std::string first_mismatch;
    for (int k = 1; k <= 20; ++k) {
        const auto out = controller::pid_step(state, g, 10.0, 0.0, 0.02);
        if (!saturated) {
            integral = integral + 10.0 * 0.02;
        }
        const double derivative = k == 1 ? 10.0 / 0.02 : 0.0;
        const double raw = 0.02 * 10.0 + 0.3 * integral + 0.001 * derivative;
        const double expected = std::min(raw, 1.0);
        saturated = raw > 1.0;
        const double decimal = k == 1 ? 0.76 : std::min(0.2 + 0.06 * k, 1.0);
        if (out.u != expected || out.state.integral != integral || std::abs(out.u - decimal) > 1e-12) {
            if (golden) {
                first_mismatch = fmt(" first mismatch at tick %d: u=%.17g expected %.17g", k, out.u, expected);
            }
            golden = false;
        }
        state = out.state;
    }
    const bool frozen = std::abs(state.integral - 2.8) < 1e-12;

    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> err(-60.0, 60.0);
    std::uniform_real_distribution<double> gain(0.0, 2.0);
    std::uniform_real_distribution<double> limit(0.1, 1.0);
    std::uniform_real_distribution<double> ilimit(0.5, 20.0);
    std::size_t violations = 0;
    for (int seq = 0; seq < 2000; ++seq) {
        controller::PidGains rg{gain(rng), gain(rng), gain(rng) * 0.01, limit(rng), ilimit(rng)};
        controller::PidState s;
        for (int k = 0; k < 200; ++k) {
            const double e = err(rng);
            const auto out = controller::pid_step(s, rg, e, 0.0, kTickPeriodS);
            const bool deepens = (s.saturated == controller::Saturation::Upper && e > 0.0) ||
                                 (s.saturated == controller::Saturation::Lower && e < 0.0);
            if (std::abs(out.state.integral) > rg.integral_limit || std::abs(out.u) > rg.output_limit ||
                (deepens && out.state.integral != s.integral)) {
                ++violations;
            }
            s = out.state;
        }
    }
    report("A10", "PID contracts", golden && frozen && violations == 0,
           fmt("golden 20-tick trace %s, integral frozen at %.2f kPa*s; 2000 random sequences: %zu bound "
               "violations%s",
               golden ? "exact" : "MISMATCH", state.integral, violations, first_mismatch.c_str()));
}

} // namespace

int main()
{
    guarded("A1", "step response", step_response);
    guarded("A3", "leak compensation", leak_compensation);
    guarded("A4", "disturbance recovery", disturbance_recovery);
    guarded("A5", "envelope", envelope);
    guarded("A6", "multi-channel uniformity", uniformity);
    guarded("A7", "integrator oracle", integrator_oracle);
    guarded("A8", "protocol soundness", protocol_soundness);
    guarded("A9", "determinism and performance", determinism_and_speed);
    guarded("A10", "PID contracts", pid_contracts);
    std::printf("%s\n", failures == 0 ? "ALL PASS" : "FAILURES PRESENT");
    return failures == 0 ? 0 : 1;
}
