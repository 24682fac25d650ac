// openpneu: simulated device server and host command-line client.
//
// Exit codes: 0 ok, 1 device error (including bad input), 2 transport error.

#include "openpneu/config.hpp"
#include "openpneu/device.hpp"
#include "openpneu/host.hpp"
#include "openpneu/recording.hpp"
#include "openpneu/scenario.hpp"
#include "openpneu/server.hpp"
#include "openpneu/ui_bridge.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <pthread.h>
#include <signal.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace {

using namespace openpneu;

struct DeviceOptions {
    int channels = 0; // 0: keep the config file's value (default 10)
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string scenario;
};

struct ConnectOptions {
    std::string host = "127.0.0.1";
    int port = 5555;
    bool local = false;
    int timeout_ms = 200;
    DeviceOptions device;
};

device::DeviceConfig build_config(const DeviceOptions& o)
{
    auto cfg = o.config.empty() ? device::DeviceConfig{} : config::load(o.config);
    if (o.channels > 0) {
        config::resize_channels(cfg, o.channels);
    }
    if (o.seed) {
        cfg.seed = *o.seed;
    }
    return cfg;
}

void add_device_options(CLI::App* cmd, DeviceOptions& o)
{
    cmd->add_option("--channels", o.channels, "Channel count (1-24)")->check(CLI::Range(1, 24));
    cmd->add_option("--config", o.config, "Device configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "Sensor noise seed");
    cmd->add_option("--scenario", o.scenario, "Scenario JSON (disturbance and leak events)")->check(CLI::ExistingFile);
}

void add_connect_options(CLI::App* cmd, ConnectOptions& o)
{
    cmd->add_option("--host", o.host, "Device host");
    cmd->add_option("--port", o.port, "Device TCP port");
    cmd->add_flag("--local", o.local, "Use an in-process simulated device stepped in lockstep");
    cmd->add_option("--timeout-ms", o.timeout_ms, "Reply timeout per attempt");
    add_device_options(cmd, o.device);
}

std::unique_ptr<host::Client> open_client(const ConnectOptions& o)
{
    host::RetryPolicy policy;
    policy.timeout = std::chrono::milliseconds(o.timeout_ms);
    if (o.local) {
        auto link = std::make_unique<host::SimLink>(build_config(o.device));
        if (!o.device.scenario.empty()) {
            for (const auto& ev : scenario::load_scenario(o.device.scenario)) {
                link->device().schedule(ev);
            }
        }
        return std::make_unique<host::Client>(std::move(link), policy);
    }
    return std::make_unique<host::Client>(std::make_unique<host::TcpLink>(o.host, o.port), policy);
}

int parse_channel(const std::string& text)
{
    if (text == "all") {
        return host::kAllChannels;
    }
    try {
        std::size_t used = 0;
        const int ch = std::stoi(text, &used);
        if (used == text.size()) {
            return ch;
        }
    } catch (const std::exception&) {
    }
    throw ConfigError("bad channel '" + text + "'");
}

void apply_presets(host::Client& client, const std::vector<std::string>& presets)
{
    for (const auto& p : presets) {
        const auto eq = p.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("expected CHANNEL=KPA, got '" + p + "'");
        }
        const int ch = parse_channel(p.substr(0, eq));
        const double kpa = std::stod(p.substr(eq + 1));
        if (ch == host::kAllChannels) {
            client.set_all(std::vector<double>(static_cast<std::size_t>(client.channel_count()), kpa));
        } else {
            client.set_pressure(ch, kpa);
        }
    }
}

// ---------------------------------------------------------------------------
// serve-sim

struct ServeOptions {
    int port = 5555;
    std::string bind = "0.0.0.0";
    bool accelerated = false;
    bool stdio = false;
    double duration = 0.0;
    std::optional<int> ui_port;
    std::string assets;
    unsigned decimation = 0;
    DeviceOptions device;
};

int serve_sim(const ServeOptions& o)
{
    auto cfg = build_config(o.device);
    if (o.decimation > 0) {
        cfg.telemetry_decimation = o.decimation;
    }
    device::Device dev(cfg);
    if (!o.device.scenario.empty()) {
        for (const auto& ev : scenario::load_scenario(o.device.scenario)) {
            dev.schedule(ev);
        }
    }

    server::LoopOptions loop_opts;
    loop_opts.accelerated = o.accelerated;
    loop_opts.tick_rate_hz = cfg.tick_rate_hz;
    loop_opts.telemetry_decimation = cfg.telemetry_decimation;
    if (o.duration > 0.0) {
        loop_opts.max_ticks = static_cast<std::uint64_t>(std::llround(o.duration / kTickPeriodS));
    }
    server::ControlLoop loop(dev, loop_opts);

    int port = 0;
    if (o.stdio) {
        loop.add_stream_session(0, 1);
    } else {
        auto listener = transport::listen_tcp(o.port, o.bind);
        port = transport::local_port(listener.get());
        loop.add_listener(std::move(listener));
        std::fprintf(stderr, "openpneu: %d channels, listening on %s:%d%s\n", cfg.channel_count(), o.bind.c_str(),
                     port, o.accelerated ? " (accelerated)" : "");
    }
    if (o.ui_port && o.stdio) {
        throw ConfigError("--ui-port needs a TCP device port, not --stdio");
    }

    // Signals are taken synchronously by this thread only.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    std::atomic<bool> finished{false};
    std::jthread loop_thread([&](std::stop_token stop) {
        loop.run(stop);
        finished = true;
    });

    std::optional<std::jthread> bridge_thread;
    std::unique_ptr<host::Client> bridge_client;
    if (o.ui_port) {
        bridge_client = std::make_unique<host::Client>(std::make_unique<host::TcpLink>("127.0.0.1", port));
        ui::BridgeOptions bo;
        bo.port = *o.ui_port;
        bo.assets_dir = o.assets;
        auto bridge = std::make_shared<ui::UiBridge>(*bridge_client, bo);
        std::fprintf(stderr, "openpneu: console on http://127.0.0.1:%d/\n", bridge->port());
        bridge_thread.emplace([bridge](std::stop_token stop) { bridge->run(stop); });
    }

    const timespec poll_interval{0, 100'000'000};
    while (!finished) {
        if (sigtimedwait(&signals, nullptr, &poll_interval) > 0) {
            break;
        }
    }
    if (bridge_thread) {
        bridge_thread->request_stop();
        bridge_thread->join();
    }
    loop_thread.request_stop();
    loop_thread.join();
    const auto& st = loop.stats();
    std::fprintf(stderr, "openpneu: %llu ticks, %llu commands, %llu late ticks\n",
                 static_cast<unsigned long long>(st.ticks), static_cast<unsigned long long>(st.commands),
                 static_cast<unsigned long long>(st.late_ticks));
    return 0;
}

// ---------------------------------------------------------------------------
// bench

int bench(int channels, std::uint64_t ticks, std::uint64_t seed)
{
    auto cfg = device::DeviceConfig::uniform(channels);
    cfg.seed = seed;
    device::Device dev(cfg);
    std::vector<double> targets(static_cast<std::size_t>(channels));
    for (int i = 0; i < channels; ++i) {
        targets[static_cast<std::size_t>(i)] = i % 2 == 0 ? 30.0 : -20.0;
    }
    dev.set_all_targets(targets);
    const auto t0 = std::chrono::steady_clock::now();
    for (std::uint64_t i = 0; i < ticks; ++i) {
        dev.tick();
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    nlohmann::json out{{"channels", channels},
                       {"ticks", ticks},
                       {"wall_s", wall},
                       {"ticks_per_s", static_cast<double>(ticks) / wall},
                       {"realtime_factor", static_cast<double>(ticks) * kTickPeriodS / wall}};
    std::cout << out.dump() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"OpenPneu simulated device and host client"};
    app.require_subcommand(1);

    ServeOptions serve;
    auto* serve_cmd = app.add_subcommand("serve-sim", "Run a simulated device");
    serve_cmd->add_option("--port", serve.port, "TCP port (0 = ephemeral)");
    serve_cmd->add_option("--bind", serve.bind, "Bind address");
    serve_cmd->add_flag("--accelerated", serve.accelerated, "Tick as fast as possible");
    serve_cmd->add_flag("--stdio", serve.stdio, "Serve one session on stdin/stdout instead of TCP");
    serve_cmd->add_option("--duration", serve.duration, "Stop after this many simulated seconds");
    serve_cmd->add_option("--ui-port", serve.ui_port, "Serve the WebSocket console bridge on this port");
    serve_cmd->add_option("--assets", serve.assets, "Console static assets directory");
    serve_cmd->add_option("--decimation", serve.decimation, "Default telemetry decimation");
    add_device_options(serve_cmd, serve.device);

    ConnectOptions conn;
    int channel = 0;
    double kpa = 0.0;
    auto* set_cmd = app.add_subcommand("set", "Set one channel's target pressure");
    set_cmd->add_option("channel", channel)->required();
    set_cmd->add_option("kpa", kpa)->required();
    add_connect_options(set_cmd, conn);

    std::vector<double> all_kpa;
    auto* set_all_cmd = app.add_subcommand("set-all", "Set every channel's target in one frame");
    set_all_cmd->add_option("kpa", all_kpa, "One target per channel")->required();
    add_connect_options(set_all_cmd, conn);

    std::string get_channel = "all";
    bool get_flow = false;
    auto* get_cmd = app.add_subcommand("get", "Read pressure (or flow)");
    get_cmd->add_option("channel", get_channel, "Channel index or 'all'");
    get_cmd->add_flag("--flow", get_flow, "Read flow in L/min instead of pressure");
    add_connect_options(get_cmd, conn);

    double duration = 5.0;
    std::optional<int> decimation;
    std::vector<std::string> presets;
    auto* stream_cmd = app.add_subcommand("stream", "Print telemetry as JSON lines");
    stream_cmd->add_option("--duration", duration, "Simulated seconds to stream");
    stream_cmd->add_option("--decimation", decimation)->check(CLI::Range(1, 255));
    stream_cmd->add_option("--set", presets, "CHANNEL=KPA applied before streaming");
    add_connect_options(stream_cmd, conn);

    std::string csv_path;
    auto* record_cmd = app.add_subcommand("record", "Record telemetry to CSV");
    record_cmd->add_option("path", csv_path)->required();
    record_cmd->add_option("--duration", duration, "Simulated seconds to record");
    record_cmd->add_option("--decimation", decimation)->check(CLI::Range(1, 255));
    record_cmd->add_option("--set", presets, "CHANNEL=KPA applied before recording");
    add_connect_options(record_cmd, conn);

    std::string traj_path;
    std::string report_path;
    auto* traj_cmd = app.add_subcommand("run-traj", "Run a trajectory and report step metrics");
    traj_cmd->add_option("trajectory", traj_path)->required()->check(CLI::ExistingFile);
    traj_cmd->add_option("--csv", csv_path, "Also record telemetry to this CSV");
    traj_cmd->add_option("--report", report_path, "Write the JSON report here instead of stdout");
    add_connect_options(traj_cmd, conn);

    std::string inject_channel;
    std::optional<double> disturbance;
    std::optional<double> leak;
    std::optional<double> inject_duration;
    auto* inject_cmd = app.add_subcommand("inject", "Inject a flow disturbance or change the leak");
    inject_cmd->add_option("channel", inject_channel, "Channel index or 'all'")->required();
    auto* dist_opt = inject_cmd->add_option("--disturbance", disturbance, "Disturbance flow in L/min");
    auto* leak_opt = inject_cmd->add_option("--leak", leak, "Leak coefficient in (L/min)/kPa");
    dist_opt->excludes(leak_opt);
    inject_cmd->add_option("--duration", inject_duration, "Seconds; defaults to 0.5 for disturbances and permanent (0) for leaks");
    add_connect_options(inject_cmd, conn);

    int bench_channels = 10;
    std::uint64_t bench_ticks = 50'000;
    std::uint64_t bench_seed = 1;
    auto* bench_cmd = app.add_subcommand("bench", "Measure simulation throughput");
    bench_cmd->add_option("--channels", bench_channels)->check(CLI::Range(1, 24));
    bench_cmd->add_option("--ticks", bench_ticks);
    bench_cmd->add_option("--seed", bench_seed);

    CLI11_PARSE(app, argc, argv);

    try {
        if (serve_cmd->parsed()) {
            return serve_sim(serve);
        }
        if (bench_cmd->parsed()) {
            return bench(bench_channels, bench_ticks, bench_seed);
        }
        auto client = open_client(conn);
        const std::optional<std::uint8_t> decim =
            decimation ? std::optional<std::uint8_t>(static_cast<std::uint8_t>(*decimation)) : std::nullopt;
        if (set_cmd->parsed()) {
            client->set_pressure(channel, kpa);
        } else if (set_all_cmd->parsed()) {
            client->set_all(all_kpa);
        } else if (get_cmd->parsed()) {
            const int ch = parse_channel(get_channel);
            std::vector<double> values;
            if (ch == host::kAllChannels) {
                values = get_flow ? client->read_all_flows() : client->read_all_pressures();
            } else {
                values.push_back(get_flow ? client->read_flow(ch) : client->read_pressure(ch));
            }
            for (std::size_t i = 0; i < values.size(); ++i) {
                std::printf("%s%.*f", i == 0 ? "" : " ", get_flow ? 3 : 2, values[i]);
            }
            std::printf("\n");
        } else if (stream_cmd->parsed()) {
            apply_presets(*client, presets);
            auto sub = client->stream_telemetry(decim);
            std::optional<std::uint64_t> first;
            const auto span = static_cast<std::uint64_t>(std::llround(duration / kTickPeriodS));
            while (auto s = sub.next(std::chrono::milliseconds(2000))) {
                if (!first) {
                    first = s->tick;
                }
                if (s->tick - *first > span) {
                    break;
                }
                std::cout << ui::telemetry_message(*s).dump() << '\n';
            }
        } else if (record_cmd->parsed()) {
            apply_presets(*client, presets);
            client->record_csv(csv_path, duration, decim);
        } else if (traj_cmd->parsed()) {
            const auto traj = host::load_trajectory(traj_path);
            std::optional<std::ofstream> csv;
            if (!csv_path.empty()) {
                csv.emplace(csv_path);
                if (!*csv) {
                    throw ConfigError("cannot write " + csv_path);
                }
            }
            const auto report = client->run_trajectory(traj, csv ? &*csv : nullptr);
            const auto text = host::report_to_json(report).dump(2);
            if (report_path.empty()) {
                std::cout << text << '\n';
            } else {
                std::ofstream(report_path) << text << '\n';
            }
        } else if (inject_cmd->parsed()) {
            const int ch = parse_channel(inject_channel);
            if (disturbance) {
                client->inject(ch, {protocol::msg::ScenarioKind::Disturbance, *disturbance, inject_duration.value_or(0.5)});
            } else if (leak) {
                client->inject(ch, {protocol::msg::ScenarioKind::Leak, *leak, inject_duration.value_or(0.0)});
            } else {
                throw ConfigError("inject needs --disturbance or --leak");
            }
        }
        return 0;
    } catch (const TransportError& e) {
        std::fprintf(stderr, "openpneu: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "openpneu: %s\n", e.what());
        return 1;
    }
}
