#include "openpneu/config.hpp"
#include "openpneu/scenario.hpp"

#include <gtest/gtest.h>

using namespace openpneu;

TEST(Config, DefaultsWhenEmpty)
{
    const auto cfg = config::parse("");
    EXPECT_EQ(cfg.channel_count(), 10);
    EXPECT_EQ(cfg.telemetry_decimation, 2u);
    EXPECT_DOUBLE_EQ(cfg.channels[0].plant.chamber.rest_volume_ml, 30.0);
    EXPECT_DOUBLE_EQ(cfg.channels[0].control.gains.kp, 0.5);
}

TEST(Config, GlobalAndPerChannelKeys)
{
    const auto cfg = config::parse(R"(
# bench rig
channels = 4
seed = 99
ch2.chamber.leak_coefficient = 0.02   # overrides apply after globals
chamber.compliance = 0.25
pid.kp = 0.4
sensor.preset = positive
sensor.noise_std = 0.05
telemetry_decimation = 5
)");
    EXPECT_EQ(cfg.channel_count(), 4);
    EXPECT_EQ(cfg.seed, 99u);
    EXPECT_EQ(cfg.telemetry_decimation, 5u);
    for (const auto& ch : cfg.channels) {
        EXPECT_DOUBLE_EQ(ch.plant.chamber.compliance_ml_per_kpa, 0.25);
        EXPECT_DOUBLE_EQ(ch.control.gains.kp, 0.4);
        EXPECT_DOUBLE_EQ(ch.plant.sensor.min_kpa, 0.0);
        EXPECT_DOUBLE_EQ(ch.plant.sensor.noise_std_kpa, 0.05);
    }
    EXPECT_DOUBLE_EQ(cfg.channels[2].plant.chamber.leak_coefficient, 0.02);
    EXPECT_DOUBLE_EQ(cfg.channels[1].plant.chamber.leak_coefficient, 0.0);
}

TEST(Config, Errors)
{
    EXPECT_THROW(config::parse("bogus = 1"), ConfigError);
    EXPECT_THROW(config::parse("channels = 30"), ConfigError);
    EXPECT_THROW(config::parse("pid.kp = abc"), ConfigError);
    EXPECT_THROW(config::parse("no equals sign"), ConfigError);
    EXPECT_THROW(config::parse("channels = 2\nch5.pid.kp = 1"), ConfigError);
    EXPECT_THROW(config::parse("inflate.stall_pressure = -3"), ConfigError);
    EXPECT_THROW(config::parse("mode = hardware"), ConfigError);
}

TEST(Config, ResizeCopiesFirstChannel)
{
    auto cfg = config::parse("channels = 2\nch0.pid.kp = 0.3");
    config::resize_channels(cfg, 5);
    EXPECT_EQ(cfg.channel_count(), 5);
    EXPECT_DOUBLE_EQ(cfg.channels[4].control.gains.kp, 0.3);
    EXPECT_THROW(config::resize_channels(cfg, 0), ConfigError);
}

TEST(Scenario, ParsesObjectAndArrayForms)
{
    const auto events = scenario::parse_scenario(nlohmann::json::parse(R"({"events": [
        {"time_s": 5.0, "channel": 0, "kind": "disturbance", "value": -0.5, "duration_s": 1.0},
        {"time_s": 2.0, "channel": "all", "kind": "leak", "value": 0.02}
    ]})"));
    ASSERT_EQ(events.size(), 2u);
    EXPECT_EQ(events[0].kind, scenario::EventKind::Disturbance);
    EXPECT_DOUBLE_EQ(events[0].value, -0.5);
    EXPECT_EQ(events[1].channel, scenario::kAllChannels);
    EXPECT_DOUBLE_EQ(events[1].duration_s, 0.0);

    const auto arr = scenario::parse_scenario(nlohmann::json::parse(
        R"([{"time_s": 1, "channel": 3, "kind": "leak", "value": 0.01, "duration_s": 2}])"));
    ASSERT_EQ(arr.size(), 1u);
    EXPECT_EQ(scenario::event_from_json(scenario::event_to_json(arr[0])).channel, 3);
}

TEST(Scenario, Errors)
{
    using nlohmann::json;
    EXPECT_THROW(scenario::parse_scenario(json::parse(R"({"foo": []})")), ConfigError);
    EXPECT_THROW(scenario::event_from_json(json::parse(R"({"time_s": 1, "channel": 0, "kind": "squeeze", "value": 1})")),
                 ConfigError);
    EXPECT_THROW(
        scenario::event_from_json(json::parse(R"({"time_s": 1, "channel": 0, "kind": "disturbance", "value": 1})")),
        ConfigError);
    EXPECT_THROW(scenario::event_from_json(json::parse(R"({"time_s": -1, "channel": 0, "kind": "leak", "value": 1})")),
                 ConfigError);
    EXPECT_THROW(scenario::load_scenario("/nonexistent/scenario.json"), ConfigError);
}

TEST(Scenario, TimeToTicks)
{
    EXPECT_EQ(scenario::seconds_to_ticks(5.0, 0.02), 250u);
    EXPECT_EQ(scenario::seconds_to_ticks(0.5, 0.02), 25u);
    EXPECT_EQ(scenario::seconds_to_ticks(0.0, 0.02), 0u);
}
