#pragma once

// CSV recordings of telemetry. One row per channel per received snapshot:
//   wall_time,sim_tick,channel,pressure,target,flow,inflate_duty,deflate_duty,valve
// Duties are PWM counts (0..4095); valve is "inflate" or "deflate".

#include "openpneu/errors.hpp"
#include "openpneu/telemetry.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace openpneu::recording {

struct RecordingRow {
    double wall_time_s = 0.0;
    std::uint64_t sim_tick = 0;
    int channel = 0;
    double pressure_kpa = 0.0;
    double target_kpa = 0.0;
    double flow_lpm = 0.0;
    std::uint16_t inflate_duty = 0;
    std::uint16_t deflate_duty = 0;
    Valve valve = Valve::InflatePath;

    friend bool operator==(const RecordingRow&, const RecordingRow&) = default;
};

inline constexpr const char* kCsvHeader =
    "wall_time,sim_tick,channel,pressure,target,flow,inflate_duty,deflate_duty,valve";

inline std::vector<RecordingRow> rows_from_snapshot(const TelemetrySnapshot& s, double wall_time_s)
{
    std::vector<RecordingRow> rows;
    rows.reserve(s.channels.size());
    for (std::size_t i = 0; i < s.channels.size(); ++i) {
        const auto& ch = s.channels[i];
        rows.push_back(RecordingRow{wall_time_s, s.tick, static_cast<int>(i), ch.pressure_kpa, ch.target_kpa,
                                    ch.flow_lpm, ch.inflate_duty.counts(), ch.deflate_duty.counts(), ch.valve});
    }
    return rows;
}

inline std::string format_row(const RecordingRow& r)
{
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%.3f,%llu,%d,%.2f,%.2f,%.3f,%u,%u,%s", r.wall_time_s,
                  static_cast<unsigned long long>(r.sim_tick), r.channel, r.pressure_kpa, r.target_kpa, r.flow_lpm,
                  static_cast<unsigned>(r.inflate_duty), static_cast<unsigned>(r.deflate_duty),
                  r.valve == Valve::InflatePath ? "inflate" : "deflate");
    return buf;
}

class CsvWriter {
public:
    explicit CsvWriter(std::ostream& out) : out_(out) { out_ << kCsvHeader << '\n'; }

    void write(const RecordingRow& row) { out_ << format_row(row) << '\n'; }
    void write(const TelemetrySnapshot& s, double wall_time_s)
    {
        for (const auto& row : rows_from_snapshot(s, wall_time_s)) {
            write(row);
        }
    }

private:
    std::ostream& out_;
};

inline RecordingRow parse_row(const std::string& line)
{
    RecordingRow r;
    std::istringstream in(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(in, field, ',')) {
        fields.push_back(field);
    }
    if (fields.size() != 9) {
        throw ConfigError("malformed CSV row: " + line);
    }
    try {
        r.wall_time_s = std::stod(fields[0]);
        r.sim_tick = std::stoull(fields[1]);
        r.channel = std::stoi(fields[2]);
        r.pressure_kpa = std::stod(fields[3]);
        r.target_kpa = std::stod(fields[4]);
        r.flow_lpm = std::stod(fields[5]);
        r.inflate_duty = static_cast<std::uint16_t>(std::stoul(fields[6]));
        r.deflate_duty = static_cast<std::uint16_t>(std::stoul(fields[7]));
    } catch (const std::exception&) {
        throw ConfigError("malformed CSV row: " + line);
    }
    if (fields[8] == "inflate") {
        r.valve = Valve::InflatePath;
    } else if (fields[8] == "deflate") {
        r.valve = Valve::DeflatePath;
    } else {
        throw ConfigError("malformed valve field: " + fields[8]);
    }
    return r;
}

inline std::vector<RecordingRow> read_csv(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) {
        throw ConfigError("CSV header mismatch");
    }
    std::vector<RecordingRow> rows;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            rows.push_back(parse_row(line));
        }
    }
    return rows;
}

inline std::vector<RecordingRow> read_csv_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open " + path);
    }
    return read_csv(in);
}

} // namespace openpneu::recording
