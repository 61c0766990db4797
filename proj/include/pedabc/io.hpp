#pragma once
// Run configuration, trajectory ingestion, reference observables and all
// on-disk outputs. Formats are documented in docs/formats.md.

#include "pedabc/abc.hpp"
#include "pedabc/calibration.hpp"
#include "pedabc/error.hpp"
#include "pedabc/observables.hpp"
#include "pedabc/trajectory.hpp"

#include "json.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace pedabc::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Numbers

/// Shortest text that round-trips: 17 significant digits.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::optional<double> parse_double(std::string_view s) {
    std::string tmp(s);
    if (tmp.empty()) return std::nullopt;
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(tmp.c_str(), &end);
    if (end != tmp.c_str() + tmp.size()) return std::nullopt;
    return v;
}

inline std::optional<long long> parse_int(std::string_view s) {
    std::string tmp(s);
    if (tmp.empty()) return std::nullopt;
    char* end = nullptr;
    const long long v = std::strtoll(tmp.c_str(), &end, 10);
    if (end != tmp.c_str() + tmp.size()) return std::nullopt;
    return v;
}

/// Canonical width key, e.g. "1.2".
inline std::string width_key(double w) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", w);
    std::string s = buf;
    if (s.find('.') == std::string::npos && s.find('e') == std::string::npos) s += ".0";
    return s;
}

inline std::vector<std::string> split(std::string_view line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io_error, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::io_error, "cannot write " + path.string());
    out << content;
}

/// FNV-1a, used to fingerprint reference observables in manifests.
inline std::string fnv1a_hex(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// Trajectory files

/// How raw trajectory coordinates map into the measurement frame (bottleneck
/// centre at (2, 0), y growing into the room): optional x/y swap, y flip,
/// then translation.
struct TrajectoryFormat {
    std::optional<double> fps;  // overrides the file header
    double offset_x = 0.0;
    double offset_y = 0.0;
    bool swap_xy = false;
    bool flip_y = false;
    double exit_plane_y = -0.4;
};

/// Parse "id frame x y" records; '#' starts a comment, "# framerate: <fps>"
/// and "# unit: m|cm|mm" are recognised header lines.
inline TrajectoryLog parse_trajectories(std::string_view text, const TrajectoryFormat& fmt = {},
                                        const std::string& origin = "<input>") {
    struct Record {
        int id;
        long long frame;
        double x;
        double y;
    };
    std::optional<double> fps = fmt.fps;
    double scale = 1.0;
    std::vector<Record> records;
    int line_no = 0;
    for (const std::string& raw : split(text, '\n')) {
        ++line_no;
        std::string_view line = raw;
        while (!line.empty() && (line.front() == ' ' || line.front() == '\t')) line.remove_prefix(1);
        if (line.empty()) continue;
        if (line.front() == '#') {
            std::string body(line.substr(1));
            const auto colon = body.find(':');
            if (colon == std::string::npos) continue;
            std::string key = body.substr(0, colon);
            std::string value = body.substr(colon + 1);
            auto trim = [](std::string& s) {
                s.erase(0, s.find_first_not_of(" \t\r"));
                s.erase(s.find_last_not_of(" \t\r") + 1);
            };
            trim(key);
            trim(value);
            std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
            if (key == "framerate" && !fmt.fps) {
                const auto v = parse_double(value);
                if (!v || !(*v > 0.0))
                    throw Error(ErrorKind::parse_error, origin + ":" + std::to_string(line_no) + ": bad framerate");
                fps = *v;
            } else if (key == "unit") {
                if (value == "m") scale = 1.0;
                else if (value == "cm") scale = 0.01;
                else if (value == "mm") scale = 0.001;
                else throw Error(ErrorKind::parse_error, origin + ":" + std::to_string(line_no) + ": unknown unit '" + value + "'");
            }
            continue;
        }
        std::istringstream fields{std::string(line)};
        std::vector<std::string> tok;
        for (std::string t; fields >> t;) tok.push_back(t);
        const auto id = tok.size() >= 4 ? parse_int(tok[0]) : std::nullopt;
        const auto frame = tok.size() >= 4 ? parse_int(tok[1]) : std::nullopt;
        const auto x = tok.size() >= 4 ? parse_double(tok[2]) : std::nullopt;
        const auto y = tok.size() >= 4 ? parse_double(tok[3]) : std::nullopt;
        if (!id || !frame || !x || !y || *id <= 0 || *frame < 0 || !std::isfinite(*x) || !std::isfinite(*y))
            throw Error(ErrorKind::parse_error,
                        origin + ":" + std::to_string(line_no) + ": expected 'id frame x y', got '" + raw + "'");
        records.push_back({static_cast<int>(*id), *frame, *x, *y});
    }

    TrajectoryLog log;
    log.bottleneck_center = {2.0, 0.0};
    if (records.empty()) return log;
    if (!fps) throw Error(ErrorKind::missing_framerate, origin + ": no '# framerate:' header and no override");
    log.sample_interval = 1.0 / *fps;

    for (const Record& r : records) {
        double x = r.x * scale;
        double y = r.y * scale;
        if (fmt.swap_xy) std::swap(x, y);
        if (fmt.flip_y) y = -y;
        log.samples.push_back({r.id, static_cast<double>(r.frame) / *fps, x + fmt.offset_x, y + fmt.offset_y});
    }
    std::stable_sort(log.samples.begin(), log.samples.end(), [](const TrajectorySample& a, const TrajectorySample& b) {
        return a.t < b.t || (a.t == b.t && a.id < b.id);
    });

    std::set<int> ids;
    std::map<int, double> exit_of;
    for (const TrajectorySample& s : log.samples) {
        ids.insert(s.id);
        if (s.y < fmt.exit_plane_y && !exit_of.contains(s.id)) exit_of[s.id] = s.t;
    }
    std::vector<std::pair<double, int>> exits;
    for (const auto& [id, t] : exit_of) exits.emplace_back(t, id);
    std::sort(exits.begin(), exits.end());
    for (const auto& [t, id] : exits) {
        log.exit_times.push_back(t);
        log.exit_ids.push_back(id);
    }
    log.complete = exit_of.size() == ids.size();
    return log;
}

inline TrajectoryLog load_trajectories(const fs::path& path, const TrajectoryFormat& fmt = {}) {
    return parse_trajectories(read_file(path), fmt, path.string());
}

// ---------------------------------------------------------------------------
// Simulation outputs

inline std::string trajectory_csv(const TrajectoryLog& log) {
    std::string out = "id,t,x,y\n";
    for (const TrajectorySample& s : log.samples)
        out += std::to_string(s.id) + "," + format_double(s.t) + "," + format_double(s.x) + "," + format_double(s.y) + "\n";
    return out;
}

inline std::string exits_csv(const TrajectoryLog& log) {
    std::string out = "rank,id,t\n";
    for (std::size_t i = 0; i < log.exit_times.size(); ++i) {
        const int id = i < log.exit_ids.size() ? log.exit_ids[i] : 0;
        out += std::to_string(i + 1) + "," + std::to_string(id) + "," + format_double(log.exit_times[i]) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Observables

/// "width,interval" rows; unavailable intervals are written as "NA".
inline std::string egress_csv(const EgressObservable& obs) {
    std::string out = "width,interval\n";
    for (std::size_t i = 0; i < obs.widths.size(); ++i)
        out += width_key(obs.widths[i]) + "," + (obs.values[i] ? format_double(*obs.values[i]) : "NA") + "\n";
    return out;
}

inline EgressObservable parse_egress_csv(std::string_view text, const std::string& origin = "<egress csv>") {
    EgressObservable obs;
    int line_no = 0;
    for (const std::string& line : split(text, '\n')) {
        ++line_no;
        if (line.empty() || line_no == 1) continue;
        const auto cols = split(line, ',');
        const auto w = cols.size() == 2 ? parse_double(cols[0]) : std::nullopt;
        if (!w) throw Error(ErrorKind::parse_error, origin + ":" + std::to_string(line_no) + ": expected 'width,interval'");
        obs.widths.push_back(*w);
        if (cols[1] == "NA") {
            obs.values.emplace_back();
        } else {
            const auto v = parse_double(cols[1]);
            if (!v) throw Error(ErrorKind::parse_error, origin + ":" + std::to_string(line_no) + ": bad interval");
            obs.values.emplace_back(*v);
        }
    }
    return obs;
}

/// Per width: a "width=<w>,quantity=speed" header and ny rows of nx means,
/// then a "width=<w>,quantity=count" header and ny rows of sample counts.
/// Unavailable widths carry a single "width=<w>,quantity=unavailable" line.
inline std::string speed_field_csv(const SpeedFieldObservable& obs) {
    std::string out;
    for (std::size_t i = 0; i < obs.widths.size(); ++i) {
        const std::string w = width_key(obs.widths[i]);
        if (!obs.fields[i]) {
            out += "width=" + w + ",quantity=unavailable\n";
            continue;
        }
        const SpeedField& f = *obs.fields[i];
        out += "width=" + w + ",quantity=speed,nx=" + std::to_string(f.nx) + ",ny=" + std::to_string(f.ny) + "\n";
        for (int iy = 0; iy < f.ny; ++iy) {
            for (int ix = 0; ix < f.nx; ++ix)
                out += (ix ? "," : "") + format_double(f.mean[f.index(ix, iy)]);
            out += "\n";
        }
        out += "width=" + w + ",quantity=count\n";
        for (int iy = 0; iy < f.ny; ++iy) {
            for (int ix = 0; ix < f.nx; ++ix) out += (ix ? "," : "") + std::to_string(f.count[f.index(ix, iy)]);
            out += "\n";
        }
    }
    return out;
}

inline SpeedFieldObservable parse_speed_field_csv(std::string_view text, const std::string& origin = "<speed field csv>") {
    const auto lines = split(text, '\n');
    SpeedFieldObservable obs;
    std::size_t i = 0;
    auto fail = [&](const std::string& what) {
        throw Error(ErrorKind::parse_error, origin + ":" + std::to_string(i + 1) + ": " + what);
    };
    auto header = [&](const std::string& line) {
        std::map<std::string, std::string> kv;
        for (const std::string& part : split(line, ',')) {
            const auto eq = part.find('=');
            if (eq == std::string::npos) fail("expected key=value header");
            kv[part.substr(0, eq)] = part.substr(eq + 1);
        }
        return kv;
    };
    while (i < lines.size()) {
        if (lines[i].empty()) {
            ++i;
            continue;
        }
        auto kv = header(lines[i]);
        const auto w = parse_double(kv["width"]);
        if (!w) fail("header lacks width");
        if (kv["quantity"] == "unavailable") {
            obs.widths.push_back(*w);
            obs.fields.emplace_back();
            ++i;
            continue;
        }
        if (kv["quantity"] != "speed") fail("expected quantity=speed");
        const auto nx = parse_int(kv["nx"]);
        const auto ny = parse_int(kv["ny"]);
        if (!nx || !ny || *nx < 1 || *ny < 1) fail("bad grid shape");
        SpeedField f(static_cast<int>(*nx), static_cast<int>(*ny));
        ++i;
        auto read_rows = [&](auto&& store) {
            for (int iy = 0; iy < f.ny; ++iy, ++i) {
                if (i >= lines.size()) fail("truncated grid");
                const auto cols = split(lines[i], ',');
                if (static_cast<int>(cols.size()) != f.nx) fail("expected " + std::to_string(f.nx) + " columns");
                for (int ix = 0; ix < f.nx; ++ix) store(f.index(ix, iy), cols[static_cast<std::size_t>(ix)]);
            }
        };
        read_rows([&](std::size_t k, const std::string& s) {
            const auto v = parse_double(s);
            if (!v) fail("bad speed value '" + s + "'");
            f.mean[k] = *v;
        });
        if (i >= lines.size()) fail("missing count block");
        auto ckv = header(lines[i]);
        if (ckv["quantity"] != "count" || parse_double(ckv["width"]) != w) fail("expected count block for the same width");
        ++i;
        read_rows([&](std::size_t k, const std::string& s) {
            const auto v = parse_int(s);
            if (!v || *v < 0) fail("bad count '" + s + "'");
            f.count[k] = static_cast<long>(*v);
        });
        obs.widths.push_back(*w);
        obs.fields.emplace_back(std::move(f));
    }
    return obs;
}

inline std::string observable_csv(const Observable& obs) {
    if (const auto* e = std::get_if<EgressObservable>(&obs)) return egress_csv(*e);
    return speed_field_csv(std::get<SpeedFieldObservable>(obs));
}

// ---------------------------------------------------------------------------
// ABC outputs

/// One row per accepted draw: draw index, parameter columns, distance, child seed.
inline std::string samples_csv(const AbcResult& r, bool all_draws = false) {
    std::string out = "draw";
    for (const std::string& n : r.param_names) out += "," + n;
    out += ",distance,child_seed\n";
    for (const AbcDraw& d : all_draws ? r.all_draws : r.accepted) {
        out += std::to_string(d.draw);
        for (double v : d.theta) out += "," + format_double(v);
        out += "," + format_double(d.distance) + "," + std::to_string(d.child_seed) + "\n";
    }
    return out;
}

inline std::vector<AbcDraw> parse_samples_csv(std::string_view text, std::vector<std::string>* names = nullptr,
                                              const std::string& origin = "<samples csv>") {
    const auto lines = split(text, '\n');
    if (lines.empty() || lines[0].empty()) throw Error(ErrorKind::parse_error, origin + ": missing header");
    const auto head = split(lines[0], ',');
    if (head.size() < 3 || head.front() != "draw" || head[head.size() - 2] != "distance" || head.back() != "child_seed")
        throw Error(ErrorKind::parse_error, origin + ": unexpected header");
    const std::size_t np = head.size() - 3;
    if (names) names->assign(head.begin() + 1, head.begin() + 1 + static_cast<long>(np));
    std::vector<AbcDraw> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto cols = split(lines[i], ',');
        auto fail = [&] { throw Error(ErrorKind::parse_error, origin + ":" + std::to_string(i + 1) + ": bad sample row"); };
        if (cols.size() != head.size()) fail();
        AbcDraw d;
        const auto draw = parse_int(cols[0]);
        if (!draw) fail();
        d.draw = static_cast<std::size_t>(*draw);
        for (std::size_t p = 0; p < np; ++p) {
            const auto v = parse_double(cols[1 + p]);
            if (!v) fail();
            d.theta.push_back(*v);
        }
        const auto dist = parse_double(cols[1 + np]);
        if (!dist) fail();
        d.distance = *dist;
        char* end = nullptr;
        d.child_seed = std::strtoull(cols.back().c_str(), &end, 10);
        if (end != cols.back().c_str() + cols.back().size() || cols.back().empty()) fail();
        out.push_back(std::move(d));
    }
    return out;
}

inline std::string histograms_csv(const std::vector<ParamSummary>& summaries) {
    std::string out = "param,bin,lo,hi,mass\n";
    for (const ParamSummary& s : summaries) {
        const int bins = static_cast<int>(s.histogram.size());
        const double w = (s.hi - s.lo) / bins;
        for (int b = 0; b < bins; ++b) {
            out += s.name + "," + std::to_string(b) + "," + format_double(s.lo + b * w) + "," +
                   format_double(s.lo + (b + 1) * w) + "," + format_double(s.histogram[static_cast<std::size_t>(b)]) + "\n";
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Run configuration

/// The complete schema with default values; user files and --set overrides
/// may only touch keys that exist here, except below the free-form maps.
inline json default_config_json() {
    return json::parse(R"({
  "model": "ca",
  "scenario": {
    "room_width": 10.0, "room_height": 10.0, "bottleneck_depth": 0.4,
    "pedestrian_count": 70, "removal_distance": 1.0, "max_sim_time": 200.0,
    "widths": [1.2, 1.6, 2.0]
  },
  "sf": {
    "mass": 80.0, "tau": 0.5, "radius": 0.25, "dt": 0.05, "speed_clamp_factor": 2.0,
    "guidance_cell_size": 0.1, "sample_interval": 0.1, "force_cutoff": 0.001
  },
  "ca": { "cell_size": 0.4, "include_stay": true },
  "params": {
    "sf": { "v0": 1.5, "A": 2000.0, "B": 0.08, "k": 120000.0, "kappa": 240000.0 },
    "ca": { "S": 2.0, "delta_t": 0.3 }
  },
  "priors": {
    "sf": { "v0": [0.5, 3.0], "A": [0.0, 3000.0], "B": [0.02, 1.0], "k": [0.0, 240000.0], "kappa": [0.0, 480000.0] },
    "ca": { "S": [0.0, 10.0], "delta_t": [0.1, 1.0] }
  },
  "abc": {
    "n": 1000, "epsilon": 2.0, "metric": "egress", "seed": 1, "replicates_per_width": 1,
    "workers": 0, "keep_all_draws": false, "early_reject": false, "histogram_bins": 20
  },
  "observables": {
    "skip": 10, "span": 30, "empty_cells": "zero_fill", "cell_size": 0.2, "nx": 20, "ny": 10
  },
  "reference": {
    "source": "inline",
    "egress": { "1.2": 9.68, "1.6": 7.64, "2.0": 5.20 },
    "trajectories": {},
    "trajectory_format": {
      "fps": null, "offset_x": 0.0, "offset_y": 0.0, "swap_xy": false, "flip_y": false, "exit_plane_y": -0.4
    },
    "egress_csv": "",
    "speed_field_csv": ""
  },
  "output": "out"
})");
}

namespace detail {

inline bool free_form(const std::string& path) {
    return path == "/reference/egress" || path == "/reference/trajectories";
}

inline void check_against_schema(const json& user, const json& schema, const std::string& path) {
    if (!user.is_object()) return;
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string child = path + "/" + it.key();
        if (!schema.contains(it.key()))
            throw Error(ErrorKind::invalid_config, "unknown configuration key '" + child.substr(1) + "'");
        if (free_form(child)) continue;
        const json& s = schema[it.key()];
        if (s.is_object()) {
            if (!it->is_object())
                throw Error(ErrorKind::invalid_config, "configuration key '" + child.substr(1) + "' must be an object");
            check_against_schema(*it, s, child);
        }
    }
}

inline void merge_into(json& base, const json& over, const std::string& path) {
    for (auto it = over.begin(); it != over.end(); ++it) {
        const std::string child = path + "/" + it.key();
        if (free_form(child)) {
            base[it.key()] = *it;
        } else if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object()) {
            merge_into(base[it.key()], *it, child);
        } else {
            base[it.key()] = *it;
        }
    }
}

} // namespace detail

/// Apply one "dotted.key=value" override. Values parse as JSON where
/// possible and fall back to plain strings.
inline void apply_override(json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw Error(ErrorKind::invalid_config, "override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    const json schema = default_config_json();
    const auto parts = split(key, '.');
    json* node = &config;
    const json* snode = &schema;
    std::string path;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (detail::free_form(path)) {
            // Free-form keys are widths such as "1.6"; the rest of the key is one name.
            std::string rest = parts[i];
            for (std::size_t j = i + 1; j < parts.size(); ++j) rest += "." + parts[j];
            (*node)[rest] = value;
            return;
        }
        path += "/" + parts[i];
        const bool last = i + 1 == parts.size();
        if (!snode->is_object() || !snode->contains(parts[i]))
            throw Error(ErrorKind::invalid_config, "unknown configuration key '" + key + "'");
        snode = &(*snode)[parts[i]];
        if (last) {
            (*node)[parts[i]] = value;
        } else {
            node = &(*node)[parts[i]];
        }
    }
}

struct ReferenceSpec {
    std::string source = "inline";  // inline | trajectories | observable_csv
    std::map<std::string, double> egress;
    std::map<std::string, std::string> trajectories;
    TrajectoryFormat format;
    std::string egress_csv;
    std::string speed_field_csv;
};

struct RunConfig {
    json raw;
    fs::path base_dir;  // relative input paths resolve against this
    ModelKind model = ModelKind::ca;
    ScenarioSpec scenario;
    std::vector<double> widths;
    SfConstants sf;
    CaOptions ca;
    ObservableOptions observables;
    MeasurementGrid grid;
    ParamVector params;
    PriorSpec prior;
    AbcConfig abc;
    bool early_reject = false;
    int histogram_bins = 20;
    ReferenceSpec reference;
    fs::path output;

    ModelSetup model_setup() const {
        ModelSetup s;
        s.model = model;
        s.scenario = scenario;
        s.widths = widths;
        s.sf = sf;
        s.ca = ca;
        s.observables = observables;
        s.grid = grid;
        s.metric = abc.metric;
        s.replicates_per_width = abc.replicates_per_width;
        if (early_reject) s.early_reject_epsilon = abc.epsilon;
        return s;
    }

    fs::path resolve(const std::string& p) const {
        const fs::path path(p);
        return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    }
};

inline ModelKind parse_model(const std::string& s) {
    if (s == "sf") return ModelKind::sf;
    if (s == "ca") return ModelKind::ca;
    throw Error(ErrorKind::invalid_config, "model must be 'sf' or 'ca', got '" + s + "'");
}

inline Metric parse_metric(const std::string& s) {
    if (s == "egress") return Metric::egress;
    if (s == "speed_field") return Metric::speed_field;
    throw Error(ErrorKind::invalid_config, "abc.metric must be 'egress' or 'speed_field', got '" + s + "'");
}

/// Typed view of a merged configuration document.
inline RunConfig interpret_config(const json& doc, fs::path base_dir = {}) {
    detail::check_against_schema(doc, default_config_json(), "");
    RunConfig c;
    c.raw = doc;
    c.base_dir = std::move(base_dir);
    auto get = [&](const json& node, const char* key, const std::string& where) -> const json& {
        if (!node.contains(key)) throw Error(ErrorKind::invalid_config, "missing key '" + where + "." + key + "'");
        return node[key];
    };
    auto num = [&](const json& node, const char* key, const std::string& where) {
        const json& v = get(node, key, where);
        if (!v.is_number()) throw Error(ErrorKind::invalid_config, "'" + where + "." + key + "' must be a number");
        return v.get<double>();
    };
    auto integer = [&](const json& node, const char* key, const std::string& where) {
        const json& v = get(node, key, where);
        if (!v.is_number_integer())
            throw Error(ErrorKind::invalid_config, "'" + where + "." + key + "' must be an integer");
        return v.get<long long>();
    };
    auto boolean = [&](const json& node, const char* key, const std::string& where) {
        const json& v = get(node, key, where);
        if (!v.is_boolean()) throw Error(ErrorKind::invalid_config, "'" + where + "." + key + "' must be true or false");
        return v.get<bool>();
    };
    auto str = [&](const json& node, const char* key, const std::string& where) {
        const json& v = get(node, key, where);
        if (!v.is_string()) throw Error(ErrorKind::invalid_config, "'" + where + "." + key + "' must be a string");
        return v.get<std::string>();
    };

    if (!doc.contains("model") || !doc["model"].is_string())
        throw Error(ErrorKind::invalid_config, "'model' must be a string");
    c.model = parse_model(doc["model"].get<std::string>());
    const std::string mname(to_string(c.model));

    const json& sc = doc["scenario"];
    c.scenario.room_width = num(sc, "room_width", "scenario");
    c.scenario.room_height = num(sc, "room_height", "scenario");
    c.scenario.bottleneck_depth = num(sc, "bottleneck_depth", "scenario");
    c.scenario.pedestrian_count = static_cast<int>(integer(sc, "pedestrian_count", "scenario"));
    c.scenario.removal_distance = num(sc, "removal_distance", "scenario");
    c.scenario.max_sim_time = num(sc, "max_sim_time", "scenario");
    const json& widths = get(sc, "widths", "scenario");
    if (!widths.is_array() || widths.empty())
        throw Error(ErrorKind::invalid_config, "'scenario.widths' must be a non-empty array");
    for (const json& w : widths) {
        if (!w.is_number()) throw Error(ErrorKind::invalid_config, "'scenario.widths' entries must be numbers");
        c.widths.push_back(w.get<double>());
    }
    for (double w : c.widths) {
        ScenarioSpec probe = c.scenario;
        probe.bottleneck_width = w;
        build_scenario(probe);
    }
    c.scenario.bottleneck_width = c.widths.front();

    const json& sf = doc["sf"];
    c.sf.mass = num(sf, "mass", "sf");
    c.sf.tau = num(sf, "tau", "sf");
    c.sf.radius = num(sf, "radius", "sf");
    c.sf.dt = num(sf, "dt", "sf");
    c.sf.speed_clamp_factor = num(sf, "speed_clamp_factor", "sf");
    c.sf.guidance_cell_size = num(sf, "guidance_cell_size", "sf");
    c.sf.sample_interval = num(sf, "sample_interval", "sf");
    c.sf.force_cutoff = num(sf, "force_cutoff", "sf");
    if (!(c.sf.mass > 0 && c.sf.tau > 0 && c.sf.radius > 0 && c.sf.dt > 0 && c.sf.speed_clamp_factor > 0 &&
          c.sf.sample_interval >= c.sf.dt))
        throw Error(ErrorKind::invalid_config, "sf constants must be positive and sample_interval >= dt");

    const json& ca = doc["ca"];
    c.ca.cell_size = num(ca, "cell_size", "ca");
    c.ca.include_stay = boolean(ca, "include_stay", "ca");

    const json& params = get(get(doc, "params", ""), mname.c_str(), "params");
    for (const std::string& name : model_param_names(c.model)) {
        c.params.names.push_back(name);
        c.params.values.push_back(num(params, name.c_str(), "params." + mname));
    }
    for (auto it = params.begin(); it != params.end(); ++it) {
        const auto names = model_param_names(c.model);
        if (std::find(names.begin(), names.end(), it.key()) == names.end())
            throw Error(ErrorKind::invalid_config, "unknown parameter '" + it.key() + "' for model " + mname);
    }

    const json& priors = get(get(doc, "priors", ""), mname.c_str(), "priors");
    const PriorSpec defaults = default_prior(c.model);
    for (const ParamRange& d : defaults.params) {
        const json& r = get(priors, d.name.c_str(), "priors." + mname);
        if (!r.is_array() || r.size() != 2 || !r[0].is_number() || !r[1].is_number())
            throw Error(ErrorKind::invalid_config, "'priors." + mname + "." + d.name + "' must be [lo, hi]");
        c.prior.params.push_back({d.name, r[0].get<double>(), r[1].get<double>(), d.unit});
    }
    c.prior.validate();

    const json& abc = doc["abc"];
    const long long n = integer(abc, "n", "abc");
    if (n < 1) throw Error(ErrorKind::invalid_config, "'abc.n' must be at least 1");
    c.abc.n = static_cast<std::size_t>(n);
    const json& eps = get(abc, "epsilon", "abc");
    if (eps.is_string() && (eps == "inf" || eps == "+inf")) c.abc.epsilon = std::numeric_limits<double>::infinity();
    else c.abc.epsilon = num(abc, "epsilon", "abc");
    c.abc.metric = parse_metric(str(abc, "metric", "abc"));
    c.abc.seed = static_cast<std::uint64_t>(integer(abc, "seed", "abc"));
    c.abc.replicates_per_width = static_cast<int>(integer(abc, "replicates_per_width", "abc"));
    const long long workers = integer(abc, "workers", "abc");
    if (workers < 0) throw Error(ErrorKind::invalid_config, "'abc.workers' must be >= 0");
    c.abc.workers = static_cast<unsigned>(workers);
    c.abc.keep_all_draws = boolean(abc, "keep_all_draws", "abc");
    c.abc.widths = c.widths;
    c.early_reject = boolean(abc, "early_reject", "abc");
    c.histogram_bins = static_cast<int>(integer(abc, "histogram_bins", "abc"));
    c.abc.validate();
    if (c.histogram_bins < 1) throw Error(ErrorKind::invalid_config, "'abc.histogram_bins' must be >= 1");

    const json& obs = doc["observables"];
    c.observables.skip = static_cast<int>(integer(obs, "skip", "observables"));
    c.observables.span = static_cast<int>(integer(obs, "span", "observables"));
    if (c.observables.skip < 1 || c.observables.span < 1)
        throw Error(ErrorKind::invalid_config, "observables.skip and observables.span must be >= 1");
    const std::string empty = str(obs, "empty_cells", "observables");
    if (empty == "zero_fill") c.observables.empty_cells = EmptyCellRule::zero_fill;
    else if (empty == "exclude_pairwise") c.observables.empty_cells = EmptyCellRule::exclude_pairwise;
    else throw Error(ErrorKind::invalid_config, "observables.empty_cells must be 'zero_fill' or 'exclude_pairwise'");
    c.grid.cell = num(obs, "cell_size", "observables");
    c.grid.nx = static_cast<int>(integer(obs, "nx", "observables"));
    c.grid.ny = static_cast<int>(integer(obs, "ny", "observables"));
    if (!(c.grid.cell > 0) || c.grid.nx < 1 || c.grid.ny < 1)
        throw Error(ErrorKind::invalid_config, "measurement grid must have positive size");

    const json& ref = doc["reference"];
    c.reference.source = str(ref, "source", "reference");
    if (c.reference.source != "inline" && c.reference.source != "trajectories" && c.reference.source != "observable_csv")
        throw Error(ErrorKind::invalid_config, "reference.source must be inline, trajectories or observable_csv");
    const json& eg = get(ref, "egress", "reference");
    if (!eg.is_object()) throw Error(ErrorKind::invalid_config, "reference.egress must map width to seconds");
    for (auto it = eg.begin(); it != eg.end(); ++it) {
        if (!it->is_number()) throw Error(ErrorKind::invalid_config, "reference.egress." + it.key() + " must be a number");
        c.reference.egress[it.key()] = it->get<double>();
    }
    const json& tr = get(ref, "trajectories", "reference");
    if (!tr.is_object()) throw Error(ErrorKind::invalid_config, "reference.trajectories must map width to a file");
    for (auto it = tr.begin(); it != tr.end(); ++it) {
        if (!it->is_string())
            throw Error(ErrorKind::invalid_config, "reference.trajectories." + it.key() + " must be a path");
        c.reference.trajectories[it.key()] = it->get<std::string>();
    }
    const json& tf = get(ref, "trajectory_format", "reference");
    if (tf.contains("fps") && !tf["fps"].is_null()) c.reference.format.fps = num(tf, "fps", "reference.trajectory_format");
    c.reference.format.offset_x = num(tf, "offset_x", "reference.trajectory_format");
    c.reference.format.offset_y = num(tf, "offset_y", "reference.trajectory_format");
    c.reference.format.swap_xy = boolean(tf, "swap_xy", "reference.trajectory_format");
    c.reference.format.flip_y = boolean(tf, "flip_y", "reference.trajectory_format");
    c.reference.format.exit_plane_y = num(tf, "exit_plane_y", "reference.trajectory_format");
    c.reference.egress_csv = str(ref, "egress_csv", "reference");
    c.reference.speed_field_csv = str(ref, "speed_field_csv", "reference");

    c.output = str(doc, "output", "");
    return c;
}

struct ConfigDocument {
    json doc;
    fs::path base_dir;
};

/// Defaults merged with the file, if any.
inline ConfigDocument load_config_document(const std::optional<fs::path>& file) {
    ConfigDocument c{default_config_json(), {}};
    if (file) {
        json user = json::parse(read_file(*file), nullptr, false);
        if (user.is_discarded() || !user.is_object())
            throw Error(ErrorKind::parse_error, file->string() + ": not a JSON object");
        detail::check_against_schema(user, c.doc, "");
        detail::merge_into(c.doc, user, "");
        c.base_dir = file->parent_path();
    }
    return c;
}

/// Defaults, then the file (if any), then each override in order.
inline RunConfig load_run_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides = {}) {
    ConfigDocument c = load_config_document(file);
    for (const std::string& o : overrides) apply_override(c.doc, o);
    return interpret_config(c.doc, c.base_dir);
}

// ---------------------------------------------------------------------------
// Reference observables

inline std::string find_width_entry(const std::map<std::string, double>& m, double w, const char* what) {
    for (const auto& [k, v] : m) {
        const auto kw = parse_double(k);
        if (kw && std::abs(*kw - w) < 1e-9) return k;
    }
    throw Error(ErrorKind::missing_reference, std::string(what) + " has no entry for width " + width_key(w));
}

/// Reference observable for the configured metric and widths.
inline Observable load_reference(const RunConfig& c) {
    const auto& ref = c.reference;
    if (ref.source == "inline") {
        if (c.abc.metric != Metric::egress)
            throw Error(ErrorKind::missing_reference,
                        "metric speed_field needs reference.source = trajectories or observable_csv");
        EgressObservable obs;
        for (double w : c.widths) {
            obs.widths.push_back(w);
            obs.values.emplace_back(ref.egress.at(find_width_entry(ref.egress, w, "reference.egress")));
        }
        return obs;
    }
    if (ref.source == "trajectories") {
        std::map<std::string, double> keyed;
        for (const auto& [k, path] : ref.trajectories) {
            const auto w = parse_double(k);
            if (!w) throw Error(ErrorKind::invalid_config, "reference.trajectories key '" + k + "' is not a width");
            keyed[k] = *w;
        }
        EgressObservable eg;
        SpeedFieldObservable sfo;
        for (double w : c.widths) {
            std::optional<std::string> key;
            for (const auto& [k, kw] : keyed)
                if (std::abs(kw - w) < 1e-9) key = k;
            if (!key) throw Error(ErrorKind::missing_reference, "no trajectory file for width " + width_key(w));
            const TrajectoryLog log = load_trajectories(c.resolve(ref.trajectories.at(*key)), ref.format);
            eg.widths.push_back(w);
            eg.values.push_back(egress_interval(log, c.observables.skip, c.observables.span));
            sfo.widths.push_back(w);
            sfo.fields.push_back(speed_field(log, c.observables, c.grid));
            if (c.abc.metric == Metric::egress && !eg.values.back())
                throw Error(ErrorKind::missing_reference, "trajectory file for width " + width_key(w) +
                                                              " has too few exits for the egress interval");
            if (c.abc.metric == Metric::speed_field && !sfo.fields.back())
                throw Error(ErrorKind::missing_reference, "trajectory file for width " + width_key(w) +
                                                              " has too few exits for the speed-field window");
        }
        if (c.abc.metric == Metric::egress) return eg;
        return sfo;
    }
    // observable_csv
    const std::string& file = c.abc.metric == Metric::egress ? ref.egress_csv : ref.speed_field_csv;
    if (file.empty())
        throw Error(ErrorKind::missing_reference, std::string("reference.") +
                                                      (c.abc.metric == Metric::egress ? "egress_csv" : "speed_field_csv") +
                                                      " is not set");
    const fs::path path = c.resolve(file);
    Observable loaded;
    if (c.abc.metric == Metric::egress) loaded = parse_egress_csv(read_file(path), path.string());
    else loaded = parse_speed_field_csv(read_file(path), path.string());
    // Reorder to the configured widths.
    if (auto* e = std::get_if<EgressObservable>(&loaded)) {
        EgressObservable out;
        for (double w : c.widths) {
            auto it = std::find_if(e->widths.begin(), e->widths.end(), [&](double x) { return std::abs(x - w) < 1e-9; });
            if (it == e->widths.end()) throw Error(ErrorKind::missing_reference, path.string() + " lacks width " + width_key(w));
            const auto& v = e->values[static_cast<std::size_t>(it - e->widths.begin())];
            if (!v) throw Error(ErrorKind::missing_reference, path.string() + " marks width " + width_key(w) + " unavailable");
            out.widths.push_back(w);
            out.values.push_back(v);
        }
        return out;
    }
    auto& s = std::get<SpeedFieldObservable>(loaded);
    SpeedFieldObservable out;
    for (double w : c.widths) {
        auto it = std::find_if(s.widths.begin(), s.widths.end(), [&](double x) { return std::abs(x - w) < 1e-9; });
        if (it == s.widths.end()) throw Error(ErrorKind::missing_reference, path.string() + " lacks width " + width_key(w));
        const auto& f = s.fields[static_cast<std::size_t>(it - s.widths.begin())];
        if (!f) throw Error(ErrorKind::missing_reference, path.string() + " marks width " + width_key(w) + " unavailable");
        if (f->nx != c.grid.nx || f->ny != c.grid.ny)
            throw Error(ErrorKind::shape_mismatch, path.string() + " grid shape differs from the configured grid");
        out.widths.push_back(w);
        out.fields.push_back(f);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifests

/// Structured record of a calibration run.
inline json make_manifest(const RunConfig& c, const Observable& reference, const AbcResult& r,
                          const std::vector<ParamSummary>* posterior) {
    json m;
    m["format"] = "pedabc-manifest/1";
    m["model"] = std::string(to_string(c.model));
    m["metric"] = std::string(to_string(c.abc.metric));
    m["epsilon"] = std::isinf(r.epsilon) ? json("inf") : json(r.epsilon);
    m["widths"] = c.widths;
    m["draw_semantics"] = "joint";
    m["replicates_per_width"] = c.abc.replicates_per_width;
    m["observables"] = {{"skip", c.observables.skip},
                        {"span", c.observables.span},
                        {"empty_cells", c.observables.empty_cells == EmptyCellRule::zero_fill ? "zero_fill" : "exclude_pairwise"}};
    const std::string ref_text = observable_csv(reference);
    m["reference"] = {{"source", c.reference.source}, {"digest", fnv1a_hex(ref_text)}};
    m["seed"] = c.abc.seed;
    m["n_total"] = r.n_total;
    m["n_accepted"] = r.accepted.size();
    m["n_failed"] = r.n_failed;
    m["acceptance_rate"] = r.acceptance_rate();
    m["early_reject"] = c.early_reject;
    m["empty_posterior"] = r.accepted.empty();
    if (posterior) {
        json post = json::array();
        for (const ParamSummary& s : *posterior)
            post.push_back({{"name", s.name}, {"mean", s.mean}, {"variance", s.variance}, {"q05", s.q05}, {"q95", s.q95}});
        m["posterior"] = post;
    }
    m["config"] = c.raw;
    return m;
}

struct ManifestSummary {
    std::string model;
    std::string metric;
    double epsilon = 0.0;
    double acceptance_rate = 0.0;
    std::size_t n_total = 0;
    json compat;  // fields that must agree for a Bayes factor
};

inline ManifestSummary read_manifest(const fs::path& path) {
    const json m = json::parse(read_file(path), nullptr, false);
    auto fail = [&](const std::string& what) { throw Error(ErrorKind::parse_error, path.string() + ": " + what); };
    if (m.is_discarded() || !m.is_object()) fail("not a JSON manifest");
    for (const char* key : {"model", "metric", "epsilon", "acceptance_rate", "n_total", "widths", "reference"})
        if (!m.contains(key)) fail(std::string("missing '") + key + "'");
    ManifestSummary s;
    s.model = m["model"].get<std::string>();
    s.metric = m["metric"].get<std::string>();
    if (m["epsilon"].is_string()) {
        if (m["epsilon"] != "inf") fail("bad epsilon");
        s.epsilon = std::numeric_limits<double>::infinity();
    } else {
        s.epsilon = m["epsilon"].get<double>();
    }
    s.acceptance_rate = m["acceptance_rate"].get<double>();
    s.n_total = m["n_total"].get<std::size_t>();
    s.compat = {{"metric", m["metric"]},
                {"epsilon", m["epsilon"]},
                {"widths", m["widths"]},
                {"reference", m["reference"]},
                {"draw_semantics", m.value("draw_semantics", "joint")},
                {"replicates_per_width", m.value("replicates_per_width", 1)},
                {"observables", m.value("observables", json::object())}};
    return s;
}

/// Throws incompatible-runs naming the first field on which the runs differ.
inline void check_compatible(const ManifestSummary& a, const ManifestSummary& b) {
    for (auto it = a.compat.begin(); it != a.compat.end(); ++it) {
        if (!b.compat.contains(it.key()) || b.compat[it.key()] != *it)
            throw Error(ErrorKind::incompatible_runs, "manifests differ in '" + it.key() + "': " + it->dump() +
                                                          " vs " + b.compat.value(it.key(), json()).dump());
    }
}

} // namespace pedabc::io
