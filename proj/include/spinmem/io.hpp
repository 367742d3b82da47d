#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace spinmem {

inline constexpr const char* tool_name = "spinmem";
inline constexpr const char* tool_version = "0.1.0";

using ordered_json = nlohmann::ordered_json;

// 10 significant digits, shortest of fixed/scientific, no locale.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 10);
    return std::string(buf, r.ptr);
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[std::size_t(i)] = digits[v & 0xf];
    return s;
}

inline std::string config_hash(const ordered_json& config) { return hex64(fnv1a64(config.dump())); }

using Cell = std::variant<double, std::string>;

struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;

    void add(std::vector<Cell> row) { rows.push_back(std::move(row)); }
};

inline std::string csv_cell(const Cell& c) {
    if (auto* d = std::get_if<double>(&c)) return format_number(*d);
    const std::string& s = std::get<std::string>(c);
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) {
        if (ch == '"') q += '"';
        q += ch;
    }
    return q + "\"";
}

inline void write_csv(std::ostream& os, const Table& t, const std::string& hash) {
    os << "# " << tool_name << ' ' << tool_version << " config_hash=" << hash << '\n';
    os << "# units: *_mhz/*_khz are rate/2pi, *_us microseconds, ps/probabilities dimensionless\n";
    for (std::size_t i = 0; i < t.columns.size(); ++i) os << (i ? "," : "") << t.columns[i];
    os << '\n';
    for (const auto& row : t.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << csv_cell(row[i]);
        os << '\n';
    }
}

inline ordered_json cell_json(const Cell& c) {
    if (auto* d = std::get_if<double>(&c)) {
        if (!std::isfinite(*d)) return format_number(*d);
        return *d;
    }
    return std::get<std::string>(c);
}

// {tool, version, config_hash, config, results[...], extra...}; a single-row
// table is also flattened into the top level.
inline ordered_json make_json(const Table& t, const ordered_json& config, const std::string& hash,
                              const ordered_json& extra = ordered_json::object()) {
    ordered_json j;
    j["tool"] = tool_name;
    j["version"] = tool_version;
    j["config_hash"] = hash;
    j["config"] = config;
    ordered_json rows = ordered_json::array();
    for (const auto& row : t.rows) {
        ordered_json r = ordered_json::object();
        for (std::size_t i = 0; i < row.size() && i < t.columns.size(); ++i)
            r[t.columns[i]] = cell_json(row[i]);
        rows.push_back(std::move(r));
    }
    if (rows.size() == 1)
        for (auto it = rows[0].begin(); it != rows[0].end(); ++it) j[it.key()] = it.value();
    j["results"] = std::move(rows);
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    return j;
}

inline void write_json(std::ostream& os, const Table& t, const ordered_json& config,
                       const std::string& hash, const ordered_json& extra = ordered_json::object()) {
    os << make_json(t, config, hash, extra).dump(2) << '\n';
}

}  // namespace spinmem
