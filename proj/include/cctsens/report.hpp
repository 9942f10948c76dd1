#pragma once

// Deterministic text output: 17 significant digits, fixed column order, and a
// config-hash line at the top of every file.

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cctsens {

inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class CsvWriter {
public:
    CsvWriter(std::ostream& os, const std::string& config_hash, const std::vector<std::string>& columns)
        : os_(os), width_(columns.size()) {
        os_ << "# config_hash=" << config_hash << '\n';
        write_row(columns);
    }

    void row(const std::vector<std::string>& cells) {
        if (cells.size() != width_) throw std::logic_error("CSV row width does not match the header");
        write_row(cells);
    }

private:
    static std::string quote(const std::string& s) {
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string out = "\"";
        for (const char c : s) {
            if (c == '"') out += '"';
            out += c;
        }
        return out + '"';
    }

    void write_row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) os_ << (i ? "," : "") << quote(cells[i]);
        os_ << '\n';
    }

    std::ostream& os_;
    std::size_t width_;
};

namespace detail {

inline void json_string(std::ostream& os, const std::string& s) {
    os << nlohmann::json(s).dump();
}

inline void write_json(std::ostream& os, const nlohmann::json& j, int indent, int depth) {
    const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
    const std::string end_pad(static_cast<std::size_t>(indent * depth), ' ');
    switch (j.type()) {
        case nlohmann::json::value_t::object: {
            if (j.empty()) {
                os << "{}";
                return;
            }
            os << "{\n";
            bool first = true;
            for (const auto& [k, v] : j.items()) {
                if (!first) os << ",\n";
                first = false;
                os << pad;
                json_string(os, k);
                os << ": ";
                write_json(os, v, indent, depth + 1);
            }
            os << '\n' << end_pad << '}';
            return;
        }
        case nlohmann::json::value_t::array: {
            if (j.empty()) {
                os << "[]";
                return;
            }
            os << "[\n";
            for (std::size_t i = 0; i < j.size(); ++i) {
                if (i) os << ",\n";
                os << pad;
                write_json(os, j[i], indent, depth + 1);
            }
            os << '\n' << end_pad << ']';
            return;
        }
        case nlohmann::json::value_t::number_float: {
            const double v = j.get<double>();
            if (std::isfinite(v)) os << format_number(v);
            else os << "null";
            return;
        }
        default: os << j.dump(); return;
    }
}

}  // namespace detail

/// Pretty JSON with every float printed to 17 significant digits (non-finite
/// values become null).
inline void write_json(std::ostream& os, const nlohmann::json& j, int indent = 2) {
    detail::write_json(os, j, indent, 0);
    os << '\n';
}

}  // namespace cctsens
