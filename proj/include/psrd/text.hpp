#pragma once

#include <cstdio>
#include <cstdlib>
#include <istream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "psrd/error.hpp"

namespace psrd {

/// Shortest decimal string that parses back to exactly the same double.
inline std::string real_to_string(double v) {
    char buf[40];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    parts.push_back(cur);
    return parts;
}

/// Flat `key = value` dialect: one pair per line, `#` starts a comment,
/// blank lines ignored. Returns pairs in file order.
inline std::vector<std::pair<std::string, std::string>> parse_kv(std::istream& is,
                                                                 const std::string& source = "") {
    std::vector<std::pair<std::string, std::string>> pairs;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError((source.empty() ? std::string("") : source + ":") +
                             "line " + std::to_string(line_no) + ": expected 'key = value', got: " + line);
        }
        pairs.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return pairs;
}

}  // namespace psrd
