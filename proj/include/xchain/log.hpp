#pragma once

// Line-oriented logging: `ts level key=value ...` on stderr, one event per
// line, values quoted only when they contain spaces.

#include <chrono>
#include <ctime>
#include <initializer_list>
#include <iostream>
#include <string>
#include <utility>

namespace xchain::log {

inline std::string timestamp_utc() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[24];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline void emit(const char* level,
                 std::initializer_list<std::pair<const char*, std::string>> fields) {
    std::ostream& out = std::cerr;
    out << timestamp_utc() << ' ' << level;
    for (const auto& [key, value] : fields) {
        out << ' ' << key << '=';
        if (value.find(' ') != std::string::npos)
            out << '"' << value << '"';
        else
            out << value;
    }
    out << '\n';
}

inline void info(std::initializer_list<std::pair<const char*, std::string>> fields) {
    emit("INFO", fields);
}
inline void error(std::initializer_list<std::pair<const char*, std::string>> fields) {
    emit("ERROR", fields);
}

} // namespace xchain::log
