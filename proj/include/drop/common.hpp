#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace drop {

// Bad user-supplied configuration (CLI exit code 1).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values or internal numeric inconsistency (CLI exit code 2).
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check_config(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

inline void check_numeric(bool cond, const std::string& msg) {
    if (!cond) throw NumericalError(msg);
}

inline void check_io(bool cond, const std::string& msg) {
    if (!cond) throw IoError(msg);
}

inline bool is_finite(double v) { return std::isfinite(v); }

}  // namespace drop
