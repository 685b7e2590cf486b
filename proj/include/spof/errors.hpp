#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace spof {

// Invalid configuration or inconsistent inputs. CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Emulated device arena would exceed its capacity. CLI exit code 3.
class CapacityError : public std::runtime_error {
public:
    CapacityError(const std::string& what, std::uint64_t peak_bytes, std::uint64_t capacity_bytes)
        : std::runtime_error(what), peak_bytes_(peak_bytes), capacity_bytes_(capacity_bytes) {}

    std::uint64_t peak_bytes() const noexcept { return peak_bytes_; }
    std::uint64_t capacity_bytes() const noexcept { return capacity_bytes_; }

private:
    std::uint64_t peak_bytes_;
    std::uint64_t capacity_bytes_;
};

// File could not be read, written, or parsed. CLI exit code 4.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace spof
