#pragma once

// Structured errors. Every throwing site names the operation and the offending
// values so CLI users can act on the message; the kind maps to a process exit
// code (usage -> 1, data -> 2, numeric -> 3).

#include <stdexcept>
#include <string>

namespace rfsc {

enum class ErrorKind { usage, data, numeric };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string msg) : std::runtime_error(std::move(msg)), kind_(kind) {}
    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail_usage(const std::string& msg) { throw Error(ErrorKind::usage, msg); }
[[noreturn]] inline void fail_data(const std::string& msg) { throw Error(ErrorKind::data, msg); }
[[noreturn]] inline void fail_numeric(const std::string& msg) { throw Error(ErrorKind::numeric, msg); }

} // namespace rfsc
