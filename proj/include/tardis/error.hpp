#pragma once

#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>

namespace tardis {

// Broad failure classes; the CLI maps errc::config to exit code 2,
// everything else to 1.
enum class errc {
    config,
    parse,
    io,
    backend,
    embedding,
    precondition,
    integrity,
};

inline const char* errc_name(errc c) {
    switch (c) {
        case errc::config:       return "config";
        case errc::parse:        return "parse";
        case errc::io:           return "io";
        case errc::backend:      return "backend";
        case errc::embedding:    return "embedding";
        case errc::precondition: return "precondition";
        case errc::integrity:    return "integrity";
    }
    return "unknown";
}

class error : public std::runtime_error {
public:
    error(errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    errc code() const { return code_; }

private:
    errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) {
    throw error(code, what);
}

// Backend failures carry retryability so the gateway can decide whether
// another attempt makes sense (HTTP 4xx does not, a timeout does).
class backend_error : public error {
public:
    backend_error(const std::string& what, bool retryable)
        : error(errc::backend, what), retryable_(retryable) {}

    bool retryable() const { return retryable_; }

private:
    bool retryable_;
};

// Non-fatal diagnostics (duplicate rows, skipped cache entries, ...) are
// pushed through a sink so callers can collect or silence them.
using warning_sink = std::function<void(const std::string&)>;

inline warning_sink stderr_warnings() {
    return [](const std::string& msg) { std::cerr << "warning: " << msg << "\n"; };
}

inline void warn(const warning_sink& sink, const std::string& msg) {
    if (sink) sink(msg);
}

} // namespace tardis
