#pragma once

#include <stdexcept>
#include <string>

namespace isgib {

// Coarse error categories; the CLI maps these onto exit codes.
enum class errc {
    io,        // missing or unreadable file
    format,    // malformed on-disk content
    config,    // invalid run configuration
    dataset,   // dataset violates a declared invariant
    shape,     // tensor/matrix shape mismatch
    domain,    // math domain violation (log of non-positive, ...)
    numeric,   // non-finite value where a finite one is required
    usage,     // bad command-line usage
};

class error : public std::runtime_error {
public:
    error(errc code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    errc code() const noexcept { return code_; }

private:
    errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& msg) { throw error(code, msg); }

inline void require(bool cond, errc code, const std::string& msg) {
    if (!cond) fail(code, msg);
}

} // namespace isgib
