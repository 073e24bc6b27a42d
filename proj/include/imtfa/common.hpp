#pragma once

#include <stdexcept>
#include <string>

namespace imtfa {

// All precondition violations surface as std::runtime_error with a
// human-readable message naming the offending value.
[[noreturn]] inline void fail(const std::string& msg) {
    throw std::runtime_error(msg);
}

inline void check(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

}  // namespace imtfa
