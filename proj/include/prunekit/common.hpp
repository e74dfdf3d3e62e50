#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace prunekit {

// Error taxonomy: bad arguments, numerical breakdown, filesystem trouble.
struct invalid_input : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct numerical_failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string & msg) {
    if (!cond) {
        throw invalid_input(msg);
    }
}

} // namespace prunekit
