#pragma once

#include <stdexcept>
#include <string>

namespace longct {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr int kTransformFormatVersion = 1;

/// Error type thrown by every operation in this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define LONGCT_REQUIRE(cond, msg)                          \
    do {                                                   \
        if (!(cond)) throw ::longct::Error(msg);           \
    } while (0)

}  // namespace longct
