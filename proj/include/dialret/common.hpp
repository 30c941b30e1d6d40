#pragma once

#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace dialret {

/// All recoverable failures surface as dialret::Error with a one-line message.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

inline void str_append(std::ostringstream&) {}

template <class T, class... Rest>
void str_append(std::ostringstream& os, const T& v, const Rest&... rest) {
    os << v;
    str_append(os, rest...);
}

}  // namespace detail

template <class... Parts>
std::string str(const Parts&... parts) {
    std::ostringstream os;
    detail::str_append(os, parts...);
    return os.str();
}

template <class... Parts>
[[noreturn]] void fail(const Parts&... parts) {
    throw Error(str(parts...));
}

#define DIALRET_REQUIRE(cond, ...)      \
    do {                                \
        if (!(cond)) {                  \
            ::dialret::fail(__VA_ARGS__); \
        }                               \
    } while (0)

/// Seeded generator used everywhere; never std::random_device in library code,
/// every run must be reproducible from its --seed.
using Rng = std::mt19937_64;

}  // namespace dialret
