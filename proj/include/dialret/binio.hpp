#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <type_traits>

#include "dialret/common.hpp"

namespace dialret::binio {

// Little-endian on-disk layout, written as in-memory bytes (x86 target).

template <class T>
void write_pod(std::ostream& out, const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in, const char* what) {
    static_assert(std::is_trivially_copyable_v<T>);
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    DIALRET_REQUIRE(in.good(), "truncated file while reading ", what);
    return v;
}

inline void write_magic(std::ostream& out, const char magic[4]) {
    out.write(magic, 4);
}

inline void check_magic(std::istream& in, const char magic[4], const std::string& path) {
    char buf[4] = {0, 0, 0, 0};
    in.read(buf, 4);
    DIALRET_REQUIRE(in.good() && std::equal(buf, buf + 4, magic),
                    "bad magic in ", path, " (expected ", std::string(magic, 4), ")");
}

inline void write_string(std::ostream& out, const std::string& s) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, const char* what) {
    uint32_t len = read_pod<uint32_t>(in, what);
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    DIALRET_REQUIRE(in.good(), "truncated file while reading ", what);
    return s;
}

}  // namespace dialret::binio
