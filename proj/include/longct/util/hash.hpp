#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "longct/common.hpp"

namespace longct {

/// Streaming 64-bit FNV-1a. Used for config fingerprints and artifact
/// content hashes; collision resistance beyond accidental corruption is
/// not a goal here.
class Fnv64 {
public:
    Fnv64& update(const void* data, size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001b3ULL;
        }
        return *this;
    }

    Fnv64& update(const std::string& s) { return update(s.data(), s.size()); }

    uint64_t digest() const { return state_; }

    std::string hex() const {
        std::ostringstream os;
        os << std::hex << std::setw(16) << std::setfill('0') << state_;
        return os.str();
    }

private:
    uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string hash_bytes(const void* data, size_t n) {
    Fnv64 h;
    h.update(data, n);
    return h.hex();
}

inline std::string hash_string(const std::string& s) {
    return hash_bytes(s.data(), s.size());
}

inline std::string hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file for hashing: " + path);
    Fnv64 h;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        h.update(buf.data(), static_cast<size_t>(in.gcount()));
    }
    return h.hex();
}

}  // namespace longct
