#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <string_view>

namespace snbviz {

/// 64-bit FNV-1a, incremental.
class Fnv1a {
public:
    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ULL;
        }
    }
    void text(std::string_view s) { bytes(s.data(), s.size()); }
    void u64(std::uint64_t v) { bytes(&v, sizeof v); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    std::uint64_t value() const { return h_; }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a(std::string_view s) {
    Fnv1a h;
    h.text(s);
    return h.value();
}

} // namespace snbviz
