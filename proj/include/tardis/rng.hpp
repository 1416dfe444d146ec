#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "tardis/hash.hpp"

namespace tardis {

/// Deterministic random substream keyed by (root seed, scope label).
///
/// Every random draw in the pipeline comes from a stream scoped like
/// "ceg/<class>/round=7", so independent classes and rounds never share
/// state and execution order cannot change outputs. std::mt19937_64 is
/// bit-specified by the standard; the bounded draw below avoids
/// std::uniform_int_distribution, which is not.
class RngStream {
public:
    RngStream(uint64_t root_seed, std::string_view scope)
        : gen_(derive_seed(root_seed, scope)) {}

    uint64_t next_u64() { return gen_(); }

    // Unbiased draw in [0, n) via rejection sampling.
    uint64_t uniform_below(uint64_t n) {
        if (n == 0) return 0;
        const uint64_t limit = (UINT64_MAX / n) * n;
        for (;;) {
            uint64_t r = gen_();
            if (r < limit) return r % n;
        }
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    static uint64_t derive_seed(uint64_t root_seed, std::string_view scope) {
        unsigned char le[8];
        for (int i = 0; i < 8; ++i) le[i] = static_cast<unsigned char>(root_seed >> (8 * i));
        sha256 h;
        h.update(le, 8);
        h.update(scope);
        auto d = h.digest();
        uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | d[i];
        return v;
    }

private:
    std::mt19937_64 gen_;
};

} // namespace tardis
