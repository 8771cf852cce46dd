#pragma once

#include <cstdint>
#include <string>
#include <variant>

namespace sqlrl {

// Large binaries are carried as a content digest, never as raw bytes.
struct BlobDigest {
    std::string hex;
    uint64_t size = 0;
    bool operator==(const BlobDigest&) const = default;
};

// One value of a result grid. NULL is a sentinel distinct from 0 and "".
using Cell = std::variant<std::monostate, int64_t, double, std::string, BlobDigest>;

bool cell_is_null(const Cell& c);

// Canonical byte rendering used by result fingerprints. A real within
// max(1e-9, float_tolerance * |v|) of an integer renders as that integer,
// so 2.0000000001 and 2 fingerprint identically. Cells are length-prefixed
// so the rendering is injective.
std::string canonical_cell(const Cell& c, double float_tolerance);

// Human-oriented rendering for observations and schema exemplars.
std::string display_cell(const Cell& c);

}  // namespace sqlrl
