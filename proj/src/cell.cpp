#include "sqlrl/cell.hpp"

#include <cmath>
#include <cstdio>

namespace sqlrl {

namespace {

constexpr double kAbsoluteFloor = 1e-9;

bool snaps_to_integer(double v, double tolerance, int64_t* out) {
    if (!std::isfinite(v)) return false;
    double rounded = std::nearbyint(v);
    if (rounded < -9.2e18 || rounded > 9.2e18) return false;
    double bound = std::max(kAbsoluteFloor, tolerance * std::fabs(v));
    if (std::fabs(v - rounded) <= bound) {
        *out = static_cast<int64_t>(rounded);
        return true;
    }
    return false;
}

std::string format_real(double v, const char* fmt) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), fmt, v);
    return buf;
}

std::string prefixed(char tag, const std::string& payload) {
    return tag + (":" + std::to_string(payload.size()) + ":") + payload + ";";
}

}  // namespace

bool cell_is_null(const Cell& c) {
    return std::holds_alternative<std::monostate>(c);
}

std::string canonical_cell(const Cell& c, double float_tolerance) {
    struct Visitor {
        double tol;
        std::string operator()(std::monostate) const { return "N;"; }
        std::string operator()(int64_t v) const { return prefixed('I', std::to_string(v)); }
        std::string operator()(double v) const {
            int64_t snapped = 0;
            if (snaps_to_integer(v, tol, &snapped)) {
                return prefixed('I', std::to_string(snapped));
            }
            return prefixed('R', format_real(v, "%.12g"));
        }
        std::string operator()(const std::string& v) const { return prefixed('T', v); }
        std::string operator()(const BlobDigest& v) const {
            return prefixed('B', v.hex + ":" + std::to_string(v.size));
        }
    };
    return std::visit(Visitor{float_tolerance}, c);
}

std::string display_cell(const Cell& c) {
    struct Visitor {
        std::string operator()(std::monostate) const { return "NULL"; }
        std::string operator()(int64_t v) const { return std::to_string(v); }
        std::string operator()(double v) const { return format_real(v, "%.10g"); }
        std::string operator()(const std::string& v) const { return v; }
        std::string operator()(const BlobDigest& v) const {
            return "<blob " + std::to_string(v.size) + "B " + v.hex.substr(0, 8) + ">";
        }
    };
    return std::visit(Visitor{}, c);
}

}  // namespace sqlrl
