#pragma once

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "sqlrl/cell.hpp"
#include "sqlrl/fixtures.hpp"
#include "sqlrl/sqlexec.hpp"

namespace testutil {

// Scratch directory, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<uint64_t> counter{0};
        const auto n = counter.fetch_add(1);
        path_ = std::filesystem::temp_directory_path() /
                ("sqlrl_test_" + std::to_string(::getpid()) + "_" + std::to_string(n));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string str() const { return path_.string(); }
    std::string sub(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

// ---- independent equivalence oracle ----
//
// Pairwise cell matching plus a backtracking perfect matching over rows.
// Shares no code with the fingerprint implementation.

inline bool oracle_number_match(double a, double b, double tol) {
    auto snap = [&](double v, long long* out) {
        const double r = std::nearbyint(v);
        if (std::fabs(v - r) <= std::max(1e-9, tol * std::fabs(v))) {
            *out = static_cast<long long>(r);
            return true;
        }
        return false;
    };
    long long ia = 0, ib = 0;
    const bool sa = snap(a, &ia), sb = snap(b, &ib);
    if (sa != sb) return false;
    if (sa) return ia == ib;
    return a == b;  // generator never emits near-equal distinct non-integers
}

inline bool oracle_cells_match(const sqlrl::Cell& a, const sqlrl::Cell& b, double tol) {
    using sqlrl::BlobDigest;
    const bool a_null = std::holds_alternative<std::monostate>(a);
    const bool b_null = std::holds_alternative<std::monostate>(b);
    if (a_null || b_null) return a_null && b_null;

    auto as_number = [](const sqlrl::Cell& c, double* out) {
        if (const auto* i = std::get_if<int64_t>(&c)) {
            *out = static_cast<double>(*i);
            return true;
        }
        if (const auto* d = std::get_if<double>(&c)) {
            *out = *d;
            return true;
        }
        return false;
    };
    double na = 0, nb = 0;
    if (as_number(a, &na) && as_number(b, &nb)) return oracle_number_match(na, nb, tol);

    if (const auto* sa = std::get_if<std::string>(&a)) {
        const auto* sb = std::get_if<std::string>(&b);
        return sb != nullptr && *sa == *sb;
    }
    if (const auto* ba = std::get_if<BlobDigest>(&a)) {
        const auto* bb = std::get_if<BlobDigest>(&b);
        return bb != nullptr && *ba == *bb;
    }
    return false;
}

inline bool oracle_rows_match(const std::vector<sqlrl::Cell>& a,
                              const std::vector<sqlrl::Cell>& b, double tol) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (!oracle_cells_match(a[i], b[i], tol)) return false;
    return true;
}

inline bool oracle_equivalent(const sqlrl::ExecOutcome& a, const sqlrl::ExecOutcome& b,
                              const sqlrl::EquivalencePolicy& policy) {
    if (!a.ok() || !b.ok()) return false;
    if (a.table.column_names.size() != b.table.column_names.size()) return false;
    const auto& ra = a.table.rows;
    const auto& rb = b.table.rows;
    if (ra.size() != rb.size()) return false;

    if (policy.order_sensitive) {
        for (size_t i = 0; i < ra.size(); ++i)
            if (!oracle_rows_match(ra[i], rb[i], policy.float_tolerance)) return false;
        return true;
    }
    std::vector<bool> used(rb.size(), false);
    std::function<bool(size_t)> assign = [&](size_t i) {
        if (i == ra.size()) return true;
        for (size_t j = 0; j < rb.size(); ++j) {
            if (used[j]) continue;
            if (oracle_rows_match(ra[i], rb[j], policy.float_tolerance)) {
                used[j] = true;
                if (assign(i + 1)) return true;
                used[j] = false;
            }
        }
        return false;
    };
    return assign(0);
}

// Random result tables, at most 6 rows x 4 columns. The value pool keeps
// float comparisons away from the canonicalization boundary: reals are either
// within 1e-10 of an integer (must snap) or on a quarter grid (must not).
class TableGen {
public:
    explicit TableGen(uint64_t seed) : rng_(seed) {}

    sqlrl::Cell random_cell() {
        switch (rng_() % 7) {
            case 0: return sqlrl::Cell{};
            case 1: return sqlrl::Cell{static_cast<int64_t>(rng_() % 5)};
            case 2: return sqlrl::Cell{-static_cast<int64_t>(rng_() % 3)};
            case 3: return sqlrl::Cell{0.25 * static_cast<double>(rng_() % 16)};
            case 4: return sqlrl::Cell{static_cast<double>(rng_() % 4) + 1e-10};
            case 5: return sqlrl::Cell{std::string(1, static_cast<char>('a' + rng_() % 4))};
            default:
                return sqlrl::Cell{sqlrl::BlobDigest{std::string(4, static_cast<char>('0' + rng_() % 3)),
                                                     rng_() % 3}};
        }
    }

    sqlrl::ResultTable random_table() {
        sqlrl::ResultTable t;
        const size_t cols = 1 + rng_() % 4;
        const size_t rows = rng_() % 7;
        for (size_t c = 0; c < cols; ++c) t.column_names.push_back("c" + std::to_string(c));
        for (size_t r = 0; r < rows; ++r) {
            std::vector<sqlrl::Cell> row;
            for (size_t c = 0; c < cols; ++c) row.push_back(random_cell());
            t.rows.push_back(std::move(row));
        }
        return t;
    }

    sqlrl::ResultTable shuffled(sqlrl::ResultTable t) {
        std::shuffle(t.rows.begin(), t.rows.end(), rng_);
        return t;
    }

    // Half the pairs share content modulo row order, half are independent.
    std::pair<sqlrl::ResultTable, sqlrl::ResultTable> random_pair() {
        sqlrl::ResultTable a = random_table();
        if (rng_() % 2 == 0) return {a, shuffled(a)};
        return {a, random_table()};
    }

    std::mt19937_64& rng() { return rng_; }

private:
    std::mt19937_64 rng_;
};

// ---- brute-force diversity oracle ----

inline double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0;
    for (size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    return 1.0 - dot;
}

inline double min_pairwise_distance(const std::vector<std::vector<double>>& vecs,
                                    const std::vector<size_t>& subset) {
    double best = 2.0;
    for (size_t i = 0; i < subset.size(); ++i)
        for (size_t j = i + 1; j < subset.size(); ++j)
            best = std::min(best, cosine_distance(vecs[subset[i]], vecs[subset[j]]));
    return best;
}

// The best achievable min pairwise distance over all C(n, m) subsets.
inline double best_min_distance(const std::vector<std::vector<double>>& vecs, size_t m) {
    std::vector<size_t> idx(vecs.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    double best = -1.0;
    std::vector<size_t> pick;
    std::function<void(size_t)> choose = [&](size_t start) {
        if (pick.size() == m) {
            best = std::max(best, min_pairwise_distance(vecs, pick));
            return;
        }
        for (size_t i = start; i < idx.size(); ++i) {
            pick.push_back(idx[i]);
            choose(i + 1);
            pick.pop_back();
        }
    };
    choose(0);
    return best;
}

}  // namespace testutil
