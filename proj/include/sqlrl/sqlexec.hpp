#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "sqlrl/cell.hpp"

struct sqlite3;

namespace sqlrl {

struct ResultTable {
    std::vector<std::string> column_names;  // duplicates allowed, SQL permits them
    std::vector<std::vector<Cell>> rows;    // every row has column_names.size() cells
};

enum class ExecStatus { ok, sql_error, timeout, write_rejected };

const char* to_string(ExecStatus s);

struct ExecOutcome {
    ExecStatus status = ExecStatus::sql_error;
    ResultTable table;    // populated when status == ok
    std::string message;  // engine message, verbatim, when status == sql_error

    bool ok() const { return status == ExecStatus::ok; }

    static ExecOutcome make_ok(ResultTable t);
    static ExecOutcome make_error(std::string msg);
    static ExecOutcome make_timeout();
    static ExecOutcome make_write_rejected();
};

enum class RowComparison { bag };

struct EquivalencePolicy {
    bool order_sensitive = false;   // true iff the outer query has ORDER BY
    double float_tolerance = 1e-6;  // relative, with a 1e-9 absolute floor
    RowComparison compare_as = RowComparison::bag;
};

// Derives the comparison policy from the gold query: order matters only
// when the gold itself orders its output.
EquivalencePolicy policy_for_gold(const std::string& gold_sql);

struct Fingerprint {
    std::string bytes;
    bool operator==(const Fingerprint&) const = default;
};

struct EquivalenceVerdict {
    bool equivalent = false;
    std::string reason;  // empty iff equivalent
};

class SandboxError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Read-only SQLite session over one database file. A handle belongs to a
// single worker; open as many handles as there are workers.
class Sandbox {
public:
    static constexpr int kEvalTimeoutMs = 30000;
    static constexpr int kRolloutTimeoutMs = 5000;
    static constexpr int kTimeoutGraceMs = 250;

    explicit Sandbox(const std::string& db_file);  // throws SandboxError
    ~Sandbox();
    Sandbox(Sandbox&& other) noexcept;
    Sandbox& operator=(Sandbox&& other) noexcept;
    Sandbox(const Sandbox&) = delete;
    Sandbox& operator=(const Sandbox&) = delete;

    // Runs every statement in `sql`, returning the result grid of the last
    // one that produced columns. Total: failures come back as outcomes.
    ExecOutcome execute(const std::string& sql, int timeout_ms = kEvalTimeoutMs);

    const std::string& path() const { return path_; }

private:
    friend int sandbox_authorizer(void*, int, const char*, const char*, const char*,
                                  const char*);
    friend int sandbox_progress(void*);

    sqlite3* db_ = nullptr;
    std::string path_;
    bool write_attempted_ = false;
    long long deadline_ms_ = 0;  // steady-clock ms; 0 = no deadline
    bool interrupted_ = false;
};

// Resolves `<root>/<db_id>/<db_id>.<ext>` for the extensions BIRD/Spider ship.
std::string db_file_for(const std::string& db_root, const std::string& db_id);

// Canonical byte string for a result grid. Invariant under row permutation
// when the policy is order-insensitive.
Fingerprint normalize(const ResultTable& table, const EquivalencePolicy& policy);

// Bag-equality of executed results. Errors and timeouts never match anything,
// including each other.
EquivalenceVerdict equivalent(const ExecOutcome& a, const ExecOutcome& b,
                              const EquivalencePolicy& policy);

struct OutcomePair {
    ExecOutcome predicted;
    ExecOutcome gold;
    EquivalencePolicy policy;
};

// Fraction of pairs whose outcomes are equivalent. Throws std::invalid_argument
// on an empty list.
double execution_accuracy(const std::vector<OutcomePair>& pairs);

}  // namespace sqlrl
