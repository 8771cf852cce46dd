#include "sqlrl/sqlexec.hpp"

#include <sqlite3.h>

#include <algorithm>
#include <chrono>
#include <filesystem>

#include "sqlrl/digest.hpp"
#include "sqlrl/sql_scan.hpp"

namespace sqlrl {

namespace {

long long steady_now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// Fire the progress callback often enough that the 250 ms grace bound holds
// even for expensive per-instruction work.
constexpr int kProgressOpInterval = 200;

}  // namespace

const char* to_string(ExecStatus s) {
    switch (s) {
        case ExecStatus::ok: return "ok";
        case ExecStatus::sql_error: return "sql_error";
        case ExecStatus::timeout: return "timeout";
        case ExecStatus::write_rejected: return "write_rejected";
    }
    return "unknown";
}

ExecOutcome ExecOutcome::make_ok(ResultTable t) {
    ExecOutcome o;
    o.status = ExecStatus::ok;
    o.table = std::move(t);
    return o;
}

ExecOutcome ExecOutcome::make_error(std::string msg) {
    ExecOutcome o;
    o.status = ExecStatus::sql_error;
    o.message = msg.empty() ? "unknown SQL error" : std::move(msg);
    return o;
}

ExecOutcome ExecOutcome::make_timeout() {
    ExecOutcome o;
    o.status = ExecStatus::timeout;
    return o;
}

ExecOutcome ExecOutcome::make_write_rejected() {
    ExecOutcome o;
    o.status = ExecStatus::write_rejected;
    return o;
}

EquivalencePolicy policy_for_gold(const std::string& gold_sql) {
    EquivalencePolicy policy;
    policy.order_sensitive = has_top_level_order_by(gold_sql);
    return policy;
}

int sandbox_authorizer(void* ctx, int action, const char*, const char*, const char*,
                       const char*) {
    auto* sandbox = static_cast<Sandbox*>(ctx);
    switch (action) {
        case SQLITE_INSERT:
        case SQLITE_UPDATE:
        case SQLITE_DELETE:
        case SQLITE_CREATE_INDEX:
        case SQLITE_CREATE_TABLE:
        case SQLITE_CREATE_TEMP_INDEX:
        case SQLITE_CREATE_TEMP_TABLE:
        case SQLITE_CREATE_TEMP_TRIGGER:
        case SQLITE_CREATE_TEMP_VIEW:
        case SQLITE_CREATE_TRIGGER:
        case SQLITE_CREATE_VIEW:
        case SQLITE_CREATE_VTABLE:
        case SQLITE_DROP_INDEX:
        case SQLITE_DROP_TABLE:
        case SQLITE_DROP_TEMP_INDEX:
        case SQLITE_DROP_TEMP_TABLE:
        case SQLITE_DROP_TEMP_TRIGGER:
        case SQLITE_DROP_TEMP_VIEW:
        case SQLITE_DROP_TRIGGER:
        case SQLITE_DROP_VIEW:
        case SQLITE_DROP_VTABLE:
        case SQLITE_ALTER_TABLE:
        case SQLITE_REINDEX:
        case SQLITE_ANALYZE:
        case SQLITE_ATTACH:
        case SQLITE_DETACH:
            sandbox->write_attempted_ = true;
            return SQLITE_DENY;
        default:
            return SQLITE_OK;
    }
}

int sandbox_progress(void* ctx) {
    auto* sandbox = static_cast<Sandbox*>(ctx);
    if (sandbox->deadline_ms_ != 0 && steady_now_ms() >= sandbox->deadline_ms_) {
        sandbox->interrupted_ = true;
        return 1;
    }
    return 0;
}

Sandbox::Sandbox(const std::string& db_file) : path_(db_file) {
    if (!std::filesystem::exists(db_file)) {
        throw SandboxError("database file missing: " + db_file);
    }
    int rc = sqlite3_open_v2(db_file.c_str(), &db_, SQLITE_OPEN_READONLY, nullptr);
    if (rc != SQLITE_OK) {
        std::string msg = db_ ? sqlite3_errmsg(db_) : "open failed";
        if (db_) sqlite3_close(db_);
        db_ = nullptr;
        throw SandboxError("cannot open database " + db_file + ": " + msg);
    }
    sqlite3_set_authorizer(db_, sandbox_authorizer, this);
    sqlite3_progress_handler(db_, kProgressOpInterval, sandbox_progress, this);

    // A garbage file opens fine; the first page read exposes corruption.
    sqlite3_stmt* stmt = nullptr;
    rc = sqlite3_prepare_v2(db_, "SELECT count(*) FROM sqlite_master", -1, &stmt, nullptr);
    if (rc == SQLITE_OK) {
        rc = sqlite3_step(stmt);
        rc = rc == SQLITE_ROW ? SQLITE_OK : rc;
    }
    sqlite3_finalize(stmt);
    if (rc != SQLITE_OK) {
        std::string msg = sqlite3_errmsg(db_);
        sqlite3_close(db_);
        db_ = nullptr;
        throw SandboxError("corrupt database " + db_file + ": " + msg);
    }
}

Sandbox::~Sandbox() {
    if (db_) sqlite3_close(db_);
}

Sandbox::Sandbox(Sandbox&& other) noexcept
    : db_(other.db_), path_(std::move(other.path_)) {
    other.db_ = nullptr;
    if (db_) {
        sqlite3_set_authorizer(db_, sandbox_authorizer, this);
        sqlite3_progress_handler(db_, kProgressOpInterval, sandbox_progress, this);
    }
}

Sandbox& Sandbox::operator=(Sandbox&& other) noexcept {
    if (this != &other) {
        if (db_) sqlite3_close(db_);
        db_ = other.db_;
        path_ = std::move(other.path_);
        other.db_ = nullptr;
        if (db_) {
            sqlite3_set_authorizer(db_, sandbox_authorizer, this);
            sqlite3_progress_handler(db_, kProgressOpInterval, sandbox_progress, this);
        }
    }
    return *this;
}

ExecOutcome Sandbox::execute(const std::string& sql, int timeout_ms) {
    if (!db_) return ExecOutcome::make_error("sandbox is closed");
    if (timeout_ms <= 0) timeout_ms = kEvalTimeoutMs;

    write_attempted_ = false;
    interrupted_ = false;
    deadline_ms_ = steady_now_ms() + timeout_ms;

    const char* cursor = sql.c_str();
    const char* end = cursor + sql.size();
    ResultTable last_with_columns;
    bool saw_columns = false;
    bool saw_statement = false;

    while (cursor < end) {
        sqlite3_stmt* stmt = nullptr;
        const char* tail = nullptr;
        int rc = sqlite3_prepare_v2(db_, cursor, static_cast<int>(end - cursor), &stmt, &tail);
        if (rc != SQLITE_OK) {
            std::string msg = sqlite3_errmsg(db_);
            deadline_ms_ = 0;
            if (write_attempted_) return ExecOutcome::make_write_rejected();
            if (interrupted_) return ExecOutcome::make_timeout();
            return ExecOutcome::make_error(msg);
        }
        if (!stmt) {  // trailing whitespace/comments
            cursor = tail;
            break;
        }
        saw_statement = true;
        cursor = tail;

        const int ncols = sqlite3_column_count(stmt);
        ResultTable table;
        for (int i = 0; i < ncols; ++i) {
            const char* name = sqlite3_column_name(stmt, i);
            table.column_names.push_back(name ? name : "");
        }

        while ((rc = sqlite3_step(stmt)) == SQLITE_ROW) {
            std::vector<Cell> row;
            row.reserve(static_cast<size_t>(ncols));
            for (int i = 0; i < ncols; ++i) {
                switch (sqlite3_column_type(stmt, i)) {
                    case SQLITE_NULL:
                        row.emplace_back(std::monostate{});
                        break;
                    case SQLITE_INTEGER:
                        row.emplace_back(static_cast<int64_t>(sqlite3_column_int64(stmt, i)));
                        break;
                    case SQLITE_FLOAT:
                        row.emplace_back(sqlite3_column_double(stmt, i));
                        break;
                    case SQLITE_TEXT: {
                        const unsigned char* text = sqlite3_column_text(stmt, i);
                        int len = sqlite3_column_bytes(stmt, i);
                        row.emplace_back(std::string(reinterpret_cast<const char*>(text),
                                                     static_cast<size_t>(len)));
                        break;
                    }
                    case SQLITE_BLOB: {
                        const void* blob = sqlite3_column_blob(stmt, i);
                        int len = sqlite3_column_bytes(stmt, i);
                        std::string_view bytes(static_cast<const char*>(blob),
                                               static_cast<size_t>(len));
                        row.emplace_back(BlobDigest{sha256_hex(bytes),
                                                    static_cast<uint64_t>(len)});
                        break;
                    }
                }
            }
            table.rows.push_back(std::move(row));
        }
        sqlite3_finalize(stmt);

        if (rc != SQLITE_DONE) {
            std::string msg = sqlite3_errmsg(db_);
            deadline_ms_ = 0;
            if (interrupted_ || rc == SQLITE_INTERRUPT) return ExecOutcome::make_timeout();
            if (write_attempted_ || rc == SQLITE_READONLY) {
                return ExecOutcome::make_write_rejected();
            }
            return ExecOutcome::make_error(msg);
        }
        if (ncols > 0) {
            last_with_columns = std::move(table);
            saw_columns = true;
        }
    }

    deadline_ms_ = 0;
    if (!saw_statement) return ExecOutcome::make_error("empty statement");
    if (!saw_columns) return ExecOutcome::make_ok(ResultTable{});
    return ExecOutcome::make_ok(std::move(last_with_columns));
}

std::string db_file_for(const std::string& db_root, const std::string& db_id) {
    namespace fs = std::filesystem;
    static const char* kExtensions[] = {".sqlite", ".db", ".sqlite3"};
    for (const char* ext : kExtensions) {
        fs::path candidate = fs::path(db_root) / db_id / (db_id + ext);
        if (fs::exists(candidate)) return candidate.string();
    }
    throw SandboxError("no database file for '" + db_id + "' under " + db_root);
}

Fingerprint normalize(const ResultTable& table, const EquivalencePolicy& policy) {
    std::vector<std::string> rows;
    rows.reserve(table.rows.size());
    for (const auto& row : table.rows) {
        std::string encoded;
        for (const Cell& cell : row) {
            encoded += canonical_cell(cell, policy.float_tolerance);
        }
        rows.push_back(std::move(encoded));
    }
    if (!policy.order_sensitive) {
        std::sort(rows.begin(), rows.end());
    }
    std::string bytes = "C" + std::to_string(table.column_names.size()) + ";";
    for (const auto& r : rows) {
        bytes += r;
        bytes += '\n';
    }
    return Fingerprint{std::move(bytes)};
}

EquivalenceVerdict equivalent(const ExecOutcome& a, const ExecOutcome& b,
                              const EquivalencePolicy& policy) {
    if (!a.ok() && !b.ok()) return {false, "both errored"};
    if (!a.ok()) return {false, std::string("left not ok: ") + to_string(a.status)};
    if (!b.ok()) return {false, std::string("right not ok: ") + to_string(b.status)};
    if (a.table.column_names.size() != b.table.column_names.size()) {
        return {false, "column count differs"};
    }
    if (normalize(a.table, policy) == normalize(b.table, policy)) {
        return {true, ""};
    }
    return {false, policy.order_sensitive ? "row sequence differs" : "row multiset differs"};
}

double execution_accuracy(const std::vector<OutcomePair>& pairs) {
    if (pairs.empty()) {
        throw std::invalid_argument("execution_accuracy: empty pair list");
    }
    size_t hits = 0;
    for (const auto& p : pairs) {
        if (equivalent(p.predicted, p.gold, p.policy).equivalent) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

}  // namespace sqlrl
