#pragma once

// Internal read-write SQLite session. Only the database augmenter and the
// fixture builders write; everything else goes through the read-only Sandbox.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <sqlite3.h>

namespace sqlrl::detail {

struct RawBlob {
    std::string bytes;
    bool operator==(const RawBlob&) const = default;
};

// Unlike sqlrl::Cell this keeps blob bytes, so rows can be copied verbatim.
using RawCell = std::variant<std::monostate, int64_t, double, std::string, RawBlob>;

class WritableDb {
public:
    explicit WritableDb(const std::string& path, bool readonly = false) {
        const int flags = readonly ? SQLITE_OPEN_READONLY
                                   : (SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE);
        if (sqlite3_open_v2(path.c_str(), &db_, flags, nullptr) != SQLITE_OK) {
            std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
            if (db_) sqlite3_close(db_);
            throw std::runtime_error("cannot open " + path + ": " + msg);
        }
    }
    ~WritableDb() {
        if (db_) sqlite3_close(db_);
    }
    WritableDb(const WritableDb&) = delete;
    WritableDb& operator=(const WritableDb&) = delete;

    sqlite3* raw() { return db_; }

    void exec(const std::string& sql) {
        char* err = nullptr;
        if (sqlite3_exec(db_, sql.c_str(), nullptr, nullptr, &err) != SQLITE_OK) {
            std::string msg = err ? err : sqlite3_errmsg(db_);
            sqlite3_free(err);
            throw std::runtime_error("sqlite exec failed: " + msg + " [" + sql + "]");
        }
    }

    std::vector<std::vector<RawCell>> query(const std::string& sql) {
        sqlite3_stmt* stmt = nullptr;
        if (sqlite3_prepare_v2(db_, sql.c_str(), -1, &stmt, nullptr) != SQLITE_OK)
            throw std::runtime_error(std::string("prepare failed: ") + sqlite3_errmsg(db_) +
                                     " [" + sql + "]");
        std::vector<std::vector<RawCell>> rows;
        int rc;
        while ((rc = sqlite3_step(stmt)) == SQLITE_ROW) {
            const int n = sqlite3_column_count(stmt);
            std::vector<RawCell> row;
            row.reserve(n);
            for (int i = 0; i < n; ++i) {
                switch (sqlite3_column_type(stmt, i)) {
                    case SQLITE_NULL: row.emplace_back(std::monostate{}); break;
                    case SQLITE_INTEGER: row.emplace_back(sqlite3_column_int64(stmt, i)); break;
                    case SQLITE_FLOAT: row.emplace_back(sqlite3_column_double(stmt, i)); break;
                    case SQLITE_TEXT:
                        row.emplace_back(std::string(
                            reinterpret_cast<const char*>(sqlite3_column_text(stmt, i)),
                            static_cast<size_t>(sqlite3_column_bytes(stmt, i))));
                        break;
                    case SQLITE_BLOB:
                    default:
                        row.emplace_back(RawBlob{std::string(
                            static_cast<const char*>(sqlite3_column_blob(stmt, i)),
                            static_cast<size_t>(sqlite3_column_bytes(stmt, i)))});
                        break;
                }
            }
            rows.push_back(std::move(row));
        }
        const bool ok = rc == SQLITE_DONE;
        std::string msg = ok ? "" : sqlite3_errmsg(db_);
        sqlite3_finalize(stmt);
        if (!ok) throw std::runtime_error("query failed: " + msg + " [" + sql + "]");
        return rows;
    }

    void run(const std::string& sql, const std::vector<RawCell>& binds) {
        sqlite3_stmt* stmt = nullptr;
        if (sqlite3_prepare_v2(db_, sql.c_str(), -1, &stmt, nullptr) != SQLITE_OK)
            throw std::runtime_error(std::string("prepare failed: ") + sqlite3_errmsg(db_) +
                                     " [" + sql + "]");
        for (size_t i = 0; i < binds.size(); ++i) {
            const int idx = static_cast<int>(i) + 1;
            const RawCell& c = binds[i];
            int rc = SQLITE_OK;
            if (std::holds_alternative<std::monostate>(c)) {
                rc = sqlite3_bind_null(stmt, idx);
            } else if (const auto* v = std::get_if<int64_t>(&c)) {
                rc = sqlite3_bind_int64(stmt, idx, *v);
            } else if (const auto* d = std::get_if<double>(&c)) {
                rc = sqlite3_bind_double(stmt, idx, *d);
            } else if (const auto* s = std::get_if<std::string>(&c)) {
                rc = sqlite3_bind_text(stmt, idx, s->data(), static_cast<int>(s->size()),
                                       SQLITE_TRANSIENT);
            } else {
                const auto& b = std::get<RawBlob>(c);
                rc = sqlite3_bind_blob(stmt, idx, b.bytes.data(),
                                       static_cast<int>(b.bytes.size()), SQLITE_TRANSIENT);
            }
            if (rc != SQLITE_OK) {
                sqlite3_finalize(stmt);
                throw std::runtime_error("bind failed: " + std::string(sqlite3_errmsg(db_)));
            }
        }
        const int rc = sqlite3_step(stmt);
        std::string msg = rc == SQLITE_DONE ? "" : sqlite3_errmsg(db_);
        sqlite3_finalize(stmt);
        if (rc != SQLITE_DONE)
            throw std::runtime_error("step failed: " + msg + " [" + sql + "]");
    }

private:
    sqlite3* db_ = nullptr;
};

}  // namespace sqlrl::detail
