#include "sqlrl/data_factory.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "sqlrl/digest.hpp"
#include "sqlrl/schema_context.hpp"
#include "sqlite_util.hpp"

namespace sqlrl {

namespace {

using detail::RawBlob;
using detail::RawCell;
using detail::WritableDb;
using ordered_json = nlohmann::ordered_json;

std::string quote_ident(const std::string& name) {
    std::string out = "\"";
    for (char c : name) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string fold(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// ---- augmentation ----

struct ColMeta {
    std::string name;
    std::string decl_type;
    bool notnull = false;
    int pk = 0;  // 1-based position in the primary key, 0 otherwise
};

struct FkMeta {
    std::string from_col;
    std::string to_table;
    std::string to_col;
};

struct TableMeta {
    std::string name;
    std::vector<ColMeta> cols;
    std::vector<FkMeta> fks;       // outgoing references, self-references kept apart
    std::vector<FkMeta> self_fks;
    std::set<std::string> unique_cols;    // single-column unique indexes
    int pk_col = -1;                      // single-column pk, -1 otherwise
    std::vector<std::vector<RawCell>> rows;
};

int col_index(const TableMeta& t, const std::string& name) {
    for (size_t i = 0; i < t.cols.size(); ++i)
        if (t.cols[i].name == name) return static_cast<int>(i);
    return -1;
}

std::string raw_canonical(const RawCell& c) {
    char buf[48];
    if (std::holds_alternative<std::monostate>(c)) return "N";
    if (const auto* i = std::get_if<int64_t>(&c)) {
        std::snprintf(buf, sizeof buf, "I%lld", static_cast<long long>(*i));
        return buf;
    }
    if (const auto* d = std::get_if<double>(&c)) {
        std::snprintf(buf, sizeof buf, "R%.17g", *d);
        return buf;
    }
    if (const auto* s = std::get_if<std::string>(&c)) return "T" + *s;
    return "B" + std::get<RawBlob>(c).bytes;
}

bool raw_less(const RawCell& a, const RawCell& b) { return raw_canonical(a) < raw_canonical(b); }

// Values a column holds, sorted canonically; the "multiset must differ" check.
std::vector<std::string> column_multiset(const std::vector<std::vector<RawCell>>& rows, int col) {
    std::vector<std::string> vals;
    for (const auto& r : rows) vals.push_back(raw_canonical(r[col]));
    std::sort(vals.begin(), vals.end());
    return vals;
}

}  // namespace

const char* to_string(SampleStatus s) {
    switch (s) {
        case SampleStatus::candidate: return "candidate";
        case SampleStatus::verified: return "verified";
        case SampleStatus::regenerated: return "regenerated";
        case SampleStatus::rejected: return "rejected";
    }
    return "candidate";
}

std::string augment_database(const std::string& source_db, uint64_t seed,
                             const std::string& out_path) {
    if (!std::filesystem::exists(source_db))
        throw AugmentError("source database missing: " + source_db);

    WritableDb src(source_db, /*readonly=*/true);

    // Schema objects in creation order; tables first, the rest afterwards so
    // no trigger fires while rows are copied.
    auto master = src.query(
        "SELECT type, name, sql FROM sqlite_master "
        "WHERE sql IS NOT NULL AND name NOT LIKE 'sqlite\\_%' ESCAPE '\\' ORDER BY rowid");
    std::vector<std::string> table_ddl, other_ddl;
    std::vector<std::string> table_names;
    for (const auto& row : master) {
        const std::string type = std::get<std::string>(row[0]);
        const std::string sql = std::get<std::string>(row[2]);
        if (type == "table") {
            table_ddl.push_back(sql);
            table_names.push_back(std::get<std::string>(row[1]));
        } else {
            other_ddl.push_back(sql);
        }
    }

    std::map<std::string, TableMeta> metas;
    for (const auto& t : table_names) {
        TableMeta meta;
        meta.name = t;
        for (const auto& row : src.query("PRAGMA table_info(" + quote_ident(t) + ")")) {
            ColMeta c;
            c.name = std::get<std::string>(row[1]);
            if (const auto* s = std::get_if<std::string>(&row[2])) c.decl_type = *s;
            c.notnull = std::get<int64_t>(row[3]) != 0;
            c.pk = static_cast<int>(std::get<int64_t>(row[5]));
            meta.cols.push_back(c);
        }
        int pk_count = 0;
        for (size_t i = 0; i < meta.cols.size(); ++i) {
            if (meta.cols[i].pk > 0) {
                ++pk_count;
                meta.pk_col = static_cast<int>(i);
            }
        }
        if (pk_count != 1) meta.pk_col = -1;

        for (const auto& row : src.query("PRAGMA foreign_key_list(" + quote_ident(t) + ")")) {
            FkMeta fk;
            fk.to_table = std::get<std::string>(row[2]);
            fk.from_col = std::get<std::string>(row[3]);
            if (const auto* s = std::get_if<std::string>(&row[4])) fk.to_col = *s;
            if (fk.to_table == t) meta.self_fks.push_back(fk);
            else meta.fks.push_back(fk);
        }
        for (const auto& row : src.query("PRAGMA index_list(" + quote_ident(t) + ")")) {
            if (std::get<int64_t>(row[2]) != 1) continue;  // not unique
            const std::string index = std::get<std::string>(row[1]);
            auto info = src.query("PRAGMA index_info(" + quote_ident(index) + ")");
            if (info.size() == 1)
                meta.unique_cols.insert(std::get<std::string>(info[0][2]));
        }
        meta.rows = src.query("SELECT * FROM " + quote_ident(t) + " ORDER BY rowid");
        metas[t] = std::move(meta);
    }

    // Resolve implicit FK targets to the parent's primary key.
    for (auto& [name, meta] : metas) {
        auto resolve = [&](FkMeta& fk) {
            if (!fk.to_col.empty()) return;
            const TableMeta& parent = metas.at(fk.to_table);
            if (parent.pk_col < 0)
                throw AugmentError("foreign key " + name + "." + fk.from_col +
                                   " has no resolvable target column in " + fk.to_table);
            fk.to_col = parent.cols[parent.pk_col].name;
        };
        for (auto& fk : meta.fks) resolve(fk);
        for (auto& fk : meta.self_fks) resolve(fk);
    }

    // Kahn over the FK DAG, self-references dropped. Parents come first.
    std::map<std::string, std::set<std::string>> parents_of, children_of;
    for (const auto& [name, meta] : metas) {
        for (const auto& fk : meta.fks) {
            if (!metas.count(fk.to_table))
                throw AugmentError("foreign key target table missing: " + fk.to_table);
            parents_of[name].insert(fk.to_table);
            children_of[fk.to_table].insert(name);
        }
    }
    std::vector<std::string> topo;
    std::set<std::string> ready;
    std::map<std::string, size_t> indegree;
    for (const auto& t : table_names) {
        indegree[t] = parents_of[t].size();
        if (indegree[t] == 0) ready.insert(t);
    }
    while (!ready.empty()) {
        const std::string t = *ready.begin();
        ready.erase(ready.begin());
        topo.push_back(t);
        for (const auto& child : children_of[t]) {
            if (--indegree[child] == 0) ready.insert(child);
        }
    }
    if (topo.size() != table_names.size())
        throw AugmentError("cyclic foreign-key graph (after dropping self-references)");

    std::mt19937_64 rng(seed);
    // Per referenced (table, column): old value -> surviving value, plus the
    // surviving pool for dangling sources.
    std::map<std::pair<std::string, std::string>, std::map<std::string, RawCell>> remap;
    std::map<std::pair<std::string, std::string>, std::vector<RawCell>> survivors;

    std::map<std::string, std::vector<std::vector<RawCell>>> new_rows_of;

    for (const auto& tname : topo) {
        TableMeta& meta = metas.at(tname);
        const auto& orig = meta.rows;
        const size_t n = orig.size();

        // Columns children point at; their kept values must stay verbatim.
        std::set<std::string> referenced;
        for (const auto& [cname, cmeta] : metas) {
            for (const auto& fk : cmeta.fks)
                if (fk.to_table == tname) referenced.insert(fk.to_col);
            for (const auto& fk : cmeta.self_fks)
                if (fk.to_table == tname) referenced.insert(fk.to_col);
        }

        // Row plan. Count changes need a single-column key for clones.
        size_t m = n;
        if (n >= 2 && meta.pk_col >= 0) {
            const auto delta = std::max<size_t>(1, static_cast<size_t>(0.2 * n + 0.5));
            const bool grow = (rng() & 1) != 0;
            m = grow ? n + delta : (n > delta ? n - delta : n + delta);
        }

        std::vector<size_t> kept;
        for (size_t i = 0; i < n; ++i) kept.push_back(i);
        if (m < n) {
            std::shuffle(kept.begin(), kept.end(), rng);
            kept.resize(m);
            std::sort(kept.begin(), kept.end());
        }

        std::vector<std::vector<RawCell>> rows;
        std::vector<size_t> source_of;  // original row index each new row copies
        for (size_t i : kept) {
            rows.push_back(orig[i]);
            source_of.push_back(i);
        }
        while (rows.size() < m) {
            const size_t srcrow = rng() % n;
            rows.push_back(orig[srcrow]);
            source_of.push_back(srcrow);
        }

        // Fresh keys on clones: primary key plus unique columns.
        std::set<std::string> keylike = meta.unique_cols;
        if (meta.pk_col >= 0) keylike.insert(meta.cols[meta.pk_col].name);
        for (const auto& colname : keylike) {
            const int ci = col_index(meta, colname);
            if (ci < 0) continue;
            int64_t max_int = 0;
            double max_real = 0.0;
            for (const auto& r : orig) {
                if (const auto* v = std::get_if<int64_t>(&r[ci])) max_int = std::max(max_int, *v);
                if (const auto* d = std::get_if<double>(&r[ci])) max_real = std::max(max_real, *d);
            }
            int counter = 0;
            for (size_t i = kept.size(); i < rows.size(); ++i) {
                ++counter;
                RawCell& cell = rows[i][ci];
                if (std::holds_alternative<int64_t>(cell)) cell = max_int + counter;
                else if (std::holds_alternative<double>(cell)) cell = max_real + counter;
                else if (const auto* s = std::get_if<std::string>(&cell))
                    cell = *s + "_a" + std::to_string(counter);
            }
        }

        // Where every original row ends up: kept rows keep themselves,
        // dropped rows land on a seed-chosen survivor.
        std::vector<size_t> row_target(n, SIZE_MAX);
        for (size_t pos = 0; pos < kept.size(); ++pos) row_target[kept[pos]] = pos;
        for (size_t i = 0; i < n; ++i) {
            if (row_target[i] == SIZE_MAX) row_target[i] = rng() % rows.size();
        }

        // Remap this table's outgoing foreign keys through the parents.
        auto apply_fk = [&](const FkMeta& fk, const std::map<std::string, RawCell>& value_map,
                            const std::vector<RawCell>& pool) {
            const int ci = col_index(meta, fk.from_col);
            if (ci < 0) return;
            for (auto& row : rows) {
                RawCell& cell = row[ci];
                if (std::holds_alternative<std::monostate>(cell)) continue;
                auto it = value_map.find(raw_canonical(cell));
                if (it != value_map.end()) {
                    cell = it->second;
                } else if (!pool.empty()) {
                    cell = pool[fnv1a(raw_canonical(cell)) % pool.size()];
                }
            }
        };
        for (const auto& fk : meta.fks) {
            const auto key = std::make_pair(fk.to_table, fk.to_col);
            if (!remap.count(key))
                throw AugmentError("internal: parent " + fk.to_table + "." + fk.to_col +
                                   " processed after child " + tname);
            apply_fk(fk, remap.at(key), survivors.at(key));
        }

        // Value perturbation. Keys, unique columns, referenced columns and
        // foreign keys stay untouched here.
        std::set<std::string> skip = keylike;
        for (const auto& c : referenced) skip.insert(c);
        for (const auto& fk : meta.fks) skip.insert(fk.from_col);
        for (const auto& fk : meta.self_fks) skip.insert(fk.from_col);

        for (size_t ci = 0; ci < meta.cols.size(); ++ci) {
            const ColMeta& col = meta.cols[ci];
            if (skip.count(col.name)) continue;

            bool any_int = false, any_real = false, any_text = false, any_blob = false;
            for (const auto& r : orig) {
                if (std::holds_alternative<int64_t>(r[ci])) any_int = true;
                else if (std::holds_alternative<double>(r[ci])) any_real = true;
                else if (std::holds_alternative<std::string>(r[ci])) any_text = true;
                else if (std::holds_alternative<RawBlob>(r[ci])) any_blob = true;
            }
            if (any_blob || (any_text && (any_int || any_real))) continue;  // mixed: leave alone

            const auto before = column_multiset(rows, static_cast<int>(ci));
            bool perturbed = false;

            if (any_int && !any_real && !any_text) {
                int64_t lo = INT64_MAX, hi = INT64_MIN;
                for (const auto& r : orig) {
                    if (const auto* v = std::get_if<int64_t>(&r[ci])) {
                        lo = std::min(lo, *v);
                        hi = std::max(hi, *v);
                    }
                }
                if (lo < hi) {
                    const uint64_t span = static_cast<uint64_t>(hi - lo);
                    for (auto& row : rows) {
                        if (std::holds_alternative<int64_t>(row[ci]))
                            row[ci] = lo + static_cast<int64_t>(rng() % (span + 1));
                    }
                    perturbed = true;
                }
            } else if (any_real && !any_text) {
                double lo = 0, hi = 0;
                bool first = true;
                for (const auto& r : orig) {
                    double v;
                    if (const auto* d = std::get_if<double>(&r[ci])) v = *d;
                    else if (const auto* i = std::get_if<int64_t>(&r[ci])) v = static_cast<double>(*i);
                    else continue;
                    lo = first ? v : std::min(lo, v);
                    hi = first ? v : std::max(hi, v);
                    first = false;
                }
                if (!first && lo < hi) {
                    for (auto& row : rows) {
                        if (std::holds_alternative<std::monostate>(row[ci]) ||
                            std::holds_alternative<std::string>(row[ci]) ||
                            std::holds_alternative<RawBlob>(row[ci]))
                            continue;
                        const double frac =
                            static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
                        row[ci] = lo + frac * (hi - lo);
                    }
                    perturbed = true;
                }
            } else if (any_text) {
                std::vector<size_t> positions;
                std::vector<RawCell> vals;
                for (size_t r = 0; r < rows.size(); ++r) {
                    if (std::holds_alternative<std::string>(rows[r][ci])) {
                        positions.push_back(r);
                        vals.push_back(rows[r][ci]);
                    }
                }
                std::set<std::string> distinct;
                for (const auto& v : vals) distinct.insert(raw_canonical(v));
                if (distinct.size() >= 2) {
                    std::vector<RawCell> shuffled = vals;
                    std::shuffle(shuffled.begin(), shuffled.end(), rng);
                    bool identity = true;
                    for (size_t i = 0; i < vals.size(); ++i) {
                        if (raw_canonical(shuffled[i]) != raw_canonical(vals[i])) {
                            identity = false;
                            break;
                        }
                    }
                    if (identity)
                        std::rotate(shuffled.begin(), shuffled.begin() + 1, shuffled.end());
                    for (size_t i = 0; i < positions.size(); ++i)
                        rows[positions[i]][ci] = shuffled[i];
                    perturbed = true;
                }
            }

            // A perturbed column may not reproduce the original multiset.
            // Possible only at equal row counts; nudge one value inside the
            // observed range.
            if (perturbed && rows.size() == orig.size()) {
                auto after = column_multiset(rows, static_cast<int>(ci));
                if (after == before) {
                    for (auto& row : rows) {
                        if (const auto* v = std::get_if<int64_t>(&row[ci])) {
                            int64_t lo = INT64_MAX, hi = INT64_MIN;
                            for (const auto& r : orig) {
                                if (const auto* o = std::get_if<int64_t>(&r[ci])) {
                                    lo = std::min(lo, *o);
                                    hi = std::max(hi, *o);
                                }
                            }
                            row[ci] = (*v == lo) ? hi : lo;
                            break;
                        }
                        if (const auto* d = std::get_if<double>(&row[ci])) {
                            row[ci] = *d == 0.0 ? 1.0 : *d / 2.0;
                            break;
                        }
                    }
                }
            }
        }

        // In-table remap for self-references, through the final key values.
        for (const auto& fk : meta.self_fks) {
            const int rc = col_index(meta, fk.to_col);
            if (rc < 0) continue;
            std::map<std::string, RawCell> value_map;
            std::vector<RawCell> pool;
            for (size_t i = 0; i < n; ++i)
                value_map[raw_canonical(orig[i][rc])] = rows[row_target[i]][rc];
            for (const auto& row : rows)
                if (!std::holds_alternative<std::monostate>(row[rc])) pool.push_back(row[rc]);
            std::sort(pool.begin(), pool.end(), raw_less);
            apply_fk(fk, value_map, pool);
        }

        // Publish remaps for children.
        for (const auto& colname : referenced) {
            const int rc = col_index(meta, colname);
            if (rc < 0) continue;
            const auto key = std::make_pair(tname, colname);
            for (size_t i = 0; i < n; ++i)
                remap[key][raw_canonical(orig[i][rc])] = rows[row_target[i]][rc];
            std::vector<RawCell> pool;
            for (const auto& row : rows)
                if (!std::holds_alternative<std::monostate>(row[rc])) pool.push_back(row[rc]);
            std::sort(pool.begin(), pool.end(), raw_less);
            survivors[key] = std::move(pool);
        }

        new_rows_of[tname] = std::move(rows);
    }

    // Write the new database: tables, rows in topological order, then the
    // remaining schema objects. NOT NULL and UNIQUE are enforced on insert;
    // referential integrity is checked afterwards.
    std::filesystem::remove(out_path);
    if (const auto dir = std::filesystem::path(out_path).parent_path(); !dir.empty())
        std::filesystem::create_directories(dir);
    {
        WritableDb out(out_path);
        for (const auto& ddl : table_ddl) out.exec(ddl);
        out.exec("BEGIN");
        try {
            for (const auto& tname : topo) {
                const TableMeta& meta = metas.at(tname);
                std::string sql = "INSERT INTO " + quote_ident(tname) + " (";
                for (size_t i = 0; i < meta.cols.size(); ++i) {
                    if (i) sql += ", ";
                    sql += quote_ident(meta.cols[i].name);
                }
                sql += ") VALUES (";
                for (size_t i = 0; i < meta.cols.size(); ++i) sql += i ? ",?" : "?";
                sql += ")";
                for (const auto& row : new_rows_of.at(tname)) out.run(sql, row);
            }
        } catch (const std::exception& e) {
            throw AugmentError(std::string("constraint violation during augmentation: ") +
                               e.what());
        }
        out.exec("COMMIT");
        for (const auto& ddl : other_ddl) out.exec(ddl);
        if (!out.query("PRAGMA foreign_key_check").empty())
            throw AugmentError("augmented database failed the referential integrity check");
    }
    return out_path;
}

int64_t fk_orphan_count(const std::string& db_path) {
    WritableDb db(db_path, /*readonly=*/true);
    auto names = db.query(
        "SELECT name FROM sqlite_master WHERE type='table' "
        "AND name NOT LIKE 'sqlite\\_%' ESCAPE '\\' ORDER BY name");
    int64_t orphans = 0;
    for (const auto& row : names) {
        const std::string table = std::get<std::string>(row[0]);
        for (const auto& fk : db.query("PRAGMA foreign_key_list(" + quote_ident(table) + ")")) {
            const std::string to_table = std::get<std::string>(fk[2]);
            const std::string from_col = std::get<std::string>(fk[3]);
            std::string to_col;
            if (const auto* s = std::get_if<std::string>(&fk[4])) {
                to_col = *s;
            } else {
                auto info = db.query("PRAGMA table_info(" + quote_ident(to_table) + ")");
                for (const auto& c : info)
                    if (std::get<int64_t>(c[5]) > 0) to_col = std::get<std::string>(c[1]);
            }
            auto cnt = db.query("SELECT COUNT(*) FROM " + quote_ident(table) + " c WHERE c." +
                                quote_ident(from_col) +
                                " IS NOT NULL AND NOT EXISTS (SELECT 1 FROM " +
                                quote_ident(to_table) + " p WHERE p." + quote_ident(to_col) +
                                " = c." + quote_ident(from_col) + ")");
            orphans += std::get<int64_t>(cnt[0][0]);
        }
    }
    return orphans;
}

// ---- judging and parsing ----

JudgeVerdict parse_judge_verdict(const std::string& reply) {
    JudgeVerdict v;
    v.rationale = reply;
    const std::string folded = fold(reply);
    auto dimension = [&](const char* name) {
        const size_t pos = folded.find(name);
        if (pos == std::string::npos) return false;  // missing reads as fail
        const size_t eol = folded.find('\n', pos);
        const std::string line = folded.substr(pos, eol == std::string::npos ? eol : eol - pos);
        if (line.find("fail") != std::string::npos) return false;
        return line.find("pass") != std::string::npos;
    };
    v.question_clear = dimension("question_clear");
    v.schema_grounded = dimension("schema_grounded");
    v.gold_correct = dimension("gold_correct");
    v.answerable = dimension("answerable");
    return v;
}

std::optional<std::pair<std::string, std::string>> parse_candidate_reply(
    const std::string& reply) {
    std::string question, sql;
    size_t qpos = reply.find("QUESTION:");
    if (qpos == std::string::npos) return std::nullopt;
    size_t qend = reply.find('\n', qpos);
    if (qend == std::string::npos) qend = reply.size();
    question = trim(reply.substr(qpos + 9, qend - qpos - 9));

    size_t spos = reply.find("SQL:", qend);
    if (spos == std::string::npos) return std::nullopt;
    sql = trim(reply.substr(spos + 4));
    if (sql.rfind("```", 0) == 0) {
        size_t body = sql.find('\n');
        if (body == std::string::npos) return std::nullopt;
        size_t close = sql.find("```", body);
        if (close == std::string::npos) close = sql.size();
        sql = trim(sql.substr(body + 1, close - body - 1));
    }
    if (question.empty() || sql.empty()) return std::nullopt;
    return std::make_pair(question, sql);
}

namespace {

// 'A', 'B' or 0 when the reply names neither.
char parse_choice(const std::string& reply) {
    std::string token;
    for (size_t i = 0; i <= reply.size(); ++i) {
        const bool boundary = i == reply.size() ||
                              !std::isalnum(static_cast<unsigned char>(reply[i]));
        if (!boundary) {
            token += reply[i];
            continue;
        }
        if (token.size() == 1) {
            const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(token[0])));
            if (c == 'A' || c == 'B') return c;
        }
        token.clear();
    }
    return 0;
}

std::string pair_prompt(const SynthSample& first, const SynthSample& second) {
    return "Two candidate question/SQL pairs follow. Which pair has the more faithful "
           "question-to-SQL alignment?\n\nA:\nquestion: " +
           first.question + "\nsql: " + first.gold_sql + "\n\nB:\nquestion: " + second.question +
           "\nsql: " + second.gold_sql + "\n\nReply with the single letter A or B.";
}

const char kJudgeSystem[] =
    "You compare text-to-SQL training candidates. Answer exactly as instructed.";

}  // namespace

TournamentResult tournament_select(const std::vector<SynthSample>& candidates, ModelClient* judge,
                                   uint64_t seed) {
    if (candidates.empty())
        throw std::invalid_argument("tournament_select: no candidates");
    TournamentResult result;
    if (candidates.size() == 1) {
        result.winner = candidates[0];
        return result;
    }

    std::vector<const SynthSample*> bracket;
    for (const auto& c : candidates) bracket.push_back(&c);
    std::mt19937_64 rng(seed);
    std::shuffle(bracket.begin(), bracket.end(), rng);

    auto complexity_fallback = [&](const std::string& note) {
        const SynthSample* best = &candidates[0];
        for (const auto& c : candidates) {
            const int cs = complexity_score(c.signature);
            const int bs = complexity_score(best->signature);
            if (cs > bs || (cs == bs && c.sample_id < best->sample_id)) best = &c;
        }
        result.winner = *best;
        result.matches.push_back(TournamentMatch{"", "", best->sample_id, note});
        return result;
    };

    while (bracket.size() > 1) {
        std::vector<const SynthSample*> next;
        for (size_t i = 0; i + 1 < bracket.size(); i += 2) {
            const SynthSample* a = bracket[i];
            const SynthSample* b = bracket[i + 1];
            TournamentMatch match;
            match.a_id = a->sample_id;
            match.b_id = b->sample_id;

            char first_order, second_order;
            try {
                if (judge == nullptr) throw EndpointError("no judge endpoint", false);
                first_order = parse_choice(judge->chat_one(
                    {{"system", kJudgeSystem}, {"user", pair_prompt(*a, *b)}}));
                second_order = parse_choice(judge->chat_one(
                    {{"system", kJudgeSystem}, {"user", pair_prompt(*b, *a)}}));
            } catch (const EndpointError& e) {
                return complexity_fallback(std::string("judge unreachable (") + e.what() +
                                           "): highest-complexity fallback");
            }

            const SynthSample* winner;
            if (first_order == 'A' && second_order == 'B') {
                winner = a;
            } else if (first_order == 'B' && second_order == 'A') {
                winner = b;
            } else {
                winner = a;
                match.note = "order disagreement, first-listed kept";
            }
            match.winner_id = winner->sample_id;
            result.matches.push_back(match);
            next.push_back(winner);
        }
        if (bracket.size() % 2 == 1) next.push_back(bracket.back());  // bye
        bracket = std::move(next);
    }
    result.winner = *bracket[0];
    return result;
}

namespace {

bool dual_equivalent(const std::string& predicted, const std::string& gold, GenCheckEnv& env,
                     std::string& note) {
    const EquivalencePolicy policy = policy_for_gold(gold);
    ExecOutcome gold_orig = env.original->execute(gold);
    ExecOutcome gold_aug = env.augmented->execute(gold);
    if (!gold_orig.ok() || !gold_aug.ok())
        throw std::runtime_error("gen_as_check: gold no longer executes: " + gold);
    ExecOutcome pred_orig = env.original->execute(predicted);
    ExecOutcome pred_aug = env.augmented->execute(predicted);
    const EquivalenceVerdict on_orig = equivalent(pred_orig, gold_orig, policy);
    const EquivalenceVerdict on_aug = equivalent(pred_aug, gold_aug, policy);
    if (on_orig.equivalent && on_aug.equivalent) return true;
    if (on_orig.equivalent && !on_aug.equivalent)
        note = "accidental correctness: matched the original but not the augmented database";
    return false;
}

bool gold_executes_on_both(const std::string& sql, GenCheckEnv& env) {
    return env.original->execute(sql).ok() && env.augmented->execute(sql).ok();
}

}  // namespace

SynthSample gen_as_check(SynthSample sample, ModelClient* sft_policy, ModelClient* judge,
                         ModelClient* regen, int k_cycles, GenCheckEnv& env) {
    if (k_cycles < 1) throw std::invalid_argument("gen_as_check: K must be >= 1");
    if (env.original == nullptr || env.augmented == nullptr)
        throw std::invalid_argument("gen_as_check: both database handles are required");

    for (int cycle = 1; cycle <= k_cycles; ++cycle) {
        sample.cycles_used = cycle;
        const std::string cyc = "cycle " + std::to_string(cycle) + ": ";

        if (sft_policy == nullptr) {
            sample.status = SampleStatus::rejected;
            sample.audit_notes.push_back(cyc + "no policy endpoint");
            return sample;
        }
        Trajectory traj = rollout(sample.sample_id + "-cy" + std::to_string(cycle),
                                  sample.question, sample.db_id, env.context_text, env.tmpl,
                                  *sft_policy, *env.original, env.limits, env.sampling);
        if (!traj.annotation.empty()) {
            sample.status = SampleStatus::rejected;
            sample.audit_notes.push_back(cyc + traj.annotation);
            return sample;
        }

        if (traj.final_sql) {
            std::string screen_note;
            if (dual_equivalent(*traj.final_sql, sample.gold_sql, env, screen_note)) {
                sample.status = SampleStatus::verified;
                sample.audit_notes.push_back(cyc + "execution match on original and augmented");
                return sample;
            }
            if (!screen_note.empty()) sample.audit_notes.push_back(cyc + screen_note);
        }

        // Model missed: multi-dimensional audit.
        JudgeVerdict verdict;
        try {
            if (judge == nullptr) throw EndpointError("no judge endpoint", false);
            const std::string prediction =
                traj.final_sql ? *traj.final_sql : std::string("(no submitted SQL)");
            std::string prompt =
                "Audit this synthesized text-to-SQL sample. For each dimension output "
                "'<dimension>: pass' or '<dimension>: fail' on its own line, then a short "
                "rationale.\nDimensions: question_clear, schema_grounded, gold_correct, "
                "answerable.\n\nSchema:\n" +
                env.context_text + "\nQuestion: " + sample.question +
                "\nGold SQL: " + sample.gold_sql + "\nA solver model produced: " + prediction;
            verdict = parse_judge_verdict(
                judge->chat_one({{"system", kJudgeSystem}, {"user", prompt}}));
        } catch (const EndpointError& e) {
            sample.status = SampleStatus::rejected;
            sample.audit_notes.push_back(cyc + "judge unreachable: " + e.what());
            return sample;
        }

        if (verdict.gold_correct && verdict.question_clear && verdict.schema_grounded &&
            verdict.answerable) {
            sample.status = SampleStatus::verified;
            sample.audit_notes.push_back(cyc + "model-miss, gold confirmed");
            return sample;
        }

        // A failing audit triggers regeneration: the gold when the judge
        // rejected it, the question when it was unclear or ungrounded.
        try {
            if (regen == nullptr) throw EndpointError("no regen endpoint", false);
            const bool fix_gold = !verdict.gold_correct;
            const bool fix_question = !verdict.question_clear || !verdict.schema_grounded ||
                                      !verdict.answerable;
            std::string prompt =
                "Rewrite this text-to-SQL training sample so question and SQL agree with the "
                "schema.\n\nSchema:\n" +
                env.context_text + "\nCurrent question: " + sample.question +
                "\nCurrent SQL: " + sample.gold_sql + "\nJudge findings:\n" + verdict.rationale +
                "\n\nReply exactly as:\nQUESTION: <the question>\nSQL: <one SQLite SELECT>";
            auto parsed = parse_candidate_reply(
                regen->chat_one({{"system", kJudgeSystem}, {"user", prompt}}));
            if (!parsed) {
                sample.audit_notes.push_back(cyc + "regeneration reply unparsable");
                continue;
            }
            if (fix_gold) {
                if (gold_executes_on_both(parsed->second, env)) {
                    sample.gold_sql = parsed->second;
                    try {
                        sample.signature = decompose_sql(sample.gold_sql);
                    } catch (const SqlScanError&) {
                    }
                    sample.status = SampleStatus::regenerated;
                    sample.audit_notes.push_back(cyc + "gold regenerated");
                } else {
                    sample.audit_notes.push_back(cyc + "regenerated gold failed execution, kept");
                }
            }
            if (fix_question) {
                sample.question = parsed->first;
                sample.status = SampleStatus::regenerated;
                sample.audit_notes.push_back(cyc + "question regenerated");
            }
        } catch (const EndpointError& e) {
            sample.status = SampleStatus::rejected;
            sample.audit_notes.push_back(cyc + "regen unreachable: " + e.what());
            return sample;
        }
    }

    sample.status = SampleStatus::rejected;
    sample.audit_notes.push_back("no verification within the cycle budget");
    return sample;
}

namespace {

ordered_json signature_to_json(const StructuralSignature& sig) {
    ordered_json j;
    j["tables_used"] = std::vector<std::string>(sig.tables_used.begin(), sig.tables_used.end());
    j["join_count"] = sig.join_count;
    j["has_aggregate"] = sig.has_aggregate;
    j["has_group_by"] = sig.has_group_by;
    j["has_subquery"] = sig.has_subquery;
    j["has_set_op"] = sig.has_set_op;
    j["has_order_limit"] = sig.has_order_limit;
    j["nesting_depth"] = sig.nesting_depth;
    j["degenerate"] = sig.degenerate;
    return j;
}

const char* kShapeTemplates[] = {
    "a single-table aggregate (COUNT, SUM or AVG)",
    "a join between two tables with a filter",
    "a GROUP BY with an aggregate per group",
    "an ORDER BY with a LIMIT",
};

}  // namespace

FactoryReport synthesize(const FactoryConfig& cfg, const FactoryEndpoints& endpoints) {
    if (cfg.out_dir.empty()) throw std::invalid_argument("synthesize: out_dir required");
    if (cfg.n_candidates < 1) throw std::invalid_argument("synthesize: N must be >= 1");
    std::filesystem::create_directories(cfg.out_dir);

    std::vector<std::string> db_ids = cfg.db_ids;
    if (db_ids.empty()) {
        for (const auto& entry : std::filesystem::directory_iterator(cfg.db_root)) {
            if (entry.is_directory()) db_ids.push_back(entry.path().filename().string());
        }
    }
    std::sort(db_ids.begin(), db_ids.end());
    if (db_ids.empty()) throw std::invalid_argument("synthesize: no databases under " + cfg.db_root);

    FactoryReport report;
    report.samples_path = cfg.out_dir + "/samples.jsonl";
    report.manifest_path = cfg.out_dir + "/manifest.json";
    std::ofstream samples_out(report.samples_path, std::ios::binary | std::ios::trunc);
    if (!samples_out) throw std::runtime_error("cannot write " + report.samples_path);

    ordered_json manifest;
    manifest["v"] = 1;
    manifest["config"] = ordered_json{
        {"k_cycles", cfg.k_cycles}, {"n_candidates", cfg.n_candidates}, {"seed", cfg.seed}};
    manifest["databases"] = ordered_json::array();

    for (const auto& db_id : db_ids) {
        const std::string db_file = db_file_for(cfg.db_root, db_id);
        const uint64_t db_seed = cfg.seed ^ fnv1a(db_id);
        const std::string aug_path = cfg.out_dir + "/" + db_id + ".aug.sqlite";

        ordered_json entry;
        entry["db_id"] = db_id;
        entry["source_digest"] = sha256_file(db_file);
        augment_database(db_file, db_seed, aug_path);
        entry["augmented_path"] = aug_path;
        entry["augmented_digest"] = sha256_file(aug_path);

        Sandbox original(db_file);
        Sandbox augmented(aug_path);
        DatabaseProfile profile = build_profile(original, db_id);
        std::vector<SchemaUnit> units = generate_descriptions(profile, std::nullopt, nullptr);
        const std::string context_text = render_profile(profile, units);

        // Candidate generation, one endpoint call per candidate.
        std::vector<SynthSample> pool;
        entry["candidates"] = ordered_json::array();
        for (int i = 0; i < cfg.n_candidates; ++i) {
            const std::string candidate_id = db_id + "-c" + std::to_string(i);
            ordered_json jc;
            jc["candidate_id"] = candidate_id;
            const char* shape = kShapeTemplates[i % (sizeof kShapeTemplates /
                                                     sizeof kShapeTemplates[0])];
            std::string stage = "ok";
            std::string question, sql;
            try {
                if (endpoints.generator == nullptr)
                    throw EndpointError("no generator endpoint", false);
                std::string prompt =
                    "Write one natural-language question about this database and the SQLite "
                    "SELECT that answers it. Target shape: " +
                    std::string(shape) + ".\n\nSchema:\n" + context_text +
                    "\nReply exactly as:\nQUESTION: <the question>\nSQL: <one SQLite SELECT>";
                const std::string reply = endpoints.generator->chat_one(
                    {{"system", "You write text-to-SQL training data."}, {"user", prompt}});
                auto parsed = parse_candidate_reply(reply);
                if (!parsed) {
                    stage = "parse_failure";
                } else {
                    question = parsed->first;
                    sql = parsed->second;
                }
            } catch (const EndpointError&) {
                stage = "generator_failure";
            }

            SynthSample sample;
            if (stage == "ok") {
                sample.sample_id = candidate_id;
                sample.db_id = db_id;
                sample.question = question;
                sample.gold_sql = sql;
                try {
                    sample.signature = decompose_sql(sql);
                } catch (const SqlScanError&) {
                    stage = "scan_failure";
                }
            }
            if (stage == "ok" &&
                (!original.execute(sql).ok() || !augmented.execute(sql).ok())) {
                stage = "gold_exec_failure";
            }
            jc["stage"] = stage;
            jc["question"] = question;
            jc["sql"] = sql;
            entry["candidates"].push_back(std::move(jc));
            if (stage == "ok") {
                pool.push_back(std::move(sample));
            } else {
                ++report.drops[stage];
            }
        }

        entry["bracket"] = ordered_json::array();
        if (pool.empty()) {
            entry["winner"] = nullptr;
            entry["status"] = "no_candidates";
            entry["cycles_used"] = 0;
            entry["cycles"] = ordered_json::array();
            manifest["databases"].push_back(std::move(entry));
            continue;
        }

        TournamentResult bracket = tournament_select(pool, endpoints.judge, db_seed);
        for (const auto& m : bracket.matches) {
            entry["bracket"].push_back(ordered_json{
                {"a", m.a_id}, {"b", m.b_id}, {"winner", m.winner_id}, {"note", m.note}});
        }
        entry["winner"] = bracket.winner.sample_id;

        GenCheckEnv env;
        env.original = &original;
        env.augmented = &augmented;
        env.context_text = context_text;
        env.tmpl = builtin_prompt_template();
        SynthSample final_sample =
            gen_as_check(std::move(bracket.winner), endpoints.sft_policy, endpoints.judge,
                         endpoints.regen, cfg.k_cycles, env);

        entry["status"] = to_string(final_sample.status);
        entry["cycles_used"] = final_sample.cycles_used;
        entry["cycles"] = final_sample.audit_notes;
        entry["question"] = final_sample.question;
        entry["gold_sql"] = final_sample.gold_sql;
        manifest["databases"].push_back(std::move(entry));

        if (final_sample.status == SampleStatus::verified) {
            ++report.verified;
            ordered_json js;
            js["v"] = 1;
            js["sample_id"] = final_sample.sample_id;
            js["db_id"] = final_sample.db_id;
            js["question"] = final_sample.question;
            js["gold_sql"] = final_sample.gold_sql;
            js["signature"] = signature_to_json(final_sample.signature);
            js["cycles_used"] = final_sample.cycles_used;
            samples_out << js.dump() << "\n";
        } else {
            ++report.drops["gen_as_check_" + std::string(to_string(final_sample.status))];
        }
    }

    manifest["verified"] = report.verified;
    manifest["drops"] = ordered_json::object();
    for (const auto& [stage, count] : report.drops) manifest["drops"][stage] = count;
    std::ofstream manifest_out(report.manifest_path, std::ios::binary | std::ios::trunc);
    if (!manifest_out) throw std::runtime_error("cannot write " + report.manifest_path);
    manifest_out << manifest.dump(2) << "\n";
    return report;
}

}  // namespace sqlrl
