#include "sqlrl/schema_context.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace sqlrl {

namespace {

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

ResultTable run(Sandbox& handle, const std::string& sql) {
    ExecOutcome outcome = handle.execute(sql);
    if (!outcome.ok()) {
        throw ProfileError("profile query failed (" + std::string(to_string(outcome.status)) +
                           "): " + outcome.message + " [" + sql + "]");
    }
    return std::move(outcome.table);
}

int64_t scalar_int(Sandbox& handle, const std::string& sql) {
    ResultTable t = run(handle, sql);
    if (t.rows.empty() || t.rows[0].empty()) throw ProfileError("no scalar result: " + sql);
    const Cell& c = t.rows[0][0];
    if (const auto* i = std::get_if<int64_t>(&c)) return *i;
    if (const auto* d = std::get_if<double>(&c)) return static_cast<int64_t>(*d);
    throw ProfileError("non-numeric scalar: " + sql);
}

std::string fold(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string render_exemplars(const std::vector<Cell>& exemplars) {
    std::string out;
    for (size_t i = 0; i < exemplars.size(); ++i) {
        if (i) out += ", ";
        out += display_cell(exemplars[i]);
    }
    return out;
}

ordered_json cell_to_json(const Cell& c) {
    ordered_json j;
    if (std::holds_alternative<std::monostate>(c)) {
        j["t"] = "n";
    } else if (const auto* i = std::get_if<int64_t>(&c)) {
        j["t"] = "i";
        j["v"] = *i;
    } else if (const auto* d = std::get_if<double>(&c)) {
        j["t"] = "r";
        j["v"] = *d;
    } else if (const auto* s = std::get_if<std::string>(&c)) {
        j["t"] = "s";
        j["v"] = *s;
    } else {
        const auto& b = std::get<BlobDigest>(c);
        j["t"] = "b";
        j["hex"] = b.hex;
        j["size"] = b.size;
    }
    return j;
}

Cell cell_from_json(const nlohmann::json& j) {
    const std::string tag = j.at("t").get<std::string>();
    if (tag == "n") return std::monostate{};
    if (tag == "i") return j.at("v").get<int64_t>();
    if (tag == "r") return j.at("v").get<double>();
    if (tag == "s") return j.at("v").get<std::string>();
    if (tag == "b") return BlobDigest{j.at("hex").get<std::string>(), j.at("size").get<uint64_t>()};
    throw std::runtime_error("unknown cell tag: " + tag);
}

// One CSV record, RFC-4180 quoting. Returns false at end of input.
bool read_csv_record(std::istream& in, std::vector<std::string>& fields) {
    fields.clear();
    std::string field;
    bool in_quotes = false;
    bool seen_any = false;
    int ch;
    while ((ch = in.get()) != EOF) {
        seen_any = true;
        char c = static_cast<char>(ch);
        if (in_quotes) {
            if (c == '"') {
                if (in.peek() == '"') {
                    in.get();
                    field += '"';
                } else {
                    in_quotes = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            in_quotes = true;
        } else if (c == ',') {
            fields.push_back(field);
            field.clear();
        } else if (c == '\n') {
            if (!field.empty() && field.back() == '\r') field.pop_back();
            fields.push_back(field);
            return true;
        } else {
            field += c;
        }
    }
    if (!seen_any) return false;
    if (!field.empty() && field.back() == '\r') field.pop_back();
    fields.push_back(field);
    return true;
}

std::string unit_embedding_text(const SchemaUnit& unit) {
    std::string text = unit.description;
    if (!unit.exemplars_rendered.empty()) {
        text += " ";
        text += unit.exemplars_rendered;
    }
    return text;
}

std::set<std::string> tokenize(const std::string& s) {
    std::set<std::string> tokens;
    std::string cur;
    for (unsigned char c : s) {
        if (std::isalnum(c)) {
            cur += static_cast<char>(std::tolower(c));
        } else if (!cur.empty()) {
            tokens.insert(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.insert(cur);
    return tokens;
}

}  // namespace

DatabaseProfile build_profile(Sandbox& handle, const std::string& db_id, int exemplars) {
    if (exemplars < 0) throw ProfileError("exemplar count must be >= 0");
    DatabaseProfile profile;
    profile.db_id = db_id;

    ResultTable names = run(handle,
                            "SELECT name FROM sqlite_master WHERE type='table' "
                            "AND name NOT LIKE 'sqlite\\_%' ESCAPE '\\' ORDER BY name");
    std::vector<std::string> tables;
    for (const auto& row : names.rows) tables.push_back(std::get<std::string>(row[0]));

    // First pass: declared columns and primary keys, needed to resolve
    // foreign keys whose target column is implicit.
    std::map<std::string, std::vector<std::string>> pk_of;
    std::map<std::string, std::vector<std::pair<std::string, std::string>>> decl_of;
    for (const auto& t : tables) {
        ResultTable info = run(handle, "PRAGMA table_info(" + quote_ident(t) + ")");
        for (const auto& row : info.rows) {
            const std::string col = std::get<std::string>(row[1]);
            std::string type;
            if (const auto* s = std::get_if<std::string>(&row[2])) type = *s;
            decl_of[t].push_back({col, type});
            if (std::get<int64_t>(row[5]) > 0) {
                pk_of[t].push_back(col);
                profile.primary_keys.push_back({t, col});
            }
        }
    }

    for (const auto& t : tables) {
        ResultTable fks = run(handle, "PRAGMA foreign_key_list(" + quote_ident(t) + ")");
        for (const auto& row : fks.rows) {
            ForeignKey fk;
            fk.from_table = t;
            fk.to_table = std::get<std::string>(row[2]);
            fk.from_column = std::get<std::string>(row[3]);
            if (const auto* s = std::get_if<std::string>(&row[4])) {
                fk.to_column = *s;
            } else {
                // Implicit target: the referenced table's primary key.
                auto it = pk_of.find(fk.to_table);
                if (it == pk_of.end() || it->second.empty()) {
                    throw ProfileError("foreign key " + t + "." + fk.from_column +
                                       " references " + fk.to_table + " which has no primary key");
                }
                fk.to_column = it->second.front();
            }
            profile.foreign_keys.push_back(fk);
        }
    }

    char buf[32];
    for (const auto& t : tables) {
        TableProfile tp;
        tp.name = t;
        tp.row_count = scalar_int(handle, "SELECT COUNT(*) FROM " + quote_ident(t));
        for (const auto& [col, type] : decl_of[t]) {
            ColumnProfile cp;
            cp.table = t;
            cp.column = col;
            cp.declared_type = type;
            const std::string qt = quote_ident(t);
            const std::string qc = quote_ident(col);
            cp.distinct_count = scalar_int(handle, "SELECT COUNT(DISTINCT " + qc + ") FROM " + qt);
            if (tp.row_count > 0) {
                int64_t nulls = scalar_int(
                    handle, "SELECT COUNT(*) FROM " + qt + " WHERE " + qc + " IS NULL");
                cp.null_fraction = static_cast<double>(nulls) / static_cast<double>(tp.row_count);
            }
            ResultTable mm =
                run(handle, "SELECT MIN(" + qc + "), MAX(" + qc + ") FROM " + qt);
            if (!mm.rows.empty()) {
                if (!std::holds_alternative<std::monostate>(mm.rows[0][0]))
                    cp.min_value = mm.rows[0][0];
                if (!std::holds_alternative<std::monostate>(mm.rows[0][1]))
                    cp.max_value = mm.rows[0][1];
            }
            if (exemplars > 0) {
                std::snprintf(buf, sizeof buf, "%d", exemplars);
                ResultTable top = run(handle, "SELECT " + qc + " AS v, COUNT(*) AS n FROM " + qt +
                                                  " WHERE " + qc + " IS NOT NULL GROUP BY " + qc +
                                                  " ORDER BY n DESC, v LIMIT " + buf);
                for (const auto& row : top.rows) cp.exemplars.push_back(row[0]);
            }
            tp.columns.push_back(std::move(cp));
        }
        profile.tables.push_back(std::move(tp));
    }
    return profile;
}

std::string profile_to_json(const DatabaseProfile& profile) {
    ordered_json j;
    j["v"] = 1;
    j["db_id"] = profile.db_id;
    j["tables"] = ordered_json::array();
    for (const auto& t : profile.tables) {
        ordered_json jt;
        jt["name"] = t.name;
        jt["row_count"] = t.row_count;
        jt["columns"] = ordered_json::array();
        for (const auto& c : t.columns) {
            ordered_json jc;
            jc["table"] = c.table;
            jc["column"] = c.column;
            jc["declared_type"] = c.declared_type;
            jc["distinct_count"] = c.distinct_count;
            jc["null_fraction"] = c.null_fraction;
            if (c.min_value) jc["min"] = cell_to_json(*c.min_value);
            if (c.max_value) jc["max"] = cell_to_json(*c.max_value);
            jc["exemplars"] = ordered_json::array();
            for (const auto& e : c.exemplars) jc["exemplars"].push_back(cell_to_json(e));
            jt["columns"].push_back(std::move(jc));
        }
        j["tables"].push_back(std::move(jt));
    }
    j["foreign_keys"] = ordered_json::array();
    for (const auto& fk : profile.foreign_keys) {
        j["foreign_keys"].push_back(ordered_json{{"from_table", fk.from_table},
                                                 {"from_column", fk.from_column},
                                                 {"to_table", fk.to_table},
                                                 {"to_column", fk.to_column}});
    }
    j["primary_keys"] = ordered_json::array();
    for (const auto& [t, c] : profile.primary_keys)
        j["primary_keys"].push_back(ordered_json::array({t, c}));
    return j.dump(2) + "\n";
}

DatabaseProfile profile_from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    DatabaseProfile profile;
    profile.db_id = j.at("db_id").get<std::string>();
    for (const auto& jt : j.at("tables")) {
        TableProfile t;
        t.name = jt.at("name").get<std::string>();
        t.row_count = jt.at("row_count").get<int64_t>();
        for (const auto& jc : jt.at("columns")) {
            ColumnProfile c;
            c.table = jc.at("table").get<std::string>();
            c.column = jc.at("column").get<std::string>();
            c.declared_type = jc.at("declared_type").get<std::string>();
            c.distinct_count = jc.at("distinct_count").get<int64_t>();
            c.null_fraction = jc.at("null_fraction").get<double>();
            if (jc.contains("min")) c.min_value = cell_from_json(jc.at("min"));
            if (jc.contains("max")) c.max_value = cell_from_json(jc.at("max"));
            for (const auto& je : jc.at("exemplars")) c.exemplars.push_back(cell_from_json(je));
            t.columns.push_back(std::move(c));
        }
        profile.tables.push_back(std::move(t));
    }
    for (const auto& jf : j.at("foreign_keys")) {
        profile.foreign_keys.push_back(ForeignKey{jf.at("from_table").get<std::string>(),
                                                  jf.at("from_column").get<std::string>(),
                                                  jf.at("to_table").get<std::string>(),
                                                  jf.at("to_column").get<std::string>()});
    }
    for (const auto& jp : j.at("primary_keys"))
        profile.primary_keys.push_back({jp.at(0).get<std::string>(), jp.at(1).get<std::string>()});
    return profile;
}

std::string save_profile(const DatabaseProfile& profile, const std::string& cache_dir) {
    std::filesystem::create_directories(cache_dir);
    std::string path = cache_dir + "/" + profile.db_id + ".profile.json";
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write profile cache: " + path);
    out << profile_to_json(profile);
    return path;
}

std::optional<DatabaseProfile> load_cached_profile(const std::string& cache_dir,
                                                   const std::string& db_id) {
    std::string path = cache_dir + "/" + db_id + ".profile.json";
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::stringstream ss;
    ss << in.rdbuf();
    return profile_from_json(ss.str());
}

std::optional<std::string> MetadataFile::find(const std::string& table,
                                              const std::string& column) const {
    const std::string ft = fold(table);
    const std::string fc = fold(column);
    for (const auto& e : entries) {
        if (fold(e.table) == ft && fold(e.column) == fc) return e.description;
    }
    return std::nullopt;
}

MetadataFile load_metadata(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open metadata file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    if (text.size() >= 3 && static_cast<unsigned char>(text[0]) == 0xEF &&
        static_cast<unsigned char>(text[1]) == 0xBB && static_cast<unsigned char>(text[2]) == 0xBF)
        text.erase(0, 3);

    MetadataFile file;
    if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") {
        nlohmann::json j = nlohmann::json::parse(text);
        if (!j.is_array()) throw std::runtime_error("metadata JSON must be an array: " + path);
        for (const auto& e : j) {
            MetadataEntry entry;
            entry.table = e.at("table").get<std::string>();
            if (e.contains("column") && !e.at("column").is_null())
                entry.column = e.at("column").get<std::string>();
            entry.description = e.at("description").get<std::string>();
            file.entries.push_back(std::move(entry));
        }
        return file;
    }

    std::istringstream stream(text);
    std::vector<std::string> fields;
    size_t line_no = 0;
    while (read_csv_record(stream, fields)) {
        ++line_no;
        if (fields.size() == 1 && fields[0].empty()) continue;
        if (fields.size() < 3) {
            throw std::runtime_error("metadata CSV record " + std::to_string(line_no) +
                                     " has fewer than 3 fields: " + path);
        }
        if (line_no == 1 && fold(fields[0]) == "table" && fold(fields[1]) == "column")
            continue;  // header row
        file.entries.push_back(MetadataEntry{fields[0], fields[1], fields[2]});
    }
    return file;
}

std::string template_description(const SchemaUnit& unit, const DatabaseProfile& profile) {
    if (unit.kind == UnitKind::table) {
        std::string cols;
        for (const auto& t : profile.tables) {
            if (t.name != unit.identifier) continue;
            for (size_t i = 0; i < t.columns.size(); ++i) {
                if (i) cols += ", ";
                cols += t.columns[i].column;
            }
        }
        return "table " + unit.identifier + ", columns: " + cols;
    }
    const size_t dot = unit.identifier.find('.');
    const std::string table = unit.identifier.substr(0, dot);
    const std::string column = unit.identifier.substr(dot + 1);
    std::string type = "unknown";
    for (const auto& t : profile.tables) {
        if (t.name != table) continue;
        for (const auto& c : t.columns) {
            if (c.column == column && !c.declared_type.empty()) type = c.declared_type;
        }
    }
    std::string desc = "column " + column + " of table " + table + ", type " + type;
    if (!unit.exemplars_rendered.empty()) desc += ", e.g. " + unit.exemplars_rendered;
    return desc;
}

std::vector<SchemaUnit> generate_descriptions(const DatabaseProfile& profile,
                                              const std::optional<MetadataFile>& harvested,
                                              ModelClient* client, int parallelism) {
    if (parallelism < 1) parallelism = 1;
    std::vector<SchemaUnit> units;
    for (const auto& t : profile.tables) {
        SchemaUnit tu;
        tu.kind = UnitKind::table;
        tu.identifier = t.name;
        units.push_back(tu);
        for (const auto& c : t.columns) {
            SchemaUnit cu;
            cu.kind = UnitKind::column;
            cu.identifier = t.name + "." + c.column;
            cu.exemplars_rendered = render_exemplars(c.exemplars);
            units.push_back(cu);
        }
    }

    std::vector<size_t> pending;
    for (size_t i = 0; i < units.size(); ++i) {
        SchemaUnit& u = units[i];
        std::string table = u.identifier;
        std::string column;
        if (u.kind == UnitKind::column) {
            const size_t dot = u.identifier.find('.');
            table = u.identifier.substr(0, dot);
            column = u.identifier.substr(dot + 1);
        }
        if (harvested) {
            if (auto desc = harvested->find(table, column); desc && !desc->empty()) {
                u.description = *desc;
                u.source = UnitSource::harvested;
                continue;
            }
        }
        u.source = UnitSource::generated;
        pending.push_back(i);
    }

    if (pending.empty()) return units;
    if (client == nullptr) {
        for (size_t i : pending) units[i].description = template_description(units[i], profile);
        return units;
    }

    std::atomic<size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto worker = [&]() {
        for (;;) {
            const size_t slot = next.fetch_add(1);
            if (slot >= pending.size()) return;
            SchemaUnit& u = units[pending[slot]];
            std::vector<ChatMessage> messages;
            messages.push_back(
                {"system", "You describe relational database schema elements in one short "
                           "sentence. Reply with the sentence only."});
            if (u.kind == UnitKind::table) {
                messages.push_back({"user", "Database " + profile.db_id + ". Describe table " +
                                                u.identifier + "."});
            } else {
                std::string prompt = "Database " + profile.db_id + ". Describe column " +
                                     u.identifier + ".";
                if (!u.exemplars_rendered.empty())
                    prompt += " Example values: " + u.exemplars_rendered + ".";
                messages.push_back({"user", prompt});
            }
            try {
                std::string reply = client->chat_one(messages);
                u.description = reply.empty() ? template_description(u, profile) : reply;
            } catch (const EndpointError&) {
                u.description = template_description(u, profile);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mu);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };

    const size_t n_workers = std::min<size_t>(parallelism, pending.size());
    std::vector<std::thread> threads;
    for (size_t i = 0; i < n_workers; ++i) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
    if (failure) std::rethrow_exception(failure);
    return units;
}

double lexical_overlap(const std::string& a, const std::string& b) {
    std::set<std::string> ta = tokenize(a);
    std::set<std::string> tb = tokenize(b);
    if (ta.empty() && tb.empty()) return 0.0;
    size_t inter = 0;
    for (const auto& tok : ta) inter += tb.count(tok);
    const size_t uni = ta.size() + tb.size() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

SchemaContext prune(const std::vector<SchemaUnit>& units, const DatabaseProfile& profile,
                    const std::string& question, ModelClient* embedder, int k) {
    if (k < 1) throw std::invalid_argument("prune: k must be >= 1");
    if (units.empty()) throw std::invalid_argument("prune: units must be non-empty");

    std::unordered_set<std::string> retained_ids;
    for (const auto& [t, c] : profile.primary_keys) retained_ids.insert(t + "." + c);
    for (const auto& fk : profile.foreign_keys) {
        retained_ids.insert(fk.from_table + "." + fk.from_column);
        retained_ids.insert(fk.to_table + "." + fk.to_column);
    }

    SchemaContext ctx;
    ctx.k = k;
    std::vector<const SchemaUnit*> pool;
    for (const auto& u : units) {
        if (u.kind == UnitKind::column && retained_ids.count(u.identifier)) {
            ctx.retained_units.push_back(u);
        } else {
            pool.push_back(&u);
        }
    }
    if (pool.empty()) return ctx;

    std::vector<double> scores(pool.size(), 0.0);
    bool scored = false;
    if (embedder != nullptr) {
        try {
            std::vector<std::string> texts;
            texts.reserve(pool.size() + 1);
            texts.push_back(question);
            for (const auto* u : pool) texts.push_back(unit_embedding_text(*u));
            std::vector<std::vector<double>> vecs = embedder->embed(texts);
            const std::vector<double>& q = vecs[0];
            for (size_t i = 0; i < pool.size(); ++i) {
                double dot = 0.0;
                for (size_t d = 0; d < q.size(); ++d) dot += q[d] * vecs[i + 1][d];
                scores[i] = dot;
            }
            scored = true;
        } catch (const EndpointError&) {
            scored = false;
        }
    }
    if (!scored) {
        ctx.degraded = true;
        for (size_t i = 0; i < pool.size(); ++i)
            scores[i] = lexical_overlap(question, unit_embedding_text(*pool[i]));
    }

    std::vector<size_t> order(pool.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return pool[a]->identifier < pool[b]->identifier;
    });
    const size_t take = std::min<size_t>(k, pool.size());
    for (size_t i = 0; i < take; ++i) ctx.retrieved_units.push_back(*pool[order[i]]);
    return ctx;
}

namespace {

std::string render_units(const DatabaseProfile& profile,
                         const std::vector<const SchemaUnit*>& kept) {
    std::unordered_map<std::string, const SchemaUnit*> by_id;
    for (const auto* u : kept) by_id.emplace(u->identifier, u);

    std::string out;
    for (const auto& t : profile.tables) {
        const SchemaUnit* table_unit = nullptr;
        if (auto it = by_id.find(t.name); it != by_id.end() && it->second->kind == UnitKind::table)
            table_unit = it->second;
        std::vector<const ColumnProfile*> cols;
        for (const auto& c : t.columns) {
            if (by_id.count(t.name + "." + c.column)) cols.push_back(&c);
        }
        if (table_unit == nullptr && cols.empty()) continue;

        out += "table " + t.name;
        if (table_unit != nullptr && !table_unit->description.empty())
            out += ": " + table_unit->description;
        out += "\n";
        for (const auto* c : cols) {
            const SchemaUnit* u = by_id.at(t.name + "." + c->column);
            out += "  " + c->column + " (" +
                   (c->declared_type.empty() ? "any" : c->declared_type) + ")";
            if (!u->description.empty()) out += ": " + u->description;
            if (!u->exemplars_rendered.empty()) out += " -- examples: " + u->exemplars_rendered;
            out += "\n";
        }
        for (const auto& fk : profile.foreign_keys) {
            if (fk.from_table != t.name) continue;
            out += "  fk: " + fk.from_table + "." + fk.from_column + " -> " + fk.to_table + "." +
                   fk.to_column + "\n";
        }
    }
    return out;
}

}  // namespace

std::string render_context(const SchemaContext& ctx, const DatabaseProfile& profile) {
    std::vector<const SchemaUnit*> kept;
    for (const auto& u : ctx.retained_units) kept.push_back(&u);
    for (const auto& u : ctx.retrieved_units) kept.push_back(&u);
    return render_units(profile, kept);
}

std::string render_profile(const DatabaseProfile& profile,
                           const std::vector<SchemaUnit>& units) {
    std::vector<const SchemaUnit*> kept;
    kept.reserve(units.size());
    for (const auto& u : units) kept.push_back(&u);
    return render_units(profile, kept);
}

}  // namespace sqlrl
