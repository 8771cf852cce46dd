#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sqlrl/cell.hpp"
#include "sqlrl/model_client.hpp"
#include "sqlrl/sqlexec.hpp"

namespace sqlrl {

inline constexpr int kDefaultExemplars = 3;
inline constexpr int kDefaultRetrievalK = 20;
inline constexpr int kDefaultDescribeParallelism = 8;

struct ColumnProfile {
    std::string table;
    std::string column;
    std::string declared_type;
    int64_t distinct_count = 0;
    double null_fraction = 0.0;  // in [0,1]
    std::optional<Cell> min_value;
    std::optional<Cell> max_value;
    std::vector<Cell> exemplars;  // most frequent non-null values, ties by value
};

struct TableProfile {
    std::string name;
    int64_t row_count = 0;
    std::vector<ColumnProfile> columns;
};

struct ForeignKey {
    std::string from_table;
    std::string from_column;
    std::string to_table;
    std::string to_column;
};

struct DatabaseProfile {
    std::string db_id;
    std::vector<TableProfile> tables;
    std::vector<ForeignKey> foreign_keys;
    std::vector<std::pair<std::string, std::string>> primary_keys;  // (table, column)
};

class ProfileError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// One ColumnProfile per physical column; tables in name order, columns in
// declaration order. Throws ProfileError on any execution failure.
DatabaseProfile build_profile(Sandbox& handle, const std::string& db_id,
                              int exemplars = kDefaultExemplars);

// JSON cache, written to <cache_dir>/<db_id>.profile.json.
std::string profile_to_json(const DatabaseProfile& profile);
DatabaseProfile profile_from_json(const std::string& json_text);
std::string save_profile(const DatabaseProfile& profile, const std::string& cache_dir);
std::optional<DatabaseProfile> load_cached_profile(const std::string& cache_dir,
                                                   const std::string& db_id);

// Harvested metadata: rows of (table, column, description); an empty column
// names a table-level description. Accepts CSV (optional header, optional
// UTF-8 BOM) and JSON arrays of objects with those three fields.
struct MetadataEntry {
    std::string table;
    std::string column;  // empty for table-level entries
    std::string description;
};

struct MetadataFile {
    std::vector<MetadataEntry> entries;

    // Case-insensitive lookup. Column empty -> table description.
    std::optional<std::string> find(const std::string& table, const std::string& column) const;
};

MetadataFile load_metadata(const std::string& path);  // throws std::runtime_error

enum class UnitKind { table, column };
enum class UnitSource { harvested, generated };

struct SchemaUnit {
    UnitKind kind = UnitKind::column;
    std::string identifier;  // "t" or "t.c"
    std::string description;
    UnitSource source = UnitSource::generated;
    std::string exemplars_rendered;  // "" for table units
};

// Deterministic last-resort description when the endpoint is unreachable.
std::string template_description(const SchemaUnit& unit, const DatabaseProfile& profile);

// One unit per table and per column, profile order. Harvested descriptions
// win and cost zero endpoint calls; the rest are generated with at most
// `parallelism` concurrent calls, falling back to template_description per
// unit when the endpoint keeps failing.
std::vector<SchemaUnit> generate_descriptions(const DatabaseProfile& profile,
                                              const std::optional<MetadataFile>& harvested,
                                              ModelClient* client,
                                              int parallelism = kDefaultDescribeParallelism);

struct SchemaContext {
    std::vector<SchemaUnit> retained_units;   // PK and FK endpoint columns, never pruned
    std::vector<SchemaUnit> retrieved_units;  // top-k of the pool, rank order
    int k = kDefaultRetrievalK;
    bool degraded = false;  // true when the lexical fallback scored retrieval
};

// Jaccard over case-folded alnum tokens; the retrieval score when no
// embedder is reachable.
double lexical_overlap(const std::string& a, const std::string& b);

// embedder == nullptr forces the lexical fallback (degraded context).
SchemaContext prune(const std::vector<SchemaUnit>& units, const DatabaseProfile& profile,
                    const std::string& question, ModelClient* embedder, int k);

// Deterministic prompt block: per table a description line, kept columns as
// "  name (type): description -- examples: v1, v2", then foreign-key lines.
std::string render_context(const SchemaContext& ctx, const DatabaseProfile& profile);

// Full schema rendering with no pruning, used by synthesis prompts and as
// the eval context when no embedder is configured.
std::string render_profile(const DatabaseProfile& profile, const std::vector<SchemaUnit>& units);

}  // namespace sqlrl
