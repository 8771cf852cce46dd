#pragma once

#include <cstddef>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sqlrl {

class SqlScanError : public std::runtime_error {
public:
    SqlScanError(const std::string& what, size_t position)
        : std::runtime_error(what + " at offset " + std::to_string(position)),
          position_(position) {}
    size_t position() const { return position_; }

private:
    size_t position_;
};

// Lexical check for an ORDER BY on the outermost statement (outside any
// parentheses, strings and comments skipped). Drives order-sensitive
// result comparison; no full parse needed for this flag.
bool has_top_level_order_by(std::string_view sql);

// Shape summary of a query, computed by clause-level scanning.
struct StructuralSignature {
    std::set<std::string> tables_used;  // lower-cased physical table names
    int join_count = 0;                 // explicit JOINs plus FROM-list commas
    bool has_aggregate = false;
    bool has_group_by = false;
    bool has_subquery = false;
    bool has_set_op = false;
    bool has_order_limit = false;
    int nesting_depth = 0;              // max SELECT nesting, 1 for a flat query
    bool degenerate = false;            // no table source, e.g. SELECT 1

    bool operator==(const StructuralSignature&) const = default;
};

// Throws SqlScanError on empty input, unterminated strings/comments or
// unbalanced parentheses. CTE names are excluded from tables_used.
StructuralSignature decompose_sql(const std::string& sql);

// Coarse ordering key used as a documented tiebreak when no judge is
// reachable: joins + nesting + structural flags.
int complexity_score(const StructuralSignature& sig);

}  // namespace sqlrl
