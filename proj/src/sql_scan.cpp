#include "sqlrl/sql_scan.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_set>
#include <vector>

namespace sqlrl {

namespace {

struct Token {
    enum Kind { kWord, kQuotedIdent, kString, kNumber, kPunct };
    Kind kind;
    std::string text;   // raw for idents, upper-cased copy in `upper`
    std::string upper;  // only for kWord
    size_t pos = 0;
    int depth = 0;      // paren depth at the token
};

std::string upper_copy(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    return out;
}

bool is_word_start(char c) {
    return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
}

bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}

std::vector<Token> tokenize(std::string_view sql) {
    std::vector<Token> out;
    size_t i = 0;
    int depth = 0;
    const size_t n = sql.size();
    while (i < n) {
        char c = sql[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        if (c == '-' && i + 1 < n && sql[i + 1] == '-') {
            while (i < n && sql[i] != '\n') ++i;
            continue;
        }
        if (c == '/' && i + 1 < n && sql[i + 1] == '*') {
            size_t start = i;
            i += 2;
            while (i + 1 < n && !(sql[i] == '*' && sql[i + 1] == '/')) ++i;
            if (i + 1 >= n) throw SqlScanError("unterminated comment", start);
            i += 2;
            continue;
        }
        if (c == '\'') {
            size_t start = i;
            ++i;
            std::string text;
            while (true) {
                if (i >= n) throw SqlScanError("unterminated string literal", start);
                if (sql[i] == '\'') {
                    if (i + 1 < n && sql[i + 1] == '\'') {
                        text.push_back('\'');
                        i += 2;
                        continue;
                    }
                    ++i;
                    break;
                }
                text.push_back(sql[i++]);
            }
            out.push_back({Token::kString, text, "", start, depth});
            continue;
        }
        if (c == '"' || c == '`' || c == '[') {
            size_t start = i;
            char close = c == '[' ? ']' : c;
            ++i;
            std::string text;
            while (true) {
                if (i >= n) throw SqlScanError("unterminated quoted identifier", start);
                if (sql[i] == close) {
                    if (close != ']' && i + 1 < n && sql[i + 1] == close) {
                        text.push_back(close);
                        i += 2;
                        continue;
                    }
                    ++i;
                    break;
                }
                text.push_back(sql[i++]);
            }
            out.push_back({Token::kQuotedIdent, text, "", start, depth});
            continue;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) ||
            (c == '.' && i + 1 < n && std::isdigit(static_cast<unsigned char>(sql[i + 1])))) {
            size_t start = i;
            std::string text;
            while (i < n && (std::isalnum(static_cast<unsigned char>(sql[i])) || sql[i] == '.' ||
                             ((sql[i] == '+' || sql[i] == '-') && i > start &&
                              (sql[i - 1] == 'e' || sql[i - 1] == 'E')))) {
                text.push_back(sql[i++]);
            }
            out.push_back({Token::kNumber, text, "", start, depth});
            continue;
        }
        if (is_word_start(c)) {
            size_t start = i;
            std::string text;
            while (i < n && is_word_char(sql[i])) text.push_back(sql[i++]);
            Token t{Token::kWord, text, upper_copy(text), start, depth};
            out.push_back(std::move(t));
            continue;
        }
        if (c == '(') {
            out.push_back({Token::kPunct, "(", "", i, depth});
            ++depth;
            ++i;
            continue;
        }
        if (c == ')') {
            if (depth == 0) throw SqlScanError("unbalanced ')'", i);
            --depth;
            out.push_back({Token::kPunct, ")", "", i, depth});
            ++i;
            continue;
        }
        out.push_back({Token::kPunct, std::string(1, c), "", i, depth});
        ++i;
    }
    if (depth != 0) throw SqlScanError("unbalanced '('", n);
    return out;
}

bool word_is(const Token& t, const char* kw) {
    return t.kind == Token::kWord && t.upper == kw;
}

const std::unordered_set<std::string>& reserved_words() {
    static const std::unordered_set<std::string> kSet = {
        "SELECT",  "WHERE",  "GROUP",     "ORDER", "BY",      "HAVING", "LIMIT",
        "OFFSET",  "UNION",  "INTERSECT", "EXCEPT", "JOIN",   "ON",     "USING",
        "AS",      "AND",    "OR",        "NOT",   "IN",      "EXISTS", "CASE",
        "WHEN",    "THEN",   "ELSE",      "END",   "LEFT",    "RIGHT",  "FULL",
        "INNER",   "OUTER",  "CROSS",     "NATURAL", "WITH",  "RECURSIVE",
        "VALUES",  "DISTINCT", "ALL",     "SET",   "WINDOW", "FROM"};
    return kSet;
}

// Names bound by WITH clauses; they are not physical tables.
std::unordered_set<std::string> collect_cte_names(const std::vector<Token>& toks) {
    std::unordered_set<std::string> names;
    for (size_t i = 0; i < toks.size(); ++i) {
        if (!word_is(toks[i], "WITH")) continue;
        size_t j = i + 1;
        if (j < toks.size() && word_is(toks[j], "RECURSIVE")) ++j;
        while (j < toks.size()) {
            if (toks[j].kind != Token::kWord && toks[j].kind != Token::kQuotedIdent) break;
            std::string lowered = toks[j].text;
            std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                           [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
            names.insert(lowered);
            ++j;
            auto skip_parens = [&]() {
                if (j < toks.size() && toks[j].kind == Token::kPunct && toks[j].text == "(") {
                    int base = toks[j].depth;
                    ++j;
                    while (j < toks.size() &&
                           !(toks[j].kind == Token::kPunct && toks[j].text == ")" &&
                             toks[j].depth == base)) {
                        ++j;
                    }
                    if (j < toks.size()) ++j;
                }
            };
            skip_parens();  // optional column list
            if (j < toks.size() && word_is(toks[j], "AS")) ++j;
            skip_parens();  // CTE body
            if (j < toks.size() && toks[j].kind == Token::kPunct && toks[j].text == ",") {
                ++j;
                continue;
            }
            break;
        }
    }
    return names;
}

}  // namespace

bool has_top_level_order_by(std::string_view sql) {
    std::vector<Token> toks;
    try {
        toks = tokenize(sql);
    } catch (const SqlScanError&) {
        return false;
    }
    for (size_t i = 0; i + 1 < toks.size(); ++i) {
        if (toks[i].depth == 0 && word_is(toks[i], "ORDER") && word_is(toks[i + 1], "BY")) {
            return true;
        }
    }
    return false;
}

StructuralSignature decompose_sql(const std::string& sql) {
    std::vector<Token> toks = tokenize(sql);
    if (toks.empty()) throw SqlScanError("empty statement", 0);

    const auto cte_names = collect_cte_names(toks);
    static const std::unordered_set<std::string> kAggregates = {
        "COUNT", "SUM", "AVG", "MIN", "MAX", "TOTAL", "GROUP_CONCAT"};
    static const std::unordered_set<std::string> kFromTerminators = {
        "WHERE", "GROUP", "HAVING", "ORDER", "LIMIT", "OFFSET",
        "UNION", "INTERSECT", "EXCEPT", "WINDOW", "SELECT"};

    StructuralSignature sig;
    std::vector<int> select_stack;  // paren depth per enclosing SELECT

    struct FromState {
        int depth;
        bool expect_table;
    };
    std::vector<FromState> from_stack;

    auto current_depth = [&](size_t i) { return toks[i].depth; };

    for (size_t i = 0; i < toks.size(); ++i) {
        const Token& t = toks[i];

        // Close FROM clauses left behind by parenthesized subqueries.
        while (!from_stack.empty() && t.depth < from_stack.back().depth) {
            from_stack.pop_back();
        }

        if (t.kind == Token::kWord) {
            const std::string& kw = t.upper;
            if (kw == "SELECT") {
                while (!select_stack.empty() && select_stack.back() >= t.depth) {
                    select_stack.pop_back();
                }
                select_stack.push_back(t.depth);
                sig.nesting_depth = std::max(sig.nesting_depth,
                                             static_cast<int>(select_stack.size()));
            }
            if (!from_stack.empty() && from_stack.back().depth == t.depth &&
                kFromTerminators.count(kw)) {
                from_stack.pop_back();
            }
            if (kw == "FROM") {
                from_stack.push_back({t.depth, true});
                continue;
            }
            if (kw == "JOIN") {
                ++sig.join_count;
                if (!from_stack.empty()) from_stack.back().expect_table = true;
                continue;
            }
            if (kw == "GROUP" && i + 1 < toks.size() && word_is(toks[i + 1], "BY")) {
                sig.has_group_by = true;
            }
            if (kw == "ORDER" && i + 1 < toks.size() && word_is(toks[i + 1], "BY")) {
                sig.has_order_limit = true;
            }
            if (kw == "LIMIT") sig.has_order_limit = true;
            if (kw == "UNION" || kw == "INTERSECT" || kw == "EXCEPT") sig.has_set_op = true;
            if (kAggregates.count(kw) && i + 1 < toks.size() &&
                toks[i + 1].kind == Token::kPunct && toks[i + 1].text == "(") {
                sig.has_aggregate = true;
            }
        }

        // Table name positions inside a FROM list.
        if (!from_stack.empty() && from_stack.back().expect_table &&
            from_stack.back().depth == t.depth) {
            if (t.kind == Token::kPunct && t.text == "(") {
                from_stack.back().expect_table = false;  // subquery source
                continue;
            }
            bool nameish = t.kind == Token::kQuotedIdent ||
                           (t.kind == Token::kWord && !reserved_words().count(t.upper));
            if (nameish) {
                std::string name = t.text;
                size_t j = i;
                while (j + 2 < toks.size() && toks[j + 1].kind == Token::kPunct &&
                       toks[j + 1].text == "." &&
                       (toks[j + 2].kind == Token::kWord ||
                        toks[j + 2].kind == Token::kQuotedIdent)) {
                    name = toks[j + 2].text;
                    j += 2;
                }
                bool is_function_call = j + 1 < toks.size() &&
                                        toks[j + 1].kind == Token::kPunct &&
                                        toks[j + 1].text == "(";
                if (!is_function_call) {
                    std::string lowered = name;
                    std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                                   [](unsigned char ch) {
                                       return static_cast<char>(std::tolower(ch));
                                   });
                    if (!cte_names.count(lowered)) sig.tables_used.insert(lowered);
                }
                from_stack.back().expect_table = false;
                i = j;
                continue;
            }
        }

        // Comma within a FROM list is an implicit join.
        if (!from_stack.empty() && t.kind == Token::kPunct && t.text == "," &&
            from_stack.back().depth == current_depth(i) && !from_stack.back().expect_table) {
            ++sig.join_count;
            from_stack.back().expect_table = true;
        }
    }

    sig.has_subquery = sig.nesting_depth >= 2;
    sig.degenerate = sig.tables_used.empty();
    return sig;
}

int complexity_score(const StructuralSignature& sig) {
    int flags = static_cast<int>(sig.has_aggregate) + static_cast<int>(sig.has_group_by) +
                static_cast<int>(sig.has_subquery) + static_cast<int>(sig.has_set_op) +
                static_cast<int>(sig.has_order_limit);
    return sig.join_count + sig.nesting_depth + flags;
}

}  // namespace sqlrl
