#include <doctest.h>

#include "sqlrl/sql_scan.hpp"

using namespace sqlrl;

TEST_CASE("top-level order by is found only outside parentheses") {
    CHECK(has_top_level_order_by("SELECT a FROM t ORDER BY a"));
    CHECK(has_top_level_order_by("select a from t order\n by a desc"));
    CHECK(!has_top_level_order_by("SELECT a FROM t"));
    CHECK(!has_top_level_order_by("SELECT a FROM (SELECT a FROM t ORDER BY a) q"));
    CHECK(!has_top_level_order_by("SELECT 'ORDER BY' FROM t"));
    CHECK(!has_top_level_order_by("SELECT a FROM t -- ORDER BY a"));
    CHECK(has_top_level_order_by("SELECT a FROM t /* x */ ORDER BY a LIMIT 3"));
}

TEST_CASE("flat aggregates decompose cleanly") {
    StructuralSignature sig = decompose_sql("SELECT COUNT(*) FROM singer");
    CHECK(sig.tables_used == std::set<std::string>{"singer"});
    CHECK(sig.join_count == 0);
    CHECK(sig.has_aggregate);
    CHECK(!sig.has_group_by);
    CHECK(!sig.has_subquery);
    CHECK(sig.nesting_depth == 1);
    CHECK(!sig.degenerate);
}

TEST_CASE("joins count explicit and comma forms") {
    StructuralSignature sig = decompose_sql(
        "SELECT e.emp_name FROM employee e JOIN department d ON e.dept_id = d.dept_id "
        "WHERE d.dept_name = 'Engineering'");
    CHECK(sig.tables_used == std::set<std::string>{"employee", "department"});
    CHECK(sig.join_count == 1);
    CHECK(!sig.has_aggregate);

    StructuralSignature commas =
        decompose_sql("SELECT * FROM a, b, c WHERE a.x = b.x AND b.y = c.y");
    CHECK(commas.join_count == 2);
    CHECK(commas.tables_used == std::set<std::string>{"a", "b", "c"});
}

TEST_CASE("subqueries raise depth and set the flag") {
    StructuralSignature sig = decompose_sql(
        "SELECT emp_name FROM employee WHERE dept_id = "
        "(SELECT dept_id FROM department WHERE dept_name = 'Engineering')");
    CHECK(sig.has_subquery);
    CHECK(sig.nesting_depth == 2);
    CHECK(sig.tables_used == std::set<std::string>{"employee", "department"});
}

TEST_CASE("group by, set ops and order-limit flags") {
    CHECK(decompose_sql("SELECT country, COUNT(*) FROM singer GROUP BY country").has_group_by);
    CHECK(decompose_sql("SELECT a FROM t UNION SELECT a FROM u").has_set_op);
    CHECK(decompose_sql("SELECT a FROM t ORDER BY a LIMIT 1").has_order_limit);
    CHECK(!decompose_sql("SELECT a FROM t").has_order_limit);
}

TEST_CASE("cte names are not physical tables") {
    StructuralSignature sig = decompose_sql(
        "WITH top_s AS (SELECT * FROM singer WHERE age > 30) "
        "SELECT name FROM top_s");
    CHECK(sig.tables_used == std::set<std::string>{"singer"});
}

TEST_CASE("degenerate and malformed inputs") {
    CHECK(decompose_sql("SELECT 1").degenerate);
    CHECK_THROWS_AS(decompose_sql(""), SqlScanError);
    CHECK_THROWS_AS(decompose_sql("SELECT 'oops FROM t"), SqlScanError);
    CHECK_THROWS_AS(decompose_sql("SELECT a FROM (t"), SqlScanError);
}

TEST_CASE("complexity orders simple under join under nested") {
    const int flat = complexity_score(decompose_sql("SELECT name FROM singer"));
    const int join = complexity_score(
        decompose_sql("SELECT s.name FROM singer s JOIN concert c ON c.singer_id = s.singer_id"));
    const int nested = complexity_score(decompose_sql(
        "SELECT name FROM singer WHERE singer_id IN "
        "(SELECT singer_id FROM concert GROUP BY singer_id ORDER BY COUNT(*) DESC LIMIT 1)"));
    CHECK(flat < join);
    CHECK(join < nested);
}
