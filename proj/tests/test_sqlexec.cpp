#include <chrono>
#include <fstream>

#include <doctest.h>

#include "helpers.hpp"
#include "sqlrl/digest.hpp"
#include "sqlrl/fixtures.hpp"
#include "sqlrl/sqlexec.hpp"

using namespace sqlrl;
using testutil::TempDir;

TEST_CASE("execute returns materialized rows for a trivial select") {
    TempDir tmp;
    Sandbox db(fixtures::write_concerts_db(tmp.str()));
    ExecOutcome out = db.execute("SELECT 1");
    REQUIRE(out.ok());
    REQUIRE(out.table.column_names.size() == 1);
    REQUIRE(out.table.rows.size() == 1);
    CHECK(std::get<int64_t>(out.table.rows[0][0]) == 1);
}

TEST_CASE("syntax errors come back verbatim and non-empty") {
    TempDir tmp;
    Sandbox db(fixtures::write_concerts_db(tmp.str()));
    ExecOutcome out = db.execute("SELEC 1");
    REQUIRE(out.status == ExecStatus::sql_error);
    CHECK(!out.message.empty());
}

TEST_CASE("a missing database file refuses to open") {
    TempDir tmp;
    CHECK_THROWS_AS(Sandbox(tmp.sub("nope.sqlite")), SandboxError);
}

TEST_CASE("a corrupt database file surfaces as an error") {
    TempDir tmp;
    const std::string path = tmp.sub("garbage.sqlite");
    {
        std::ofstream f(path, std::ios::binary);
        f << "this is not a database, it only pretends";
    }
    bool rejected = false;
    try {
        Sandbox db(path);
        rejected = !db.execute("SELECT 1").ok();
    } catch (const SandboxError&) {
        rejected = true;
    }
    CHECK(rejected);
}

TEST_CASE("writes are rejected and leave the file untouched") {
    TempDir tmp;
    const std::string path = fixtures::write_concerts_db(tmp.str());
    const std::string before = sha256_file(path);
    Sandbox db(path);

    for (const char* sql : {"INSERT INTO singer VALUES (99, 'X', 'Y', 1)",
                            "UPDATE singer SET age = 1", "DELETE FROM singer",
                            "DROP TABLE singer", "CREATE TABLE t (x INTEGER)"}) {
        ExecOutcome out = db.execute(sql);
        CHECK(out.status == ExecStatus::write_rejected);
    }
    CHECK(db.execute("SELECT COUNT(*) FROM singer").ok());
    CHECK(sha256_file(path) == before);
}

TEST_CASE("runaway queries hit the wall-clock ceiling") {
    TempDir tmp;
    Sandbox db(fixtures::write_concerts_db(tmp.str()));
    const auto t0 = std::chrono::steady_clock::now();
    ExecOutcome out = db.execute(
        "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) "
        "SELECT COUNT(*) FROM c",
        100);
    const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - t0)
                             .count();
    CHECK(out.status == ExecStatus::timeout);
    CHECK(elapsed < 100 + Sandbox::kTimeoutGraceMs + 2000);  // generous CI slack
    // The handle survives a timeout.
    CHECK(db.execute("SELECT 1").ok());
}

TEST_CASE("normalize is invariant under row permutation only when insensitive") {
    ResultTable t;
    t.column_names = {"a"};
    t.rows = {{Cell{int64_t{1}}}, {Cell{int64_t{2}}}};
    ResultTable r;
    r.column_names = {"a"};
    r.rows = {{Cell{int64_t{2}}}, {Cell{int64_t{1}}}};

    EquivalencePolicy bag;
    CHECK(normalize(t, bag) == normalize(r, bag));
    EquivalencePolicy ordered;
    ordered.order_sensitive = true;
    CHECK(!(normalize(t, ordered) == normalize(r, ordered)));
}

TEST_CASE("reals inside tolerance of an integer fingerprint as that integer") {
    ResultTable a;
    a.column_names = {"v"};
    a.rows = {{Cell{2.0000000001}}};
    ResultTable b;
    b.column_names = {"v"};
    b.rows = {{Cell{int64_t{2}}}};
    EquivalencePolicy p;
    CHECK(normalize(a, p) == normalize(b, p));

    a.rows = {{Cell{2.5}}};
    CHECK(!(normalize(a, p) == normalize(b, p)));
}

TEST_CASE("equivalence rejects duplicates, errors and column drift") {
    auto table = [](std::vector<int64_t> vals) {
        ResultTable t;
        t.column_names = {"x"};
        for (int64_t v : vals) t.rows.push_back({Cell{v}});
        return ExecOutcome::make_ok(std::move(t));
    };
    EquivalencePolicy p;

    SUBCASE("identity") { CHECK(equivalent(table({1}), table({1}), p).equivalent); }
    SUBCASE("duplicate row counts matter") {
        EquivalenceVerdict v = equivalent(table({1, 1}), table({1}), p);
        CHECK(!v.equivalent);
        CHECK(v.reason == "row multiset differs");
    }
    SUBCASE("errors never match errors") {
        EquivalenceVerdict v =
            equivalent(ExecOutcome::make_error("x"), ExecOutcome::make_error("x"), p);
        CHECK(!v.equivalent);
        CHECK(v.reason == "both errored");
    }
    SUBCASE("timeouts never match") {
        CHECK(!equivalent(ExecOutcome::make_timeout(), table({1}), p).equivalent);
        CHECK(!equivalent(table({1}), ExecOutcome::make_timeout(), p).equivalent);
    }
    SUBCASE("column counts gate everything") {
        ResultTable two;
        two.column_names = {"x", "y"};
        two.rows = {{Cell{int64_t{1}}, Cell{int64_t{1}}}};
        EquivalenceVerdict v = equivalent(table({1}), ExecOutcome::make_ok(two), p);
        CHECK(!v.equivalent);
        CHECK(v.reason == "column count differs");
    }
}

TEST_CASE("equivalent agrees with the brute-force matcher on random tables") {
    testutil::TableGen gen(20240817);
    EquivalencePolicy p;
    int trials = 0, disagreements = 0;
    for (int i = 0; i < 1000; ++i) {
        auto [ta, tb] = gen.random_pair();
        ExecOutcome a = ExecOutcome::make_ok(ta);
        ExecOutcome b = ExecOutcome::make_ok(tb);
        const bool impl = equivalent(a, b, p).equivalent;
        const bool oracle = testutil::oracle_equivalent(a, b, p);
        ++trials;
        if (impl != oracle) ++disagreements;
    }
    CHECK(trials == 1000);
    CHECK(disagreements == 0);
}

TEST_CASE("fingerprints survive a thousand shuffles") {
    testutil::TableGen gen(7);
    EquivalencePolicy p;
    for (int i = 0; i < 1000; ++i) {
        ResultTable t = gen.random_table();
        Fingerprint base = normalize(t, p);
        CHECK(normalize(gen.shuffled(t), p) == base);
    }
}

TEST_CASE("execution accuracy is the equivalent fraction") {
    auto one = [](int64_t v) {
        ResultTable t;
        t.column_names = {"x"};
        t.rows = {{Cell{v}}};
        return ExecOutcome::make_ok(std::move(t));
    };
    EquivalencePolicy p;
    std::vector<OutcomePair> pairs = {
        {one(1), one(1), p}, {one(2), one(2), p}, {one(1), one(2), p}, {one(3), one(4), p}};
    CHECK(execution_accuracy(pairs) == doctest::Approx(0.5));
    CHECK_THROWS_AS(execution_accuracy({}), std::invalid_argument);
}

TEST_CASE("order sensitivity follows the gold query") {
    CHECK(policy_for_gold("SELECT a FROM t ORDER BY a").order_sensitive);
    CHECK(!policy_for_gold("SELECT a FROM t").order_sensitive);
    CHECK(!policy_for_gold("SELECT a FROM (SELECT a FROM t ORDER BY a) sub").order_sensitive);
}

TEST_CASE("db_file_for resolves the published layout") {
    TempDir tmp;
    const std::string path = fixtures::write_concerts_db(tmp.str());
    CHECK(db_file_for(tmp.str(), "concerts") == path);
    CHECK_THROWS_AS(db_file_for(tmp.str(), "absent"), SandboxError);
}
