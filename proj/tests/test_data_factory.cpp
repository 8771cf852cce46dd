#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include <doctest.h>
#include <json.hpp>

#include "helpers.hpp"
#include "sqlite_util.hpp"
#include "sqlrl/data_factory.hpp"
#include "sqlrl/digest.hpp"
#include "sqlrl/fixtures.hpp"
#include "sqlrl/schema_context.hpp"

using namespace sqlrl;
using testutil::TempDir;

namespace {

int64_t scalar(Sandbox& h, const std::string& sql) {
    ExecOutcome out = h.execute(sql);
    REQUIRE(out.ok());
    return std::get<int64_t>(out.table.rows.at(0).at(0));
}

ModelClient make_client(std::shared_ptr<ScriptedTransport> transport, const char* name,
                        int max_retries = 0) {
    EndpointConfig ep;
    ep.name = name;
    ep.max_retries = max_retries;
    return ModelClient(ep, std::move(transport));
}

SynthSample sample_with(const std::string& id, const std::string& question,
                        const std::string& sql) {
    SynthSample s;
    s.sample_id = id;
    s.db_id = "concerts";
    s.question = question;
    s.gold_sql = sql;
    s.signature = decompose_sql(sql);
    return s;
}

}  // namespace

TEST_CASE("augmentation is deterministic, schema-preserving and referentially sound") {
    TempDir tmp;
    const std::string src = fixtures::write_concerts_db(tmp.sub("db"));
    const std::string aug1 = tmp.sub("aug1.sqlite");
    const std::string aug2 = tmp.sub("aug2.sqlite");

    augment_database(src, 42, aug1);
    augment_database(src, 42, aug2);
    CHECK(sha256_file(aug1) == sha256_file(aug2));  // same seed, same bytes

    Sandbox orig(src), aug(aug1);

    // identical table set and column layout
    const char* tables_sql =
        "SELECT name FROM sqlite_master WHERE type='table' AND name NOT LIKE 'sqlite_%' "
        "ORDER BY name";
    ExecOutcome t_orig = orig.execute(tables_sql);
    ExecOutcome t_aug = aug.execute(tables_sql);
    CHECK(equivalent(t_aug, t_orig, EquivalencePolicy{}).equivalent);
    for (const char* t : {"stadium", "singer", "concert"}) {
        ExecOutcome c_orig = orig.execute(std::string("SELECT * FROM ") + t + " LIMIT 0");
        ExecOutcome c_aug = aug.execute(std::string("SELECT * FROM ") + t + " LIMIT 0");
        CHECK(c_orig.table.column_names == c_aug.table.column_names);
    }

    // row counts moved by the planned +-20% (at least one row on this scale)
    for (const char* t : {"stadium", "singer", "concert"}) {
        const int64_t before = scalar(orig, std::string("SELECT count(*) FROM ") + t);
        const int64_t after = scalar(aug, std::string("SELECT count(*) FROM ") + t);
        CHECK(after != before);
        CHECK(after >= before - std::max<int64_t>(1, before / 5));
        CHECK(after <= before + std::max<int64_t>(1, before / 5));
    }

    // jittered numerics stay inside the observed range
    CHECK(scalar(aug, "SELECT min(capacity) FROM stadium") >= 8500);
    CHECK(scalar(aug, "SELECT max(capacity) FROM stadium") <= 15000);
    CHECK(scalar(aug, "SELECT min(year) FROM concert") >= 2019);
    CHECK(scalar(aug, "SELECT max(year) FROM concert") <= 2021);

    // shuffled text stays within the original vocabulary
    ExecOutcome countries = aug.execute("SELECT DISTINCT country FROM singer");
    const std::set<std::string> vocab = {"USA", "China", "Spain", "Russia"};
    for (const auto& row : countries.table.rows)
        CHECK(vocab.count(std::get<std::string>(row[0])) == 1);

    CHECK(fk_orphan_count(src) == 0);
    CHECK(fk_orphan_count(aug1) == 0);

    CHECK_THROWS_AS(augment_database(tmp.sub("missing.sqlite"), 1, tmp.sub("x.sqlite")),
                    AugmentError);
}

TEST_CASE("self-referencing tables augment cleanly, cyclic pairs do not") {
    TempDir tmp;
    SUBCASE("self-reference") {
        const std::string src = tmp.sub("org.sqlite");
        {
            detail::WritableDb db(src);
            db.exec("CREATE TABLE emp (id INTEGER PRIMARY KEY, name TEXT, "
                    "boss_id INTEGER REFERENCES emp(id))");
            db.exec("INSERT INTO emp VALUES (1,'root',NULL),(2,'a',1),(3,'b',1),(4,'c',2),"
                    "(5,'d',2),(6,'e',3)");
        }
        const std::string out = augment_database(src, 9, tmp.sub("org_aug.sqlite"));
        CHECK(fk_orphan_count(out) == 0);
        Sandbox aug(out);
        const int64_t n = scalar(aug, "SELECT count(*) FROM emp");
        CHECK(n >= 5);
        CHECK(n <= 7);
        CHECK(n != 6);
    }
    SUBCASE("two-table cycle") {
        const std::string src = tmp.sub("cycle.sqlite");
        {
            detail::WritableDb db(src);
            db.exec("CREATE TABLE a (id INTEGER PRIMARY KEY, b_id INTEGER REFERENCES b(id))");
            db.exec("CREATE TABLE b (id INTEGER PRIMARY KEY, a_id INTEGER REFERENCES a(id))");
        }
        CHECK_THROWS_WITH_AS(augment_database(src, 1, tmp.sub("cycle_aug.sqlite")),
                             "cyclic foreign-key graph (after dropping self-references)",
                             AugmentError);
    }
}

TEST_CASE("judge verdict parsing") {
    JudgeVerdict all = parse_judge_verdict(
        "question_clear: pass\nschema_grounded: PASS\ngold_correct: pass\nanswerable: pass\n"
        "Looks fine.");
    CHECK(all.all_pass());
    CHECK(all.rationale.find("Looks fine.") != std::string::npos);

    JudgeVerdict one_fail = parse_judge_verdict(
        "question_clear: pass\nschema_grounded: pass\ngold_correct: fail\nanswerable: pass");
    CHECK(!one_fail.all_pass());
    CHECK(!one_fail.gold_correct);
    CHECK(one_fail.question_clear);

    JudgeVerdict missing = parse_judge_verdict("question_clear: pass");
    CHECK(!missing.all_pass());
    CHECK(!missing.answerable);

    CHECK(!parse_judge_verdict("total nonsense").all_pass());
}

TEST_CASE("candidate reply parsing") {
    auto plain = parse_candidate_reply("QUESTION: How many?\nSQL: SELECT count(*) FROM t");
    REQUIRE(plain.has_value());
    CHECK(plain->first == "How many?");
    CHECK(plain->second == "SELECT count(*) FROM t");

    auto fenced = parse_candidate_reply(
        "QUESTION: Names?\nSQL:\n```sql\nSELECT name FROM t\n```\n");
    REQUIRE(fenced.has_value());
    CHECK(fenced->second == "SELECT name FROM t");

    CHECK(!parse_candidate_reply("SQL: SELECT 1").has_value());
    CHECK(!parse_candidate_reply("QUESTION: only a question").has_value());
    CHECK(!parse_candidate_reply("QUESTION: q\nSQL:   ").has_value());
}

TEST_CASE("tournament asks both orders and keeps the consistent winner") {
    SynthSample alpha = sample_with("alpha", "alpha question",
                                    "SELECT count(*) FROM singer");
    SynthSample beta = sample_with("beta", "beta question", "SELECT name FROM stadium");
    SynthSample gamma = sample_with(
        "gamma", "gamma question",
        "SELECT s.name, count(*) FROM singer s JOIN concert c ON c.singer_id = s.singer_id "
        "GROUP BY s.name");

    SUBCASE("single candidate needs no judge") {
        TournamentResult r = tournament_select({alpha}, nullptr, 3);
        CHECK(r.winner.sample_id == "alpha");
        CHECK(r.matches.empty());
    }
    SUBCASE("position-consistent judge") {
        auto transport = std::make_shared<ScriptedTransport>();
        // always picks the letter that labels alpha
        transport->add_rule("A:\nquestion: alpha", {"A"});
        transport->add_rule("B:\nquestion: alpha", {"B"});
        transport->set_default_reply("A");
        ModelClient judge = make_client(transport, "judge");
        TournamentResult r = tournament_select({alpha, beta}, &judge, 17);
        CHECK(r.winner.sample_id == "alpha");
        REQUIRE(r.matches.size() == 1);
        CHECK(r.matches[0].note.empty());
        CHECK(transport->chat_calls() == 2);  // both orders
    }
    SUBCASE("position bias is flagged and the first-listed kept") {
        auto transport = std::make_shared<ScriptedTransport>();
        transport->set_default_reply("A");  // same letter both times: disagreement
        ModelClient judge = make_client(transport, "judge");
        TournamentResult r = tournament_select({alpha, beta}, &judge, 17);
        REQUIRE(r.matches.size() == 1);
        CHECK(r.matches[0].note == "order disagreement, first-listed kept");
        CHECK(r.matches[0].winner_id == r.matches[0].a_id);
    }
    SUBCASE("unreachable judge falls back to structural complexity") {
        TournamentResult r = tournament_select({alpha, beta, gamma}, nullptr, 5);
        CHECK(r.winner.sample_id == "gamma");  // grouped join outranks the flat queries
        REQUIRE(r.matches.size() == 1);
        CHECK(r.matches[0].note.find("judge unreachable") != std::string::npos);
        CHECK(r.matches[0].note.find("highest-complexity fallback") != std::string::npos);

        auto transport = std::make_shared<ScriptedTransport>();
        transport->fail_next(100, /*retryable=*/false);
        ModelClient judge = make_client(transport, "judge");
        TournamentResult r2 = tournament_select({alpha, beta, gamma}, &judge, 5);
        CHECK(r2.winner.sample_id == "gamma");
    }
    SUBCASE("bracket is deterministic per seed") {
        auto run = [&](uint64_t seed) {
            auto transport = std::make_shared<ScriptedTransport>();
            transport->set_default_reply("A");
            ModelClient judge = make_client(transport, "judge");
            TournamentResult r = tournament_select({alpha, beta, gamma}, &judge, seed);
            std::string trace;
            for (const auto& m : r.matches) trace += m.a_id + "|" + m.b_id + ";";
            return trace + r.winner.sample_id;
        };
        CHECK(run(11) == run(11));
    }
    SUBCASE("no candidates is an error") {
        CHECK_THROWS_AS(tournament_select({}, nullptr, 1), std::invalid_argument);
    }
}

namespace {

struct GenCheckFixture {
    TempDir tmp;
    std::unique_ptr<Sandbox> original;
    std::unique_ptr<Sandbox> augmented;
    GenCheckEnv env;

    GenCheckFixture() {
        const std::string src = fixtures::write_concerts_db(tmp.sub("db"));
        const std::string aug = augment_database(src, 7, tmp.sub("aug.sqlite"));
        original = std::make_unique<Sandbox>(src);
        augmented = std::make_unique<Sandbox>(aug);
        env.original = original.get();
        env.augmented = augmented.get();
        env.context_text = "table singer, table stadium, table concert";
        env.tmpl = builtin_prompt_template();
    }
};

std::string submit_reply(const std::string& sql) {
    return "FINAL ANSWER\n```sql\n" + sql + "\n```\n";
}

}  // namespace

TEST_CASE("gen_as_check verifies a dual-execution match in one cycle") {
    GenCheckFixture fx;
    auto policy_t = std::make_shared<ScriptedTransport>();
    policy_t->set_default_reply(submit_reply("SELECT count(singer_id) FROM singer"));
    ModelClient policy = make_client(policy_t, "policy");

    SynthSample s = sample_with("s1", "How many singers are there?",
                                "SELECT count(*) FROM singer");
    SynthSample out = gen_as_check(s, &policy, nullptr, nullptr, 3, fx.env);
    CHECK(out.status == SampleStatus::verified);
    CHECK(out.cycles_used == 1);
    REQUIRE(!out.audit_notes.empty());
    CHECK(out.audit_notes.back() == "cycle 1: execution match on original and augmented");
}

TEST_CASE("a match on the original alone is screened out, not verified") {
    GenCheckFixture fx;
    // literal answer: right on the original database, wrong on the augmented
    auto policy_t = std::make_shared<ScriptedTransport>();
    policy_t->set_default_reply(submit_reply("SELECT 5"));
    ModelClient policy = make_client(policy_t, "policy");

    auto judge_t = std::make_shared<ScriptedTransport>();
    judge_t->set_default_reply(
        "question_clear: pass\nschema_grounded: pass\ngold_correct: fail\nanswerable: pass");
    ModelClient judge = make_client(judge_t, "judge");

    auto regen_t = std::make_shared<ScriptedTransport>();
    regen_t->set_default_reply("cannot help");  // unparsable, so no repair
    ModelClient regen = make_client(regen_t, "regen");

    SynthSample s = sample_with("s2", "How many singers are there?",
                                "SELECT count(*) FROM singer");
    SynthSample out = gen_as_check(s, &policy, &judge, &regen, 2, fx.env);
    CHECK(out.status == SampleStatus::rejected);
    CHECK(out.cycles_used == 2);
    bool screened = false, budget = false;
    for (const auto& note : out.audit_notes) {
        if (note.find("accidental correctness") != std::string::npos) screened = true;
        if (note == "no verification within the cycle budget") budget = true;
    }
    CHECK(screened);
    CHECK(budget);
}

TEST_CASE("judge confirmation rescues a model miss") {
    GenCheckFixture fx;
    auto policy_t = std::make_shared<ScriptedTransport>();
    policy_t->set_default_reply(submit_reply("SELECT count(*) FROM stadium"));  // wrong everywhere
    ModelClient policy = make_client(policy_t, "policy");

    auto judge_t = std::make_shared<ScriptedTransport>();
    judge_t->set_default_reply(
        "question_clear: pass\nschema_grounded: pass\ngold_correct: pass\nanswerable: pass");
    ModelClient judge = make_client(judge_t, "judge");

    SynthSample s = sample_with("s3", "How many singers are there?",
                                "SELECT count(*) FROM singer");
    SynthSample out = gen_as_check(s, &policy, &judge, nullptr, 3, fx.env);
    CHECK(out.status == SampleStatus::verified);
    CHECK(out.audit_notes.back() == "cycle 1: model-miss, gold confirmed");
}

TEST_CASE("a judge-rejected gold is regenerated and re-verified") {
    GenCheckFixture fx;
    // the policy consistently answers with the AVG query
    auto policy_t = std::make_shared<ScriptedTransport>();
    policy_t->set_default_reply(submit_reply("SELECT avg(capacity) FROM stadium"));
    ModelClient policy = make_client(policy_t, "policy");

    auto judge_t = std::make_shared<ScriptedTransport>();
    judge_t->set_default_reply(
        "question_clear: pass\nschema_grounded: pass\ngold_correct: fail\nanswerable: pass");
    ModelClient judge = make_client(judge_t, "judge");

    auto regen_t = std::make_shared<ScriptedTransport>();
    regen_t->set_default_reply(
        "QUESTION: What is the average stadium capacity?\n"
        "SQL: SELECT avg(capacity) FROM stadium");
    ModelClient regen = make_client(regen_t, "regen");

    SynthSample s = sample_with("s4", "What is the average stadium capacity?",
                                "SELECT max(capacity) FROM stadium");  // wrong gold
    SynthSample out = gen_as_check(s, &policy, &judge, &regen, 3, fx.env);
    CHECK(out.status == SampleStatus::verified);
    CHECK(out.cycles_used == 2);
    CHECK(out.gold_sql == "SELECT avg(capacity) FROM stadium");
    bool regenerated = false;
    for (const auto& note : out.audit_notes)
        if (note == "cycle 1: gold regenerated") regenerated = true;
    CHECK(regenerated);
}

TEST_CASE("missing endpoints reject the sample with a reason") {
    GenCheckFixture fx;
    SynthSample s = sample_with("s5", "q", "SELECT count(*) FROM singer");

    SUBCASE("no policy") {
        SynthSample out = gen_as_check(s, nullptr, nullptr, nullptr, 2, fx.env);
        CHECK(out.status == SampleStatus::rejected);
        CHECK(out.audit_notes.back().find("no policy endpoint") != std::string::npos);
    }
    SUBCASE("no judge after a miss") {
        auto policy_t = std::make_shared<ScriptedTransport>();
        policy_t->set_default_reply(submit_reply("SELECT count(*) FROM stadium"));
        ModelClient policy = make_client(policy_t, "policy");
        SynthSample out = gen_as_check(s, &policy, nullptr, nullptr, 2, fx.env);
        CHECK(out.status == SampleStatus::rejected);
        CHECK(out.audit_notes.back().find("judge unreachable") != std::string::npos);
    }
    SUBCASE("bad cycle budget") {
        CHECK_THROWS_AS(gen_as_check(s, nullptr, nullptr, nullptr, 0, fx.env),
                        std::invalid_argument);
    }
    SUBCASE("missing handles") {
        GenCheckEnv bare;
        CHECK_THROWS_AS(gen_as_check(s, nullptr, nullptr, nullptr, 1, bare),
                        std::invalid_argument);
    }
}

TEST_CASE("synthesize runs the whole pipeline against scripted endpoints") {
    TempDir tmp;
    const std::string db_root = tmp.sub("db");
    fixtures::write_concerts_db(db_root);

    auto gen_t = std::make_shared<ScriptedTransport>();
    gen_t->add_rule("Target shape: a single-table aggregate", {"not parsable at all"});
    gen_t->add_rule("Target shape: a join between two tables",
                    {"QUESTION: What is the total attendance at North Arena concerts?\n"
                     "SQL: SELECT sum(c.attendance) FROM concert c JOIN stadium s "
                     "ON c.stadium_id = s.stadium_id WHERE s.name = 'North Arena'"});
    ModelClient generator = make_client(gen_t, "generator");

    auto judge_t = std::make_shared<ScriptedTransport>();
    judge_t->add_rule("Audit this synthesized",
                      {"question_clear: pass\nschema_grounded: pass\ngold_correct: pass\n"
                       "answerable: pass"});
    judge_t->set_default_reply("A");
    ModelClient judge = make_client(judge_t, "judge");

    auto policy_t = std::make_shared<ScriptedTransport>();
    policy_t->set_default_reply(
        submit_reply("SELECT sum(c.attendance) FROM concert c JOIN stadium s "
                     "ON c.stadium_id = s.stadium_id WHERE s.name = 'North Arena'"));
    ModelClient policy = make_client(policy_t, "policy");

    FactoryConfig cfg;
    cfg.k_cycles = 2;
    cfg.n_candidates = 2;
    cfg.seed = 5;
    cfg.db_root = db_root;
    cfg.out_dir = tmp.sub("out");

    FactoryEndpoints eps;
    eps.generator = &generator;
    eps.judge = &judge;
    eps.sft_policy = &policy;

    FactoryReport report = synthesize(cfg, eps);
    CHECK(report.verified == 1);
    CHECK(report.drops["parse_failure"] == 1);

    std::ifstream samples(report.samples_path);
    std::string line;
    REQUIRE(std::getline(samples, line));
    auto js = nlohmann::json::parse(line);
    CHECK(js["sample_id"] == "concerts-c1");
    CHECK(js["db_id"] == "concerts");
    CHECK(js["cycles_used"] == 1);
    CHECK(js["signature"]["join_count"] == 1);
    const auto tables = js["signature"]["tables_used"].get<std::vector<std::string>>();
    CHECK(tables == std::vector<std::string>{"concert", "stadium"});
    CHECK(!std::getline(samples, line));

    std::ifstream mf(report.manifest_path);
    REQUIRE(mf.good());
    auto manifest = nlohmann::json::parse(mf);
    CHECK(manifest["v"] == 1);
    CHECK(manifest["config"]["seed"] == 5);
    REQUIRE(manifest["databases"].size() == 1);
    const auto& entry = manifest["databases"][0];
    CHECK(entry["db_id"] == "concerts");
    CHECK(entry["source_digest"].get<std::string>().size() == 64);
    CHECK(entry["status"] == "verified");
    CHECK(entry["winner"] == "concerts-c1");
    CHECK(fk_orphan_count(entry["augmented_path"].get<std::string>()) == 0);

    SUBCASE("a second run with fresh mocks reproduces the sample output") {
        auto gen2 = std::make_shared<ScriptedTransport>();
        gen2->add_rule("Target shape: a single-table aggregate", {"not parsable at all"});
        gen2->add_rule("Target shape: a join between two tables",
                       {"QUESTION: What is the total attendance at North Arena concerts?\n"
                        "SQL: SELECT sum(c.attendance) FROM concert c JOIN stadium s "
                        "ON c.stadium_id = s.stadium_id WHERE s.name = 'North Arena'"});
        ModelClient generator2 = make_client(gen2, "generator");
        auto judge2 = std::make_shared<ScriptedTransport>();
        judge2->add_rule("Audit this synthesized",
                         {"question_clear: pass\nschema_grounded: pass\ngold_correct: pass\n"
                          "answerable: pass"});
        judge2->set_default_reply("A");
        ModelClient judge_c2 = make_client(judge2, "judge");
        auto policy2 = std::make_shared<ScriptedTransport>();
        policy2->set_default_reply(
            submit_reply("SELECT sum(c.attendance) FROM concert c JOIN stadium s "
                         "ON c.stadium_id = s.stadium_id WHERE s.name = 'North Arena'"));
        ModelClient policy_c2 = make_client(policy2, "policy");

        FactoryConfig cfg2 = cfg;
        cfg2.out_dir = tmp.sub("out2");
        FactoryEndpoints eps2;
        eps2.generator = &generator2;
        eps2.judge = &judge_c2;
        eps2.sft_policy = &policy_c2;
        FactoryReport second = synthesize(cfg2, eps2);

        std::ifstream a(report.samples_path), b(second.samples_path);
        std::stringstream sa, sb;
        sa << a.rdbuf();
        sb << b.rdbuf();
        CHECK(sa.str() == sb.str());
        CHECK(sha256_file(cfg.out_dir + "/concerts.aug.sqlite") ==
              sha256_file(cfg2.out_dir + "/concerts.aug.sqlite"));
    }
}
