#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <doctest.h>
#include <json.hpp>

#include "helpers.hpp"
#include "sqlrl/fixtures.hpp"
#include "sqlrl/reward_grpo.hpp"

using namespace sqlrl;
using testutil::TempDir;

namespace {

Trajectory submitted(const std::string& id, const std::string& sql) {
    Trajectory t;
    t.trajectory_id = id;
    t.terminal = Terminal::submitted;
    t.final_sql = sql;
    Turn turn;
    turn.thought = "FINAL ANSWER\n```sql\n" + sql + "\n```\n";
    t.turns.push_back(turn);
    return t;
}

}  // namespace

TEST_CASE("score maps execution outcomes onto the sparse reward") {
    TempDir tmp;
    Sandbox handle(fixtures::write_concerts_db(tmp.sub("db")));
    const std::string gold = "SELECT count(*) FROM singer";
    EquivalencePolicy policy = policy_for_gold(gold);

    SUBCASE("equivalent result earns 1.0") {
        RewardRecord r = score(submitted("a", "SELECT count(singer_id) FROM singer"), gold,
                               handle, policy);
        CHECK(r.reward == 1.0);
        CHECK(r.cause == RewardCause::correct_execution);
    }
    SUBCASE("wrong result earns 0.0") {
        RewardRecord r = score(submitted("b", "SELECT count(*) FROM stadium"), gold, handle,
                               policy);
        CHECK(r.reward == 0.0);
        CHECK(r.cause == RewardCause::wrong_result);
    }
    SUBCASE("execution error on the prediction earns 0.0") {
        RewardRecord r = score(submitted("c", "SELECT bogus FROM nowhere"), gold, handle, policy);
        CHECK(r.reward == 0.0);
        CHECK(r.cause == RewardCause::wrong_result);
    }
    SUBCASE("no submission earns -1.0 without touching the database") {
        Trajectory t;
        t.trajectory_id = "d";
        t.terminal = Terminal::turn_budget_exhausted;
        RewardRecord r = score(t, gold, handle, policy);
        CHECK(r.reward == -1.0);
        CHECK(r.cause == RewardCause::invalid_format);
    }
    SUBCASE("broken gold throws instead of rewarding") {
        CHECK_THROWS_AS(score(submitted("e", "SELECT 1"), "SELECT FROM", handle, policy),
                        GoldExecutionError);
    }
}

TEST_CASE("group advantages match hand-computed values") {
    SUBCASE("two-element split") {
        auto adv = group_advantages({1.0, -1.0}, 0.0);
        CHECK(adv[0] == doctest::Approx(1.0));
        CHECK(adv[1] == doctest::Approx(-1.0));
    }
    SUBCASE("zero variance collapses to zeros") {
        auto adv = group_advantages({1.0, 1.0, 1.0}, 0.0);
        for (double a : adv) CHECK(a == 0.0);
    }
    SUBCASE("mixed group") {
        auto adv = group_advantages({1.0, 1.0, -1.0, 0.0}, 0.0);
        CHECK(adv[0] == doctest::Approx(0.9045).epsilon(1e-3));
        CHECK(adv[1] == doctest::Approx(0.9045).epsilon(1e-3));
        CHECK(adv[2] == doctest::Approx(-1.5076).epsilon(1e-3));
        CHECK(adv[3] == doctest::Approx(-0.3015).epsilon(1e-3));
    }
    SUBCASE("degenerate inputs throw") {
        CHECK_THROWS_AS(group_advantages({1.0}, 0.0), std::invalid_argument);
        CHECK_THROWS_AS(group_advantages({}, 0.0), std::invalid_argument);
        CHECK_THROWS_AS(group_advantages({1.0, 0.0}, -1e-9), std::invalid_argument);
    }
}

TEST_CASE("advantage invariants hold on random groups") {
    std::mt19937_64 rng(20240818);
    std::uniform_int_distribution<int> size_dist(2, 16);
    std::uniform_int_distribution<int> reward_dist(0, 2);
    const double rewards_map[3] = {1.0, 0.0, -1.0};

    for (int trial = 0; trial < 10000; ++trial) {
        const int n = size_dist(rng);
        std::vector<double> rewards(n);
        for (auto& r : rewards) r = rewards_map[reward_dist(rng)];
        auto adv = group_advantages(rewards, 0.0);

        double mean = 0.0;
        for (double a : adv) mean += a;
        mean /= n;
        CHECK(std::abs(mean) < 1e-9);

        double var = 0.0;
        for (double a : adv) var += (a - mean) * (a - mean);
        var /= n;
        const double sd = std::sqrt(var);
        // population std of the advantages is 0 (flat group) or 1
        CHECK((std::abs(sd) < 1e-9 || std::abs(sd - 1.0) < 1e-9));

        // shift and scale invariance at epsilon 0
        std::vector<double> shifted(rewards), scaled(rewards);
        for (auto& r : shifted) r = r * 1.0 + 7.5;
        for (auto& r : scaled) r *= 3.25;
        auto adv_shift = group_advantages(shifted, 0.0);
        auto adv_scale = group_advantages(scaled, 0.0);
        for (int i = 0; i < n; ++i) {
            CHECK(adv_shift[i] == doctest::Approx(adv[i]).epsilon(1e-9));
            CHECK(adv_scale[i] == doctest::Approx(adv[i]).epsilon(1e-9));
        }
    }
}

TEST_CASE("build_groups preserves order, sizes one group per question") {
    std::vector<std::pair<std::string, RewardRecord>> flat = {
        {"q1", {"t1", 1.0, RewardCause::correct_execution, ""}},
        {"q2", {"t3", 0.0, RewardCause::wrong_result, ""}},
        {"q1", {"t2", 0.0, RewardCause::wrong_result, ""}},
        {"q3", {"t9", -1.0, RewardCause::invalid_format, ""}},
        {"q2", {"t4", 0.0, RewardCause::wrong_result, ""}},
    };
    auto groups = build_groups(flat, 0.0);
    REQUIRE(groups.size() == 3);
    CHECK(groups[0].question_id == "q1");
    CHECK(groups[0].members[0].trajectory_id == "t1");
    CHECK(groups[0].members[1].trajectory_id == "t2");
    CHECK(groups[0].members[0].advantage == doctest::Approx(1.0));
    CHECK(groups[1].question_id == "q2");
    CHECK(groups[1].members[0].advantage == 0.0);  // flat group, zero signal
    CHECK(groups[2].group_size == 1);
    CHECK(groups[2].members[0].advantage == 0.0);  // singleton gets no advantage

    auto kept = filter_groups(groups);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].question_id == "q1");
    CHECK(groups[1].filtered);
    CHECK(groups[2].filtered);
    CHECK(!groups[0].filtered);
}

TEST_CASE("group audit and RL batch exports are complete and ordered") {
    TempDir tmp;
    PromptTemplate tmpl = builtin_prompt_template();

    Trajectory t1 = submitted("t1", "SELECT 1");
    t1.question = "q one";
    t1.context_text = "CTX";
    Trajectory t2 = submitted("t2", "SELECT 2");
    t2.question = "q one";
    t2.context_text = "CTX";
    Observation obs;
    obs.rendered = "rows: 1\nx\n2";
    t2.turns[0].observation = obs;

    std::vector<std::pair<std::string, RewardRecord>> flat = {
        {"q1", {"t2", 0.0, RewardCause::wrong_result, "g"}},
        {"q1", {"t1", 1.0, RewardCause::correct_execution, "g"}},
    };
    auto groups = build_groups(flat, 0.0);
    auto kept = filter_groups(groups);

    const std::string audit_path = tmp.sub("audit.jsonl");
    write_group_audit(groups, audit_path);
    {
        std::ifstream in(audit_path);
        std::string line;
        REQUIRE(std::getline(in, line));
        auto j = nlohmann::json::parse(line);
        CHECK(j["question_id"] == "q1");
        CHECK(j["group_size"] == 2);
        CHECK(j["filtered"] == false);
        CHECK(j["members"].size() == 2);
    }

    const std::string batch_path = tmp.sub("batch.jsonl");
    int64_t written = export_rl_batch({t1, t2}, kept, tmpl, batch_path);
    CHECK(written == 2);

    std::ifstream in(batch_path);
    std::string line1, line2;
    REQUIRE(std::getline(in, line1));
    REQUIRE(std::getline(in, line2));
    auto j1 = nlohmann::json::parse(line1);
    auto j2 = nlohmann::json::parse(line2);
    CHECK(j1["trajectory_id"] == "t1");  // sorted by (question, trajectory)
    CHECK(j2["trajectory_id"] == "t2");
    CHECK(j1["reward"] == 1.0);

    // spans must cover exactly the assistant messages
    for (const auto& j : {j1, j2}) {
        const auto& msgs = j["prompt_messages"];
        CHECK(msgs[0]["role"] == "system");
        CHECK(msgs[1]["role"] == "user");
        for (const auto& span : j["response_spans"]) {
            const auto& m = msgs[span["message_index"].get<size_t>()];
            CHECK(m["role"] == "assistant");
            CHECK(span["char_start"] == 0);
            CHECK(span["char_end"].get<size_t>() == m["content"].get<std::string>().size());
        }
    }
    // t2 recorded an observation, so its message list carries the tool reply
    CHECK(j2["prompt_messages"].size() == 4);
    CHECK(j2["prompt_messages"][3]["role"] == "user");

    SUBCASE("kept member without a trajectory is a hard error") {
        CHECK_THROWS(export_rl_batch({t1}, kept, tmpl, tmp.sub("bad.jsonl")));
    }
}
