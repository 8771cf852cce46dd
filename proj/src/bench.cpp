#include "sqlrl/bench.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <stdexcept>

#include <json.hpp>

#include "sqlrl/reward_grpo.hpp"

namespace sqlrl {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string json_string(const json& j, const char* key) {
    if (!j.contains(key)) throw std::runtime_error(std::string("benchmark row misses ") + key);
    const auto& v = j.at(key);
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<int64_t>());
    throw std::runtime_error(std::string("benchmark field ") + key + " has an odd type");
}

}  // namespace

std::vector<BenchCase> load_benchmark(const std::string& path, const std::string& dialect,
                                      const std::string& db_root, bool strict) {
    if (dialect != "auto" && dialect != "bird" && dialect != "spider")
        throw std::invalid_argument("load_benchmark: dialect must be auto, bird or spider");

    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read benchmark file: " + path);
    json doc = json::parse(in, nullptr, /*allow_exceptions=*/true);
    if (!doc.is_array()) throw std::runtime_error("unknown benchmark layout: expected a JSON array");

    std::vector<BenchCase> cases;
    cases.reserve(doc.size());
    for (size_t i = 0; i < doc.size(); ++i) {
        const json& row = doc[i];
        if (!row.is_object())
            throw std::runtime_error("unknown benchmark layout: row " + std::to_string(i) +
                                     " is not an object");
        std::string layout = dialect;
        if (layout == "auto") {
            if (row.contains("SQL")) layout = "bird";
            else if (row.contains("query")) layout = "spider";
            else
                throw std::runtime_error("unknown benchmark layout: row " + std::to_string(i) +
                                         " has neither a SQL nor a query field");
        }

        BenchCase c;
        c.db_id = json_string(row, "db_id");
        c.question = json_string(row, "question");
        if (layout == "bird") {
            c.gold_sql = json_string(row, "SQL");
            c.case_id = row.contains("question_id") ? json_string(row, "question_id")
                                                    : std::to_string(i);
            if (row.contains("evidence") && row.at("evidence").is_string())
                c.evidence = row.at("evidence").get<std::string>();
            if (row.contains("difficulty") && row.at("difficulty").is_string())
                c.difficulty = row.at("difficulty").get<std::string>();
        } else {
            c.gold_sql = json_string(row, "query");
            c.case_id = std::to_string(i);
        }
        cases.push_back(std::move(c));
    }

    if (strict) {
        std::map<std::string, std::unique_ptr<Sandbox>> handles;
        for (auto& c : cases) {
            auto it = handles.find(c.db_id);
            if (it == handles.end()) {
                it = handles.emplace(c.db_id,
                                     std::make_unique<Sandbox>(db_file_for(db_root, c.db_id)))
                         .first;
            }
            ExecOutcome gold = it->second->execute(c.gold_sql);
            if (!gold.ok()) {
                c.gold_ok = false;
                c.gold_error = std::string(to_string(gold.status)) +
                               (gold.message.empty() ? "" : ": " + gold.message);
            }
        }
    }
    return cases;
}

size_t self_consistency_vote(const std::vector<std::string>& candidates, Sandbox& handle,
                             const EquivalencePolicy& policy) {
    if (candidates.empty())
        throw std::invalid_argument("self_consistency_vote: no candidates");

    struct Cluster {
        size_t count = 0;
        size_t first = 0;
    };
    std::map<std::string, Cluster> clusters;
    for (size_t i = 0; i < candidates.size(); ++i) {
        ExecOutcome outcome = handle.execute(candidates[i]);
        if (!outcome.ok()) continue;  // errors carry no vote
        const std::string key = normalize(outcome.table, policy).bytes;
        auto [it, inserted] = clusters.try_emplace(key, Cluster{0, i});
        ++it->second.count;
    }
    if (clusters.empty()) return 0;

    const Cluster* best = nullptr;
    for (const auto& [key, cl] : clusters) {
        if (best == nullptr || cl.count > best->count ||
            (cl.count == best->count && cl.first < best->first)) {
            best = &cl;
        }
    }
    return best->first;
}

EvalReport evaluate(const std::vector<BenchCase>& cases, ModelClient& policy,
                    const EvalConfig& cfg) {
    if (cases.empty()) throw std::invalid_argument("evaluate: no cases");
    if (cfg.n_samples < 1) throw std::invalid_argument("evaluate: n_samples must be >= 1");

    const auto started = std::chrono::steady_clock::now();
    EvalReport report;
    report.n_samples = cfg.n_samples;
    report.model = cfg.model_name;
    report.config_digest = cfg.config_digest;
    report.strategy = cfg.n_samples == 1
                          ? "greedy"
                          : "self-consistency(n=" + std::to_string(cfg.n_samples) + ")";

    struct DbState {
        std::unique_ptr<Sandbox> handle;
        DatabaseProfile profile;
        std::vector<SchemaUnit> units;
        std::string full_context;
    };
    std::map<std::string, DbState> dbs;
    auto state_for = [&](const std::string& db_id) -> DbState& {
        auto it = dbs.find(db_id);
        if (it != dbs.end()) return it->second;
        DbState st;
        st.handle = std::make_unique<Sandbox>(db_file_for(cfg.db_root, db_id));
        st.profile = build_profile(*st.handle, db_id);
        st.units = generate_descriptions(st.profile, std::nullopt, nullptr);
        st.full_context = render_profile(st.profile, st.units);
        return dbs.emplace(db_id, std::move(st)).first->second;
    };

    const PromptTemplate tmpl = builtin_prompt_template();
    std::map<std::string, std::pair<int, int>> by_difficulty;  // bucket -> (correct, total)

    for (const BenchCase& c : cases) {
        DbState& db = state_for(c.db_id);
        std::string context = db.full_context;
        if (cfg.embedder != nullptr) {
            SchemaContext pruned =
                prune(db.units, db.profile, c.question, cfg.embedder, cfg.retrieval_k);
            context = render_context(pruned, db.profile);
        }
        std::string question = c.question;
        if (!c.evidence.empty()) question += "\nExternal knowledge: " + c.evidence;

        CaseVerdict verdict;
        verdict.case_id = c.case_id;
        verdict.db_id = c.db_id;
        verdict.difficulty = c.difficulty;
        const EquivalencePolicy eq_policy = policy_for_gold(c.gold_sql);

        std::vector<std::string> finals;
        Trajectory single;
        for (int s = 0; s < cfg.n_samples; ++s) {
            Trajectory traj = rollout(c.case_id + "-s" + std::to_string(s), question, c.db_id,
                                      context, tmpl, policy, *db.handle, cfg.limits,
                                      cfg.sampling);
            if (cfg.n_samples == 1) single = traj;
            if (traj.final_sql) finals.push_back(*traj.final_sql);
        }
        verdict.candidates = static_cast<int>(finals.size());

        if (cfg.n_samples == 1) {
            RewardRecord rec = score(single, c.gold_sql, *db.handle, eq_policy);
            verdict.chosen_sql = single.final_sql.value_or("");
            verdict.cause = to_string(rec.cause);
            verdict.correct = rec.cause == RewardCause::correct_execution;
        } else if (finals.empty()) {
            verdict.cause = to_string(RewardCause::invalid_format);
            verdict.correct = false;
        } else {
            const size_t chosen = self_consistency_vote(finals, *db.handle, eq_policy);
            verdict.chosen_sql = finals[chosen];
            ExecOutcome gold = db.handle->execute(c.gold_sql);
            if (!gold.ok())
                throw GoldExecutionError("gold SQL failed for case " + c.case_id + ": " +
                                         gold.message);
            ExecOutcome predicted = db.handle->execute(verdict.chosen_sql);
            const bool ok = equivalent(predicted, gold, eq_policy).equivalent;
            verdict.cause = to_string(ok ? RewardCause::correct_execution
                                         : RewardCause::wrong_result);
            verdict.correct = ok;
        }

        const std::string bucket = c.difficulty.empty() ? "unspecified" : c.difficulty;
        auto& [good, total] = by_difficulty[bucket];
        ++total;
        if (verdict.correct) ++good;
        report.verdicts.push_back(std::move(verdict));
    }

    int correct = 0;
    for (const auto& v : report.verdicts) correct += v.correct ? 1 : 0;
    report.ex_overall = static_cast<double>(correct) / static_cast<double>(report.verdicts.size());
    for (const auto& [bucket, counts] : by_difficulty) {
        report.cases_by_difficulty[bucket] = counts.second;
        report.ex_by_difficulty[bucket] =
            static_cast<double>(counts.first) / static_cast<double>(counts.second);
    }
    report.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::steady_clock::now() - started)
                         .count();
    return report;
}

std::string serialize_report(const EvalReport& report) {
    ordered_json j;
    j["v"] = 1;
    j["model"] = report.model;
    j["strategy"] = report.strategy;
    j["n_samples"] = report.n_samples;
    j["config_digest"] = report.config_digest;
    j["ex_overall"] = report.ex_overall;
    j["ex_by_difficulty"] = ordered_json::object();
    for (const auto& [bucket, ex] : report.ex_by_difficulty) j["ex_by_difficulty"][bucket] = ex;
    j["cases_by_difficulty"] = ordered_json::object();
    for (const auto& [bucket, n] : report.cases_by_difficulty) j["cases_by_difficulty"][bucket] = n;
    j["cases"] = ordered_json::array();
    for (const auto& v : report.verdicts) {
        j["cases"].push_back(ordered_json{{"case_id", v.case_id},
                                          {"db_id", v.db_id},
                                          {"difficulty", v.difficulty},
                                          {"chosen_sql", v.chosen_sql},
                                          {"cause", v.cause},
                                          {"correct", v.correct},
                                          {"candidates", v.candidates}});
    }
    return j.dump(2) + "\n";
}

void write_report(const EvalReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write report: " + path);
    out << serialize_report(report);
}

std::string render_report_table(const EvalReport& report) {
    char ex[32];
    std::snprintf(ex, sizeof ex, "%.2f", report.ex_overall * 100.0);
    std::string out = "model | strategy | EX\n";
    out += report.model + " | " + report.strategy + " | " + ex + "\n";
    return out;
}

}  // namespace sqlrl
