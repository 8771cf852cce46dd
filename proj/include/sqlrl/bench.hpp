#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sqlrl/agent_env.hpp"
#include "sqlrl/model_client.hpp"
#include "sqlrl/schema_context.hpp"
#include "sqlrl/sqlexec.hpp"

namespace sqlrl {

inline constexpr int kDefaultSelfConsistencyN = 8;

struct BenchCase {
    std::string case_id;
    std::string db_id;
    std::string question;
    std::string gold_sql;
    std::string difficulty;  // empty when the source file has none
    std::string evidence;    // external knowledge, BIRD only
    bool gold_ok = true;     // strict mode marks broken golds
    std::string gold_error;
};

// Reads a dev file in either published layout. BIRD rows carry question_id /
// SQL / evidence / difficulty, Spider rows carry query; dialect "auto" picks
// per row, "bird" and "spider" force one mapping. Strict mode executes every
// gold and flags the failures instead of dropping the case.
std::vector<BenchCase> load_benchmark(const std::string& path, const std::string& dialect,
                                      const std::string& db_root, bool strict);

// Executes every candidate, clusters the successful results by fingerprint
// (errors join no cluster) and returns the index of the first-generated
// member of the largest cluster. Ties go to the cluster whose first member
// came earliest; all candidates erroring picks index 0.
size_t self_consistency_vote(const std::vector<std::string>& candidates, Sandbox& handle,
                             const EquivalencePolicy& policy);

struct CaseVerdict {
    std::string case_id;
    std::string db_id;
    std::string difficulty;
    std::string chosen_sql;  // empty when nothing was submitted
    std::string cause;       // correct_execution, wrong_result, invalid_format
    bool correct = false;
    int candidates = 0;  // submitted rollouts for this case
};

struct EvalReport {
    std::vector<CaseVerdict> verdicts;
    double ex_overall = 0.0;
    std::map<std::string, double> ex_by_difficulty;
    std::map<std::string, int> cases_by_difficulty;
    int n_samples = 1;
    std::string model;
    std::string strategy;  // "greedy" or "self-consistency(n=N)"
    std::string config_digest;
    int64_t wall_ms = 0;  // never serialized, reports stay byte-reproducible
};

struct EvalConfig {
    int n_samples = 1;
    EnvLimits limits;
    SamplingParams sampling;
    std::string db_root;
    std::string model_name;
    std::string config_digest;
    ModelClient* embedder = nullptr;  // set: per-question pruned context
    int retrieval_k = kDefaultRetrievalK;
};

// Per case: n_samples rollouts, greedy scoring at n=1, fingerprint vote above
// that. Endpoint failures and silent rollouts count as wrong. A gold that does
// not execute throws; run strict loading first.
EvalReport evaluate(const std::vector<BenchCase>& cases, ModelClient& policy,
                    const EvalConfig& cfg);

// Report body as stable-ordered JSON, wall time excluded.
std::string serialize_report(const EvalReport& report);

void write_report(const EvalReport& report, const std::string& path);

// The three-column summary line: model | strategy | EX.
std::string render_report_table(const EvalReport& report);

}  // namespace sqlrl
