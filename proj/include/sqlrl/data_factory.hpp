#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sqlrl/agent_env.hpp"
#include "sqlrl/model_client.hpp"
#include "sqlrl/sql_scan.hpp"
#include "sqlrl/sqlexec.hpp"

namespace sqlrl {

inline constexpr int kDefaultGenCheckCycles = 3;  // K
inline constexpr int kDefaultCandidatePool = 4;   // N

enum class SampleStatus { candidate, verified, regenerated, rejected };

const char* to_string(SampleStatus s);

struct SynthSample {
    std::string sample_id;
    std::string db_id;
    std::string question;
    std::string gold_sql;
    StructuralSignature signature;
    SampleStatus status = SampleStatus::candidate;
    int cycles_used = 0;
    std::vector<std::string> audit_notes;
};

class AugmentError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Rebuilds the database at out_path with the same schema and perturbed
// contents: row counts shifted, numerics jittered inside the observed range,
// text shuffled across rows, foreign keys remapped to surviving parent keys.
// Topological order over the FK DAG (self-references handled last, in-table);
// a cyclic remainder is an error. Same seed, same output bytes.
std::string augment_database(const std::string& source_db, uint64_t seed,
                             const std::string& out_path);

// Rows whose non-null FK value has no parent row. 0 for every augmented db.
int64_t fk_orphan_count(const std::string& db_path);

struct JudgeVerdict {
    bool question_clear = false;
    bool schema_grounded = false;
    bool gold_correct = false;
    bool answerable = false;
    std::string rationale;

    bool all_pass() const {
        return question_clear && schema_grounded && gold_correct && answerable;
    }
};

// Expects one "<dimension>: pass|fail" line per dimension; a missing
// dimension reads as fail.
JudgeVerdict parse_judge_verdict(const std::string& reply);

// "QUESTION: ..." line plus "SQL: ..." remainder; fenced SQL accepted.
std::optional<std::pair<std::string, std::string>> parse_candidate_reply(const std::string& reply);

struct TournamentMatch {
    std::string a_id;
    std::string b_id;
    std::string winner_id;
    std::string note;  // position-bias disagreements and fallbacks
};

struct TournamentResult {
    SynthSample winner;
    std::vector<TournamentMatch> matches;
};

// Single-elimination bracket over a seed-shuffled order. Every match asks the
// judge in both orders; disagreement keeps the first-listed candidate. When
// the judge stays unreachable the most structurally complex candidate wins.
TournamentResult tournament_select(const std::vector<SynthSample>& candidates, ModelClient* judge,
                                   uint64_t seed);

struct GenCheckEnv {
    Sandbox* original = nullptr;
    Sandbox* augmented = nullptr;
    std::string context_text;  // rendered schema handed to the policy and judge
    PromptTemplate tmpl;
    EnvLimits limits;
    SamplingParams sampling;
};

// The K-cycle refinement loop: verified only when the policy's answer is
// execution-equivalent to gold on BOTH databases, or when the judge confirms
// the gold against a model miss. Judge-rejected golds are regenerated.
SynthSample gen_as_check(SynthSample sample, ModelClient* sft_policy, ModelClient* judge,
                         ModelClient* regen, int k_cycles, GenCheckEnv& env);

struct FactoryConfig {
    int k_cycles = kDefaultGenCheckCycles;
    int n_candidates = kDefaultCandidatePool;
    uint64_t seed = 1;
    std::string db_root;
    std::vector<std::string> db_ids;  // empty: every subdirectory of db_root
    std::string out_dir;
};

struct FactoryEndpoints {
    ModelClient* generator = nullptr;
    ModelClient* judge = nullptr;
    ModelClient* sft_policy = nullptr;
    ModelClient* regen = nullptr;
};

struct FactoryReport {
    int64_t verified = 0;
    std::map<std::string, int64_t> drops;  // stage name, dropped candidates
    std::string manifest_path;
    std::string samples_path;
};

// Full pipeline per database: augment, generate N candidates, validate by
// execution on both variants, tournament, gen-as-check, export. Per-sample
// failures are counted, only IO and config problems throw.
FactoryReport synthesize(const FactoryConfig& cfg, const FactoryEndpoints& endpoints);

}  // namespace sqlrl
