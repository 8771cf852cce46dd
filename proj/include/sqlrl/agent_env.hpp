#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "sqlrl/model_client.hpp"
#include "sqlrl/sqlexec.hpp"

namespace sqlrl {

struct EnvLimits {
    int t_max = 5;
    int preview_rows = 20;
    int rollout_timeout_ms = Sandbox::kRolloutTimeoutMs;
};

enum class ActionKind { query, submit };

struct Action {
    ActionKind kind = ActionKind::query;
    std::string sql;        // trimmed, non-empty
    size_t span_start = 0;  // byte offsets of the trimmed SQL in the model output
    size_t span_end = 0;
};

// Looks for the LAST fenced block tagged sql. A block whose opening fence is
// preceded (nearest non-blank line) by the literal line FINAL ANSWER is a
// submission. No such block, or an empty one: format violation (nullopt).
std::optional<Action> parse_action(const std::string& model_output);

enum class ObservationKind { result_preview, error, timeout_notice };

struct Observation {
    ObservationKind kind = ObservationKind::error;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;  // at most preview_rows rows, display strings
    int64_t total_row_count = 0;
    std::string message;   // engine text for error observations
    std::string rendered;  // deterministic from the fields above

    bool operator==(const Observation&) const = default;
};

struct EpisodeEnd {
    std::string final_sql;
};

// All execution failure modes become observations; only submit ends the
// episode.
std::variant<Observation, EpisodeEnd> step(Sandbox& handle, const Action& action,
                                           const EnvLimits& limits);

// Exposed for replay checks.
Observation observe(const ExecOutcome& outcome, const EnvLimits& limits);

struct Turn {
    std::string thought;  // full model output for the turn
    std::optional<Action> action;
    std::optional<Observation> observation;
};

enum class Terminal { submitted, turn_budget_exhausted, format_violation };

const char* to_string(Terminal t);
Terminal terminal_from_string(const std::string& s);

struct Trajectory {
    std::string trajectory_id;
    std::string question;
    std::string db_id;
    std::string context_text;     // rendered schema context, verbatim
    std::string context_digest;   // sha256 of context_text
    std::string template_digest;  // sha256 of the system prompt template
    std::vector<Turn> turns;
    Terminal terminal = Terminal::format_violation;
    std::optional<std::string> final_sql;
    int64_t wall_ms = 0;
    std::string annotation;  // endpoint-failure note when the rollout aborted
};

struct PromptTemplate {
    std::string name;
    std::string text;
    std::string digest;  // sha256 of text
};

// The compiled-in v1 system prompt; assets/prompts/agent_system_v1.txt holds
// the same bytes.
PromptTemplate builtin_prompt_template();
PromptTemplate load_prompt_template(const std::string& path);

// Chat messages for the next policy call: system template, one user message
// with context and question, then the alternating turn history verbatim.
std::vector<ChatMessage> build_messages(const PromptTemplate& tmpl, const std::string& context_text,
                                        const std::string& question,
                                        const std::vector<Turn>& history);

Trajectory rollout(const std::string& trajectory_id, const std::string& question,
                   const std::string& db_id, const std::string& context_text,
                   const PromptTemplate& tmpl, ModelClient& policy, Sandbox& handle,
                   const EnvLimits& limits = {}, const SamplingParams& sampling = {});

// JSONL schema v1, one trajectory per line.
std::string trajectory_to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const std::string& line);
void write_trajectories(const std::vector<Trajectory>& trajs, const std::string& path);
std::vector<Trajectory> read_trajectories(const std::string& path);

struct ReplayReport {
    bool ok = true;
    std::string mismatch;  // first divergence, empty when ok
};

// Re-executes every query action and re-renders its observation; any byte
// difference from the recorded observation fails the check.
ReplayReport replay_trajectory(const Trajectory& traj, Sandbox& handle, const EnvLimits& limits);

}  // namespace sqlrl
