#include "sqlrl/agent_env.hpp"

#include <cctype>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "sqlrl/digest.hpp"

namespace sqlrl {

namespace {

using ordered_json = nlohmann::ordered_json;

const char kAgentSystemPromptV1[] =
    "You are a careful SQL analyst working against a read-only SQLite database.\n"
    "\n"
    "Interaction protocol:\n"
    "- Each turn, reason briefly, then write exactly one SQLite SELECT statement\n"
    "  in a fenced code block tagged sql.\n"
    "- The environment executes the last such block and replies with a result\n"
    "  preview or with the engine error. Use the feedback to fix mistakes.\n"
    "- When you are confident in your query, put the line\n"
    "FINAL ANSWER\n"
    "  on its own line directly before the fenced block. That block is submitted\n"
    "  as your answer and the session ends.\n"
    "- Only read queries are possible; any write is rejected by the sandbox.\n";

bool is_blank(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

std::string trim(const std::string& s) {
    size_t b = 0;
    size_t e = s.size();
    while (b < e && is_blank(s[b])) ++b;
    while (e > b && is_blank(s[e - 1])) --e;
    return s.substr(b, e - b);
}

std::string fold(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

struct FencedBlock {
    size_t open_pos = 0;       // offset of the opening ```
    size_t content_begin = 0;  // first byte after the tag line
    size_t content_end = 0;    // offset of the closing ```
    std::string tag;
};

std::vector<FencedBlock> fenced_blocks(const std::string& text) {
    std::vector<FencedBlock> blocks;
    size_t pos = 0;
    while (true) {
        size_t open = text.find("```", pos);
        if (open == std::string::npos) break;
        size_t tag_end = text.find('\n', open + 3);
        if (tag_end == std::string::npos) break;
        size_t close = text.find("```", tag_end + 1);
        if (close == std::string::npos) break;  // unterminated, not a block
        FencedBlock b;
        b.open_pos = open;
        b.tag = fold(trim(text.substr(open + 3, tag_end - open - 3)));
        b.content_begin = tag_end + 1;
        b.content_end = close;
        blocks.push_back(b);
        pos = close + 3;
    }
    return blocks;
}

// True when the nearest non-blank line above `pos` is exactly FINAL ANSWER.
bool preceded_by_final_answer(const std::string& text, size_t pos) {
    size_t q = pos;
    while (q > 0 && is_blank(text[q - 1])) --q;
    if (q == 0) return false;
    size_t line_end = q;
    size_t line_start = text.rfind('\n', q - 1);
    line_start = (line_start == std::string::npos) ? 0 : line_start + 1;
    return trim(text.substr(line_start, line_end - line_start)) == "FINAL ANSWER";
}

}  // namespace

std::optional<Action> parse_action(const std::string& model_output) {
    const std::vector<FencedBlock> blocks = fenced_blocks(model_output);
    const FencedBlock* last_sql = nullptr;
    for (const auto& b : blocks) {
        if (b.tag == "sql") last_sql = &b;
    }
    if (last_sql == nullptr) return std::nullopt;

    size_t b = last_sql->content_begin;
    size_t e = last_sql->content_end;
    while (b < e && is_blank(model_output[b])) ++b;
    while (e > b && is_blank(model_output[e - 1])) --e;
    if (b >= e) return std::nullopt;

    Action action;
    action.sql = model_output.substr(b, e - b);
    action.span_start = b;
    action.span_end = e;
    action.kind = preceded_by_final_answer(model_output, last_sql->open_pos) ? ActionKind::submit
                                                                             : ActionKind::query;
    return action;
}

Observation observe(const ExecOutcome& outcome, const EnvLimits& limits) {
    Observation obs;
    char buf[64];
    switch (outcome.status) {
        case ExecStatus::ok: {
            obs.kind = ObservationKind::result_preview;
            obs.columns = outcome.table.column_names;
            obs.total_row_count = static_cast<int64_t>(outcome.table.rows.size());
            const size_t shown =
                std::min<size_t>(outcome.table.rows.size(), static_cast<size_t>(limits.preview_rows));
            for (size_t r = 0; r < shown; ++r) {
                std::vector<std::string> row;
                row.reserve(outcome.table.rows[r].size());
                for (const auto& cell : outcome.table.rows[r]) row.push_back(display_cell(cell));
                obs.rows.push_back(std::move(row));
            }
            std::snprintf(buf, sizeof buf, "rows: %lld",
                          static_cast<long long>(obs.total_row_count));
            std::string text = buf;
            if (!obs.columns.empty()) {
                text += "\n";
                for (size_t i = 0; i < obs.columns.size(); ++i) {
                    if (i) text += " | ";
                    text += obs.columns[i];
                }
            }
            for (const auto& row : obs.rows) {
                text += "\n";
                for (size_t i = 0; i < row.size(); ++i) {
                    if (i) text += " | ";
                    text += row[i];
                }
            }
            if (obs.total_row_count > static_cast<int64_t>(shown)) {
                std::snprintf(buf, sizeof buf, "\n... (+%lld more rows)",
                              static_cast<long long>(obs.total_row_count - shown));
                text += buf;
            }
            obs.rendered = std::move(text);
            return obs;
        }
        case ExecStatus::timeout: {
            obs.kind = ObservationKind::timeout_notice;
            std::snprintf(buf, sizeof buf, "query timed out after %d ms",
                          limits.rollout_timeout_ms);
            obs.rendered = buf;
            return obs;
        }
        case ExecStatus::write_rejected: {
            obs.kind = ObservationKind::error;
            obs.message = "write rejected: the database is read-only";
            obs.rendered = "SQL error: " + obs.message;
            return obs;
        }
        case ExecStatus::sql_error:
        default: {
            obs.kind = ObservationKind::error;
            obs.message = outcome.message;
            obs.rendered = "SQL error: " + obs.message;
            return obs;
        }
    }
}

std::variant<Observation, EpisodeEnd> step(Sandbox& handle, const Action& action,
                                           const EnvLimits& limits) {
    if (action.kind == ActionKind::submit) return EpisodeEnd{action.sql};
    ExecOutcome outcome = handle.execute(action.sql, limits.rollout_timeout_ms);
    return observe(outcome, limits);
}

const char* to_string(Terminal t) {
    switch (t) {
        case Terminal::submitted: return "submitted";
        case Terminal::turn_budget_exhausted: return "turn_budget_exhausted";
        case Terminal::format_violation: return "format_violation";
    }
    return "format_violation";
}

Terminal terminal_from_string(const std::string& s) {
    if (s == "submitted") return Terminal::submitted;
    if (s == "turn_budget_exhausted") return Terminal::turn_budget_exhausted;
    if (s == "format_violation") return Terminal::format_violation;
    throw std::runtime_error("unknown terminal: " + s);
}

PromptTemplate builtin_prompt_template() {
    PromptTemplate tmpl;
    tmpl.name = "agent_system_v1";
    tmpl.text = kAgentSystemPromptV1;
    tmpl.digest = sha256_hex(tmpl.text);
    return tmpl;
}

PromptTemplate load_prompt_template(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open prompt template: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    PromptTemplate tmpl;
    size_t slash = path.find_last_of('/');
    std::string base = (slash == std::string::npos) ? path : path.substr(slash + 1);
    size_t dot = base.find_last_of('.');
    tmpl.name = (dot == std::string::npos) ? base : base.substr(0, dot);
    tmpl.text = ss.str();
    tmpl.digest = sha256_hex(tmpl.text);
    return tmpl;
}

std::vector<ChatMessage> build_messages(const PromptTemplate& tmpl, const std::string& context_text,
                                        const std::string& question,
                                        const std::vector<Turn>& history) {
    std::vector<ChatMessage> messages;
    messages.push_back({"system", tmpl.text});
    messages.push_back({"user", "Schema context:\n" + context_text + "\nQuestion: " + question});
    for (const auto& turn : history) {
        messages.push_back({"assistant", turn.thought});
        if (turn.observation) messages.push_back({"user", turn.observation->rendered});
    }
    return messages;
}

Trajectory rollout(const std::string& trajectory_id, const std::string& question,
                   const std::string& db_id, const std::string& context_text,
                   const PromptTemplate& tmpl, ModelClient& policy, Sandbox& handle,
                   const EnvLimits& limits, const SamplingParams& sampling) {
    if (limits.t_max < 1) throw std::invalid_argument("rollout: t_max must be >= 1");
    const auto started = std::chrono::steady_clock::now();

    Trajectory traj;
    traj.trajectory_id = trajectory_id;
    traj.question = question;
    traj.db_id = db_id;
    traj.context_text = context_text;
    traj.context_digest = sha256_hex(context_text);
    traj.template_digest = tmpl.digest;
    traj.terminal = Terminal::turn_budget_exhausted;

    SamplingParams step_sampling = sampling;
    step_sampling.n = 1;

    for (int t = 0; t < limits.t_max; ++t) {
        std::string output;
        try {
            output = policy.chat_one(build_messages(tmpl, context_text, question, traj.turns),
                                     step_sampling);
        } catch (const EndpointError& e) {
            traj.turns.push_back(Turn{});
            traj.terminal = Terminal::format_violation;
            traj.annotation = std::string("endpoint failure: ") + e.what();
            break;
        }

        Turn turn;
        turn.thought = output;
        turn.action = parse_action(output);
        if (!turn.action) {
            traj.turns.push_back(std::move(turn));
            traj.terminal = Terminal::format_violation;
            break;
        }
        if (turn.action->kind == ActionKind::submit) {
            traj.final_sql = turn.action->sql;
            traj.turns.push_back(std::move(turn));
            traj.terminal = Terminal::submitted;
            break;
        }
        turn.observation = std::get<Observation>(step(handle, *turn.action, limits));
        traj.turns.push_back(std::move(turn));
    }

    traj.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - started)
                       .count();
    return traj;
}

namespace {

ordered_json observation_to_json(const Observation& obs) {
    ordered_json j;
    switch (obs.kind) {
        case ObservationKind::result_preview: j["kind"] = "result_preview"; break;
        case ObservationKind::error: j["kind"] = "error"; break;
        case ObservationKind::timeout_notice: j["kind"] = "timeout_notice"; break;
    }
    j["columns"] = obs.columns;
    j["rows"] = obs.rows;
    j["total_row_count"] = obs.total_row_count;
    j["message"] = obs.message;
    j["rendered"] = obs.rendered;
    return j;
}

Observation observation_from_json(const nlohmann::json& j) {
    Observation obs;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "result_preview") obs.kind = ObservationKind::result_preview;
    else if (kind == "error") obs.kind = ObservationKind::error;
    else if (kind == "timeout_notice") obs.kind = ObservationKind::timeout_notice;
    else throw std::runtime_error("unknown observation kind: " + kind);
    obs.columns = j.at("columns").get<std::vector<std::string>>();
    obs.rows = j.at("rows").get<std::vector<std::vector<std::string>>>();
    obs.total_row_count = j.at("total_row_count").get<int64_t>();
    obs.message = j.at("message").get<std::string>();
    obs.rendered = j.at("rendered").get<std::string>();
    return obs;
}

}  // namespace

std::string trajectory_to_json(const Trajectory& traj) {
    ordered_json j;
    j["v"] = 1;
    j["trajectory_id"] = traj.trajectory_id;
    j["question"] = traj.question;
    j["db_id"] = traj.db_id;
    j["context_digest"] = traj.context_digest;
    j["context_text"] = traj.context_text;
    j["template_digest"] = traj.template_digest;
    j["terminal"] = to_string(traj.terminal);
    if (traj.final_sql) j["final_sql"] = *traj.final_sql;
    else j["final_sql"] = nullptr;
    j["wall_ms"] = traj.wall_ms;
    j["annotation"] = traj.annotation;
    j["turns"] = ordered_json::array();
    for (const auto& turn : traj.turns) {
        ordered_json jt;
        jt["thought"] = turn.thought;
        if (turn.action) {
            ordered_json ja;
            ja["kind"] = turn.action->kind == ActionKind::submit ? "submit" : "query";
            ja["sql"] = turn.action->sql;
            ja["span"] = ordered_json::array({turn.action->span_start, turn.action->span_end});
            jt["action"] = std::move(ja);
        } else {
            jt["action"] = nullptr;
        }
        jt["observation"] = turn.observation ? observation_to_json(*turn.observation)
                                             : ordered_json(nullptr);
        j["turns"].push_back(std::move(jt));
    }
    return j.dump();
}

Trajectory trajectory_from_json(const std::string& line) {
    nlohmann::json j = nlohmann::json::parse(line);
    if (j.at("v").get<int>() != 1) throw std::runtime_error("unsupported trajectory version");
    Trajectory traj;
    traj.trajectory_id = j.at("trajectory_id").get<std::string>();
    traj.question = j.at("question").get<std::string>();
    traj.db_id = j.at("db_id").get<std::string>();
    traj.context_digest = j.at("context_digest").get<std::string>();
    traj.context_text = j.at("context_text").get<std::string>();
    traj.template_digest = j.at("template_digest").get<std::string>();
    traj.terminal = terminal_from_string(j.at("terminal").get<std::string>());
    if (!j.at("final_sql").is_null()) traj.final_sql = j.at("final_sql").get<std::string>();
    traj.wall_ms = j.at("wall_ms").get<int64_t>();
    traj.annotation = j.at("annotation").get<std::string>();
    for (const auto& jt : j.at("turns")) {
        Turn turn;
        turn.thought = jt.at("thought").get<std::string>();
        if (!jt.at("action").is_null()) {
            const auto& ja = jt.at("action");
            Action action;
            action.kind = ja.at("kind").get<std::string>() == "submit" ? ActionKind::submit
                                                                       : ActionKind::query;
            action.sql = ja.at("sql").get<std::string>();
            action.span_start = ja.at("span").at(0).get<size_t>();
            action.span_end = ja.at("span").at(1).get<size_t>();
            turn.action = action;
        }
        if (!jt.at("observation").is_null())
            turn.observation = observation_from_json(jt.at("observation"));
        traj.turns.push_back(std::move(turn));
    }
    return traj;
}

void write_trajectories(const std::vector<Trajectory>& trajs, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write trajectories: " + path);
    for (const auto& traj : trajs) out << trajectory_to_json(traj) << "\n";
}

std::vector<Trajectory> read_trajectories(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read trajectories: " + path);
    std::vector<Trajectory> trajs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        trajs.push_back(trajectory_from_json(line));
    }
    return trajs;
}

ReplayReport replay_trajectory(const Trajectory& traj, Sandbox& handle, const EnvLimits& limits) {
    for (size_t i = 0; i < traj.turns.size(); ++i) {
        const Turn& turn = traj.turns[i];
        if (!turn.action || turn.action->kind != ActionKind::query) continue;
        if (!turn.observation)
            return {false, "turn " + std::to_string(i) + " has a query but no observation"};
        auto result = step(handle, *turn.action, limits);
        const Observation& fresh = std::get<Observation>(result);
        if (fresh.rendered != turn.observation->rendered) {
            return {false, "turn " + std::to_string(i) + " observation diverged: expected [" +
                               turn.observation->rendered + "] got [" + fresh.rendered + "]"};
        }
    }
    return {};
}

}  // namespace sqlrl
