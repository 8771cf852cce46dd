#include "sqlrl/reward_grpo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

namespace sqlrl {

namespace {
using ordered_json = nlohmann::ordered_json;
}

const char* to_string(RewardCause c) {
    switch (c) {
        case RewardCause::correct_execution: return "correct_execution";
        case RewardCause::wrong_result: return "wrong_result";
        case RewardCause::invalid_format: return "invalid_format";
    }
    return "wrong_result";
}

RewardRecord score(const Trajectory& traj, const std::string& gold_sql, Sandbox& handle,
                   const EquivalencePolicy& policy) {
    RewardRecord rec;
    rec.trajectory_id = traj.trajectory_id;
    rec.gold_sql = gold_sql;

    if (traj.terminal != Terminal::submitted || !traj.final_sql) {
        rec.reward = -1.0;
        rec.cause = RewardCause::invalid_format;
        return rec;
    }

    ExecOutcome gold = handle.execute(gold_sql);
    if (!gold.ok()) {
        throw GoldExecutionError("gold SQL failed (" + std::string(to_string(gold.status)) +
                                 "): " + gold.message);
    }
    ExecOutcome predicted = handle.execute(*traj.final_sql);
    EquivalenceVerdict verdict = equivalent(predicted, gold, policy);
    if (verdict.equivalent) {
        rec.reward = 1.0;
        rec.cause = RewardCause::correct_execution;
    } else {
        rec.reward = 0.0;
        rec.cause = RewardCause::wrong_result;
    }
    return rec;
}

std::vector<double> group_advantages(const std::vector<double>& rewards, double epsilon) {
    if (rewards.size() < 2)
        throw std::invalid_argument("group_advantages: need at least 2 rewards");
    if (epsilon < 0) throw std::invalid_argument("group_advantages: epsilon must be >= 0");

    const double n = static_cast<double>(rewards.size());
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= n;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    var /= n;
    const double std_pop = std::sqrt(var);

    std::vector<double> advantages(rewards.size(), 0.0);
    if (std_pop == 0.0) return advantages;
    for (size_t i = 0; i < rewards.size(); ++i)
        advantages[i] = (rewards[i] - mean) / (std_pop + epsilon);
    return advantages;
}

std::vector<AdvantageGroup> build_groups(
    const std::vector<std::pair<std::string, RewardRecord>>& by_question, double epsilon) {
    std::vector<std::string> order;
    std::unordered_map<std::string, AdvantageGroup> groups;
    for (const auto& [qid, rec] : by_question) {
        auto [it, inserted] = groups.try_emplace(qid);
        if (inserted) {
            it->second.question_id = qid;
            order.push_back(qid);
        }
        it->second.members.push_back(GroupMember{rec.trajectory_id, rec.reward, 0.0});
    }

    std::vector<AdvantageGroup> out;
    out.reserve(order.size());
    for (const auto& qid : order) {
        AdvantageGroup g = std::move(groups.at(qid));
        g.group_size = static_cast<int>(g.members.size());
        if (g.members.size() >= 2) {
            std::vector<double> rewards;
            rewards.reserve(g.members.size());
            for (const auto& m : g.members) rewards.push_back(m.reward);
            std::vector<double> adv = group_advantages(rewards, epsilon);
            for (size_t i = 0; i < adv.size(); ++i) g.members[i].advantage = adv[i];
        }
        out.push_back(std::move(g));
    }
    return out;
}

std::vector<AdvantageGroup> filter_groups(std::vector<AdvantageGroup>& groups) {
    std::vector<AdvantageGroup> kept;
    for (auto& g : groups) {
        bool all_equal = true;
        for (const auto& m : g.members) {
            if (m.reward != g.members.front().reward) {
                all_equal = false;
                break;
            }
        }
        g.filtered = all_equal;
        if (!g.filtered) kept.push_back(g);
    }
    return kept;
}

void write_group_audit(const std::vector<AdvantageGroup>& groups, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write group audit: " + path);
    for (const auto& g : groups) {
        ordered_json j;
        j["v"] = 1;
        j["question_id"] = g.question_id;
        j["group_size"] = g.group_size;
        j["filtered"] = g.filtered;
        j["members"] = ordered_json::array();
        for (const auto& m : g.members) {
            j["members"].push_back(ordered_json{{"trajectory_id", m.trajectory_id},
                                                {"reward", m.reward},
                                                {"advantage", m.advantage}});
        }
        out << j.dump() << "\n";
    }
}

int64_t export_rl_batch(const std::vector<Trajectory>& trajectories,
                        const std::vector<AdvantageGroup>& kept_groups,
                        const PromptTemplate& tmpl, const std::string& out_path) {
    std::unordered_map<std::string, const Trajectory*> by_id;
    for (const auto& t : trajectories) by_id.emplace(t.trajectory_id, &t);

    struct Row {
        std::string question_id;
        const GroupMember* member;
        const Trajectory* traj;
    };
    std::vector<Row> rows;
    for (const auto& g : kept_groups) {
        if (g.filtered) continue;
        for (const auto& m : g.members) {
            auto it = by_id.find(m.trajectory_id);
            if (it == by_id.end()) {
                throw std::runtime_error("export_rl_batch: no trajectory for kept member " +
                                         m.trajectory_id);
            }
            rows.push_back(Row{g.question_id, &m, it->second});
        }
    }
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        if (a.question_id != b.question_id) return a.question_id < b.question_id;
        return a.member->trajectory_id < b.member->trajectory_id;
    });

    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write RL batch: " + out_path);
    for (const auto& row : rows) {
        const Trajectory& traj = *row.traj;
        ordered_json j;
        j["v"] = 1;
        j["question_id"] = row.question_id;
        j["trajectory_id"] = traj.trajectory_id;
        j["reward"] = row.member->reward;
        j["advantage"] = row.member->advantage;

        // The full message sequence as the trainer sees it; response_spans
        // index into it and cover exactly the assistant texts.
        ordered_json messages = ordered_json::array();
        ordered_json spans = ordered_json::array();
        std::vector<ChatMessage> prompt = build_messages(tmpl, traj.context_text, traj.question, {});
        for (const auto& m : prompt)
            messages.push_back(ordered_json{{"role", m.role}, {"content", m.content}});
        for (size_t t = 0; t < traj.turns.size(); ++t) {
            const Turn& turn = traj.turns[t];
            const size_t index = messages.size();
            messages.push_back(ordered_json{{"role", "assistant"}, {"content", turn.thought}});
            spans.push_back(ordered_json{{"turn_index", t},
                                         {"message_index", index},
                                         {"char_start", 0},
                                         {"char_end", turn.thought.size()}});
            if (turn.observation) {
                messages.push_back(
                    ordered_json{{"role", "user"}, {"content", turn.observation->rendered}});
            }
        }
        j["prompt_messages"] = std::move(messages);
        j["response_spans"] = std::move(spans);
        out << j.dump() << "\n";
    }
    return static_cast<int64_t>(rows.size());
}

}  // namespace sqlrl
