#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sqlrl/agent_env.hpp"
#include "sqlrl/sqlexec.hpp"

namespace sqlrl {

inline constexpr double kDefaultGrpoEpsilon = 1e-4;
inline constexpr int kDefaultGroupSize = 10;

enum class RewardCause { correct_execution, wrong_result, invalid_format };

const char* to_string(RewardCause c);

struct RewardRecord {
    std::string trajectory_id;
    double reward = 0.0;  // 1.0, 0.0 or -1.0; pinned to the cause
    RewardCause cause = RewardCause::wrong_result;
    std::string gold_sql;
};

class GoldExecutionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Sparse reward. A trajectory that never submitted is an invalid format.
// Gold failing to execute is a benchmark bug and throws, never a reward.
RewardRecord score(const Trajectory& traj, const std::string& gold_sql, Sandbox& handle,
                   const EquivalencePolicy& policy);

// (r_i - mean) / (pop_std + epsilon); all zeros when the group has zero
// variance. Throws std::invalid_argument for groups smaller than 2.
std::vector<double> group_advantages(const std::vector<double>& rewards, double epsilon);

struct GroupMember {
    std::string trajectory_id;
    double reward = 0.0;
    double advantage = 0.0;
};

struct AdvantageGroup {
    std::string question_id;
    std::vector<GroupMember> members;
    int group_size = 0;
    bool filtered = false;  // all member rewards equal: no gradient signal
};

// Groups rewards by question, computing advantages per group. Input order
// inside a question is preserved. Single-member groups are filtered.
std::vector<AdvantageGroup> build_groups(
    const std::vector<std::pair<std::string, RewardRecord>>& by_question, double epsilon);

// Marks zero-variance groups filtered and returns only the kept ones; the
// caller still owns the full list for the audit log.
std::vector<AdvantageGroup> filter_groups(std::vector<AdvantageGroup>& groups);

void write_group_audit(const std::vector<AdvantageGroup>& groups, const std::string& path);

// One line per exported trajectory: prompt messages, response spans covering
// exactly the agent outputs, reward and advantage. Ordered by (question_id,
// trajectory_id). Returns records written; a kept member without a matching
// trajectory or record is a hard error.
int64_t export_rl_batch(const std::vector<Trajectory>& trajectories,
                        const std::vector<AdvantageGroup>& kept_groups,
                        const PromptTemplate& tmpl, const std::string& out_path);

}  // namespace sqlrl
