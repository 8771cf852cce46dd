#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sqlrl/agent_env.hpp"
#include "sqlrl/model_client.hpp"

namespace sqlrl {

inline constexpr double kDefaultSqlWeight = 0.5;

struct HybridEmbedding {
    std::string trajectory_id;
    std::vector<double> vector;  // unit norm
    double sql_weight = kDefaultSqlWeight;
};

// v = normalize(w * e(SQL actions) + (1-w) * e(thoughts)), each side embedded
// as one concatenated text and unit-normalized by the client. A side with no
// text contributes a zero vector; both sides empty is an error, as is a zero
// mix. Embedder failures propagate, selection has no lexical fallback.
HybridEmbedding hybrid_embed(const Trajectory& trajectory, ModelClient& embedder,
                             double sql_weight = kDefaultSqlWeight);

// Same mixing for a whole population with one embed call per side.
std::vector<HybridEmbedding> hybrid_embed_all(const std::vector<Trajectory>& trajectories,
                                              ModelClient& embedder,
                                              double sql_weight = kDefaultSqlWeight);

// Greedy farthest-point selection under cosine distance: start from the
// lexicographically smallest trajectory_id, then repeatedly take the
// candidate with the largest minimum distance to the selected set, ties by
// trajectory_id. M > population or mixed dimensions throw.
std::vector<std::string> select_diverse(const std::vector<HybridEmbedding>& embeddings, size_t m);

struct SftExport {
    int64_t written = 0;
    std::vector<std::string> notes;  // one per skipped trajectory
};

// One JSONL record per replay-valid trajectory: the rollout prompt as system
// and user messages, every model output as an assistant message covered by a
// mask span, every observation as an unmasked tool message. Trajectories that
// fail replay or carry a different template digest are skipped with a note.
SftExport export_sft(const std::vector<Trajectory>& selected, const PromptTemplate& tmpl,
                     const std::string& db_root, const std::string& out_path);

}  // namespace sqlrl
