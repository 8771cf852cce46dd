#include "sqlrl/cold_start.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "sqlrl/sqlexec.hpp"

namespace sqlrl {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string concat_sql(const Trajectory& t) {
    std::string out;
    for (const auto& turn : t.turns) {
        if (!turn.action) continue;
        if (!out.empty()) out += "\n";
        out += turn.action->sql;
    }
    return out;
}

std::string concat_thoughts(const Trajectory& t) {
    std::string out;
    for (const auto& turn : t.turns) {
        if (turn.thought.empty()) continue;
        if (!out.empty()) out += "\n";
        out += turn.thought;
    }
    return out;
}

std::vector<double> mix(const std::vector<double>& sql_side, const std::vector<double>& thoughts,
                        double w, const std::string& trajectory_id) {
    const size_t dim = sql_side.empty() ? thoughts.size() : sql_side.size();
    std::vector<double> v(dim, 0.0);
    for (size_t i = 0; i < sql_side.size(); ++i) v[i] += w * sql_side[i];
    for (size_t i = 0; i < thoughts.size(); ++i) v[i] += (1.0 - w) * thoughts[i];
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-12)
        throw std::runtime_error("hybrid embedding has zero norm for trajectory " + trajectory_id);
    for (double& x : v) x /= norm;
    return v;
}

}  // namespace

std::vector<HybridEmbedding> hybrid_embed_all(const std::vector<Trajectory>& trajectories,
                                              ModelClient& embedder, double sql_weight) {
    if (sql_weight < 0.0 || sql_weight > 1.0)
        throw std::invalid_argument("hybrid_embed: sql_weight outside [0,1]");

    struct Sides {
        std::string sql, thoughts;
        int sql_slot = -1, thoughts_slot = -1;
    };
    std::vector<Sides> sides(trajectories.size());
    std::vector<std::string> sql_texts, thought_texts;
    for (size_t i = 0; i < trajectories.size(); ++i) {
        const Trajectory& t = trajectories[i];
        if (t.turns.empty())
            throw std::invalid_argument("hybrid_embed: trajectory " + t.trajectory_id +
                                        " has no turns");
        sides[i].sql = concat_sql(t);
        sides[i].thoughts = concat_thoughts(t);
        if (sides[i].sql.empty() && sides[i].thoughts.empty())
            throw std::invalid_argument("hybrid_embed: trajectory " + t.trajectory_id +
                                        " has neither SQL nor thoughts");
        if (!sides[i].sql.empty()) {
            sides[i].sql_slot = static_cast<int>(sql_texts.size());
            sql_texts.push_back(sides[i].sql);
        }
        if (!sides[i].thoughts.empty()) {
            sides[i].thoughts_slot = static_cast<int>(thought_texts.size());
            thought_texts.push_back(sides[i].thoughts);
        }
    }

    std::vector<std::vector<double>> sql_vecs, thought_vecs;
    if (!sql_texts.empty()) sql_vecs = embedder.embed(sql_texts);
    if (!thought_texts.empty()) thought_vecs = embedder.embed(thought_texts);

    std::vector<HybridEmbedding> out;
    out.reserve(trajectories.size());
    static const std::vector<double> kNone;
    for (size_t i = 0; i < trajectories.size(); ++i) {
        const auto& s = sides[i].sql_slot >= 0 ? sql_vecs[sides[i].sql_slot] : kNone;
        const auto& t = sides[i].thoughts_slot >= 0 ? thought_vecs[sides[i].thoughts_slot] : kNone;
        HybridEmbedding e;
        e.trajectory_id = trajectories[i].trajectory_id;
        e.sql_weight = sql_weight;
        e.vector = mix(s, t, sql_weight, e.trajectory_id);
        out.push_back(std::move(e));
    }
    return out;
}

HybridEmbedding hybrid_embed(const Trajectory& trajectory, ModelClient& embedder,
                             double sql_weight) {
    return hybrid_embed_all({trajectory}, embedder, sql_weight).front();
}

std::vector<std::string> select_diverse(const std::vector<HybridEmbedding>& embeddings,
                                        size_t m) {
    if (m > embeddings.size())
        throw std::invalid_argument("select_diverse: M exceeds the population");
    if (m == 0) return {};
    const size_t dim = embeddings.front().vector.size();
    std::set<std::string> seen;
    for (const auto& e : embeddings) {
        if (e.vector.size() != dim)
            throw std::invalid_argument("select_diverse: mixed embedding dimensions");
        if (!seen.insert(e.trajectory_id).second)
            throw std::invalid_argument("select_diverse: duplicate trajectory_id " +
                                        e.trajectory_id);
    }

    auto distance = [&](size_t a, size_t b) {
        double dot = 0.0;
        for (size_t i = 0; i < dim; ++i) dot += embeddings[a].vector[i] * embeddings[b].vector[i];
        return 1.0 - dot;
    };

    size_t start = 0;
    for (size_t i = 1; i < embeddings.size(); ++i) {
        if (embeddings[i].trajectory_id < embeddings[start].trajectory_id) start = i;
    }

    std::vector<size_t> selected{start};
    std::vector<bool> taken(embeddings.size(), false);
    taken[start] = true;
    while (selected.size() < m) {
        size_t best = SIZE_MAX;
        double best_score = -1.0;
        for (size_t i = 0; i < embeddings.size(); ++i) {
            if (taken[i]) continue;
            double min_d = std::numeric_limits<double>::infinity();
            for (size_t s : selected) min_d = std::min(min_d, distance(i, s));
            if (best == SIZE_MAX || min_d > best_score ||
                (min_d == best_score &&
                 embeddings[i].trajectory_id < embeddings[best].trajectory_id)) {
                best = i;
                best_score = min_d;
            }
        }
        taken[best] = true;
        selected.push_back(best);
    }

    std::vector<std::string> ids;
    ids.reserve(selected.size());
    for (size_t i : selected) ids.push_back(embeddings[i].trajectory_id);
    return ids;
}

SftExport export_sft(const std::vector<Trajectory>& selected, const PromptTemplate& tmpl,
                     const std::string& db_root, const std::string& out_path) {
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + out_path);

    std::map<std::string, std::unique_ptr<Sandbox>> handles;
    SftExport result;

    for (const Trajectory& traj : selected) {
        if (traj.template_digest != tmpl.digest) {
            result.notes.push_back(traj.trajectory_id + ": template digest mismatch");
            continue;
        }
        Sandbox* handle = nullptr;
        try {
            auto it = handles.find(traj.db_id);
            if (it == handles.end()) {
                it = handles.emplace(traj.db_id,
                                     std::make_unique<Sandbox>(db_file_for(db_root, traj.db_id)))
                         .first;
            }
            handle = it->second.get();
        } catch (const std::exception& e) {
            result.notes.push_back(traj.trajectory_id + ": database unavailable: " + e.what());
            continue;
        }
        const ReplayReport replay = replay_trajectory(traj, *handle, EnvLimits{});
        if (!replay.ok) {
            result.notes.push_back(traj.trajectory_id + ": replay mismatch: " + replay.mismatch);
            continue;
        }

        ordered_json record;
        record["v"] = 1;
        record["trajectory_id"] = traj.trajectory_id;
        record["db_id"] = traj.db_id;
        record["template_digest"] = traj.template_digest;
        ordered_json messages = ordered_json::array();
        ordered_json spans = ordered_json::array();
        auto push = [&](const char* role, const std::string& text) {
            messages.push_back(ordered_json{{"role", role}, {"text", text}});
        };
        push("system", tmpl.text);
        push("user", "Schema context:\n" + traj.context_text + "\nQuestion: " + traj.question);
        for (const Turn& turn : traj.turns) {
            const size_t idx = messages.size();
            push("assistant", turn.thought);
            if (!turn.thought.empty())
                spans.push_back(ordered_json::array({idx, 0, turn.thought.size()}));
            if (turn.observation) push("tool", turn.observation->rendered);
        }
        record["messages"] = std::move(messages);
        record["mask_spans"] = std::move(spans);
        out << record.dump() << "\n";
        ++result.written;
    }
    return result;
}

}  // namespace sqlrl
