#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include "sqlrl/agent_env.hpp"
#include "sqlrl/cold_start.hpp"
#include "sqlrl/data_factory.hpp"
#include "sqlrl/model_client.hpp"
#include "sqlrl/reward_grpo.hpp"
#include "sqlrl/schema_context.hpp"

namespace sqlrl {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct HarnessConfig {
    std::string path;
    std::string config_digest;  // sha256 of the file bytes BEFORE interpolation

    std::string db_root = "fixtures/db";
    std::string cache_dir = ".cache";

    std::map<std::string, EndpointConfig> endpoints;
    std::map<std::string, std::string> roles;  // policy/judge/generator/regen/embedder/describer

    std::string transport_kind = "http";  // http | record | replay
    std::string cassette;

    EnvLimits limits;
    int factory_k_cycles = kDefaultGenCheckCycles;
    int factory_n_candidates = kDefaultCandidatePool;
    uint64_t seed = 1;
    int grpo_group_size = kDefaultGroupSize;
    double grpo_epsilon = kDefaultGrpoEpsilon;
    size_t selection_m = 4;
    double sql_weight = kDefaultSqlWeight;
    int eval_n_samples = 1;
    int retrieval_k = kDefaultRetrievalK;
};

// Replaces every ${NAME} with the variable's value; an unset variable is a
// ConfigError. Interpolation happens after the digest is taken, so secrets
// never reach manifests.
std::string interpolate_env(const std::string& text);

HarnessConfig parse_config(const std::string& raw_bytes, const std::string& path);
HarnessConfig load_config(const std::string& path);

// One transport per run, shared by every client. record wraps HTTP and
// appends to the cassette; replay never touches the network.
std::shared_ptr<ModelTransport> make_transport(const HarnessConfig& cfg);

// The endpoint a role resolves to; nullopt when the role is not configured.
// A role naming a missing endpoint is a ConfigError.
std::optional<EndpointConfig> endpoint_for_role(const HarnessConfig& cfg, const std::string& role);

}  // namespace sqlrl
