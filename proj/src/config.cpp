#include "sqlrl/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sqlrl/digest.hpp"

namespace sqlrl {

namespace {
using nlohmann::json;
}

std::string interpolate_env(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    size_t i = 0;
    while (i < text.size()) {
        if (text[i] == '$' && i + 1 < text.size() && text[i + 1] == '{') {
            const size_t close = text.find('}', i + 2);
            if (close == std::string::npos)
                throw ConfigError("unterminated ${ in config");
            const std::string name = text.substr(i + 2, close - i - 2);
            if (name.empty() ||
                !std::all_of(name.begin(), name.end(), [](unsigned char c) {
                    return std::isalnum(c) || c == '_';
                }))
                throw ConfigError("bad environment variable name in ${" + name + "}");
            const char* value = std::getenv(name.c_str());
            if (value == nullptr)
                throw ConfigError("unresolved environment variable ${" + name + "}");
            out += value;
            i = close + 1;
        } else {
            out += text[i++];
        }
    }
    return out;
}

HarnessConfig parse_config(const std::string& raw_bytes, const std::string& path) {
    HarnessConfig cfg;
    cfg.path = path;
    cfg.config_digest = sha256_hex(raw_bytes);

    json doc;
    try {
        doc = json::parse(interpolate_env(raw_bytes));
    } catch (const json::exception& e) {
        throw ConfigError("config is not valid JSON: " + std::string(e.what()));
    }
    if (!doc.is_object()) throw ConfigError("config root must be a JSON object");

    try {
        cfg.db_root = doc.value("db_root", cfg.db_root);
        cfg.cache_dir = doc.value("cache_dir", cfg.cache_dir);

        if (doc.contains("endpoints")) {
            for (const auto& [name, spec] : doc.at("endpoints").items()) {
                EndpointConfig ep;
                ep.name = name;
                ep.base_url = spec.value("base_url", "");
                ep.api_key_env = spec.value("api_key_env", "");
                ep.model = spec.value("model", "");
                ep.max_retries = spec.value("max_retries", ep.max_retries);
                ep.timeout_ms = spec.value("timeout_ms", ep.timeout_ms);
                ep.max_concurrent = spec.value("max_concurrent", ep.max_concurrent);
                if (ep.max_retries < 0) throw ConfigError("endpoint " + name + ": max_retries < 0");
                if (ep.max_concurrent < 1)
                    throw ConfigError("endpoint " + name + ": max_concurrent < 1");
                cfg.endpoints.emplace(name, std::move(ep));
            }
        }
        if (doc.contains("roles")) {
            for (const auto& [role, name] : doc.at("roles").items())
                cfg.roles[role] = name.get<std::string>();
        }
        if (doc.contains("transport")) {
            const auto& t = doc.at("transport");
            cfg.transport_kind = t.value("kind", cfg.transport_kind);
            cfg.cassette = t.value("cassette", cfg.cassette);
        }
        if (doc.contains("env")) {
            const auto& e = doc.at("env");
            cfg.limits.t_max = e.value("t_max", cfg.limits.t_max);
            cfg.limits.preview_rows = e.value("preview_rows", cfg.limits.preview_rows);
            cfg.limits.rollout_timeout_ms =
                e.value("rollout_timeout_ms", cfg.limits.rollout_timeout_ms);
        }
        if (doc.contains("factory")) {
            const auto& f = doc.at("factory");
            cfg.factory_k_cycles = f.value("k_cycles", cfg.factory_k_cycles);
            cfg.factory_n_candidates = f.value("n_candidates", cfg.factory_n_candidates);
            cfg.seed = f.value("seed", cfg.seed);
        }
        if (doc.contains("grpo")) {
            const auto& g = doc.at("grpo");
            cfg.grpo_group_size = g.value("group_size", cfg.grpo_group_size);
            cfg.grpo_epsilon = g.value("epsilon", cfg.grpo_epsilon);
        }
        if (doc.contains("selection")) {
            const auto& s = doc.at("selection");
            cfg.selection_m = s.value("m", cfg.selection_m);
            cfg.sql_weight = s.value("sql_weight", cfg.sql_weight);
        }
        if (doc.contains("eval")) {
            const auto& e = doc.at("eval");
            cfg.eval_n_samples = e.value("n_samples", cfg.eval_n_samples);
            cfg.retrieval_k = e.value("retrieval_k", cfg.retrieval_k);
        }
    } catch (const json::exception& e) {
        throw ConfigError("config field has a wrong type: " + std::string(e.what()));
    }

    if (cfg.transport_kind != "http" && cfg.transport_kind != "record" &&
        cfg.transport_kind != "replay")
        throw ConfigError("transport.kind must be http, record or replay");
    if ((cfg.transport_kind == "record" || cfg.transport_kind == "replay") && cfg.cassette.empty())
        throw ConfigError("transport.kind " + cfg.transport_kind + " needs transport.cassette");
    if (cfg.limits.t_max < 1) throw ConfigError("env.t_max must be >= 1");
    if (cfg.limits.preview_rows < 1) throw ConfigError("env.preview_rows must be >= 1");
    if (cfg.limits.rollout_timeout_ms < 1) throw ConfigError("env.rollout_timeout_ms must be >= 1");
    if (cfg.factory_k_cycles < 1) throw ConfigError("factory.k_cycles must be >= 1");
    if (cfg.factory_n_candidates < 1) throw ConfigError("factory.n_candidates must be >= 1");
    if (cfg.grpo_group_size < 2) throw ConfigError("grpo.group_size must be >= 2");
    if (cfg.grpo_epsilon < 0) throw ConfigError("grpo.epsilon must be >= 0");
    if (cfg.sql_weight < 0 || cfg.sql_weight > 1)
        throw ConfigError("selection.sql_weight must lie in [0,1]");
    if (cfg.eval_n_samples < 1) throw ConfigError("eval.n_samples must be >= 1");
    if (cfg.retrieval_k < 1) throw ConfigError("eval.retrieval_k must be >= 1");
    for (const auto& [role, name] : cfg.roles) {
        if (!cfg.endpoints.count(name))
            throw ConfigError("role " + role + " names unknown endpoint " + name);
    }
    return cfg;
}

HarnessConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path);
}

std::shared_ptr<ModelTransport> make_transport(const HarnessConfig& cfg) {
    if (cfg.transport_kind == "replay") return std::make_shared<ReplayTransport>(cfg.cassette);
    auto http = std::make_shared<HttpTransport>();
    if (cfg.transport_kind == "record")
        return std::make_shared<RecordingTransport>(http, cfg.cassette);
    return http;
}

std::optional<EndpointConfig> endpoint_for_role(const HarnessConfig& cfg,
                                                const std::string& role) {
    auto it = cfg.roles.find(role);
    if (it == cfg.roles.end()) return std::nullopt;
    auto ep = cfg.endpoints.find(it->second);
    if (ep == cfg.endpoints.end())
        throw ConfigError("role " + role + " names unknown endpoint " + it->second);
    return ep->second;
}

}  // namespace sqlrl
