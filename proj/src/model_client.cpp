#include "sqlrl/model_client.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "sqlrl/digest.hpp"

// httplib pulls in a lot; keep it out of the public header.
#include <httplib.h>

namespace sqlrl {

using nlohmann::json;

namespace {

int64_t wall_now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

json messages_to_json(const std::vector<ChatMessage>& messages) {
    json arr = json::array();
    for (const auto& m : messages) {
        arr.push_back({{"role", m.role}, {"content", m.content}});
    }
    return arr;
}

json sampling_to_json(const SamplingParams& sampling) {
    return {{"temperature", sampling.temperature},
            {"max_tokens", sampling.max_tokens},
            {"n", sampling.n}};
}

}  // namespace

void CallLog::append(CallLogEntry entry) {
    std::lock_guard<std::mutex> lock(mu_);
    if (!sink_path_.empty()) {
        std::ofstream out(sink_path_, std::ios::app);
        json j = {{"endpoint", entry.endpoint},
                  {"kind", entry.kind},
                  {"request_digest", entry.request_digest},
                  {"response_digest", entry.response_digest},
                  {"latency_ms", entry.latency_ms},
                  {"attempts", entry.attempts},
                  {"timestamp_ms", entry.timestamp_ms}};
        out << j.dump() << "\n";
    }
    entries_.push_back(std::move(entry));
}

std::vector<CallLogEntry> CallLog::entries() const {
    std::lock_guard<std::mutex> lock(mu_);
    return entries_;
}

void CallLog::set_sink(const std::string& jsonl_path) {
    std::lock_guard<std::mutex> lock(mu_);
    sink_path_ = jsonl_path;
}

std::string chat_request_key(const EndpointConfig& endpoint,
                             const std::vector<ChatMessage>& messages,
                             const SamplingParams& sampling) {
    json j = {{"endpoint", endpoint.name},
              {"kind", "chat"},
              {"messages", messages_to_json(messages)},
              {"sampling", sampling_to_json(sampling)}};
    return sha256_hex(j.dump());
}

std::string embed_request_key(const EndpointConfig& endpoint,
                              const std::vector<std::string>& texts) {
    json j = {{"endpoint", endpoint.name}, {"kind", "embed"}, {"texts", texts}};
    return sha256_hex(j.dump());
}

void ModelClient::Semaphore::acquire() {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [this] { return count_ > 0; });
    --count_;
}

void ModelClient::Semaphore::release() {
    {
        std::lock_guard<std::mutex> lock(mu_);
        ++count_;
    }
    cv_.notify_one();
}

ModelClient::ModelClient(EndpointConfig config, std::shared_ptr<ModelTransport> transport,
                         std::shared_ptr<CallLog> log)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      log_(std::move(log)),
      slots_(std::max(1, config_.max_concurrent)) {}

template <typename Fn>
auto ModelClient::with_retries(const std::string& kind, const std::string& request_digest,
                               Fn&& fn) -> decltype(fn()) {
    slots_.acquire();
    struct Release {
        Semaphore* s;
        ~Release() { s->release(); }
    } release{&slots_};

    const auto started = std::chrono::steady_clock::now();
    int attempts = 0;
    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        attempts = attempt + 1;
        try {
            auto result = fn();
            if (log_) {
                auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
                                   std::chrono::steady_clock::now() - started)
                                   .count();
                log_->append({config_.name, kind, request_digest,
                              short_digest(json(result).dump()), latency, attempts,
                              wall_now_ms()});
            }
            return result;
        } catch (const EndpointError& e) {
            last_error = e.what();
            if (!e.retryable() || attempt == config_.max_retries) {
                if (log_) {
                    auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
                                       std::chrono::steady_clock::now() - started)
                                       .count();
                    log_->append({config_.name, kind, request_digest, "error", latency,
                                  attempts, wall_now_ms()});
                }
                if (!e.retryable()) throw;
                throw EndpointError("exhausted retries (" + std::to_string(attempts) +
                                        " attempts) against " + config_.name + ": " +
                                        last_error,
                                    false);
            }
            std::this_thread::sleep_for(
                std::chrono::milliseconds(std::min(1000, backoff_base_ms_ << attempt)));
        }
    }
    throw EndpointError("unreachable retry state for " + config_.name, false);
}

std::vector<std::string> ModelClient::chat(const std::vector<ChatMessage>& messages,
                                           const SamplingParams& sampling) {
    if (messages.empty()) throw EndpointError("chat: empty message list", false);
    const std::string key = chat_request_key(config_, messages, sampling);
    return with_retries("chat", key,
                        [&] { return transport_->chat(config_, messages, sampling); });
}

std::string ModelClient::chat_one(const std::vector<ChatMessage>& messages,
                                  const SamplingParams& sampling) {
    auto all = chat(messages, sampling);
    if (all.empty()) throw EndpointError("chat: endpoint returned no completions", false);
    return all.front();
}

std::vector<std::vector<double>> ModelClient::embed(const std::vector<std::string>& texts) {
    if (texts.empty()) throw EndpointError("embed: empty text list", false);
    const std::string key = embed_request_key(config_, texts);
    auto raw = with_retries("embed", key, [&] { return transport_->embed(config_, texts); });
    if (raw.size() != texts.size()) {
        throw EndpointError("embed: endpoint returned " + std::to_string(raw.size()) +
                                " vectors for " + std::to_string(texts.size()) + " texts",
                            false);
    }
    for (auto& v : raw) v = unit_normalize(std::move(v));
    return raw;
}

std::vector<double> unit_normalize(std::vector<double> v) {
    double norm_sq = 0;
    for (double x : v) norm_sq += x * x;
    double norm = std::sqrt(norm_sq);
    if (!(norm > 0) || !std::isfinite(norm)) {
        throw EndpointError("embed: zero-norm embedding", false);
    }
    for (double& x : v) x /= norm;
    return v;
}

// ---- HttpTransport ----

namespace {

struct ParsedUrl {
    std::string host_port;  // scheme://host:port
    std::string prefix;     // path prefix, no trailing slash
};

ParsedUrl split_url(const std::string& base_url) {
    auto scheme_end = base_url.find("://");
    size_t path_start = base_url.find('/', scheme_end == std::string::npos
                                               ? 0
                                               : scheme_end + 3);
    if (path_start == std::string::npos) return {base_url, ""};
    std::string prefix = base_url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {base_url.substr(0, path_start), prefix};
}

httplib::Headers auth_headers(const EndpointConfig& endpoint) {
    httplib::Headers headers;
    if (!endpoint.api_key_env.empty()) {
        if (const char* key = std::getenv(endpoint.api_key_env.c_str())) {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }
    }
    return headers;
}

json post_json(const EndpointConfig& endpoint, const std::string& path, const json& body) {
    ParsedUrl url = split_url(endpoint.base_url);
    httplib::Client client(url.host_port);
    client.set_connection_timeout(std::max(1, endpoint.timeout_ms / 1000), 0);
    client.set_read_timeout(std::max(1, endpoint.timeout_ms / 1000), 0);
    client.set_write_timeout(std::max(1, endpoint.timeout_ms / 1000), 0);

    auto res = client.Post(url.prefix + path, auth_headers(endpoint), body.dump(),
                           "application/json");
    if (!res) {
        throw EndpointError("connection to " + endpoint.base_url + " failed: " +
                                httplib::to_string(res.error()),
                            true);
    }
    if (res->status == 401 || res->status == 403) {
        throw EndpointError("auth failure (" + std::to_string(res->status) + ") from " +
                                endpoint.base_url,
                            false);
    }
    if (res->status == 413) {
        throw EndpointError("payload too large for " + endpoint.base_url, false);
    }
    if (res->status == 429 || res->status >= 500) {
        throw EndpointError("transient HTTP " + std::to_string(res->status) + " from " +
                                endpoint.base_url,
                            true);
    }
    if (res->status != 200) {
        throw EndpointError("HTTP " + std::to_string(res->status) + " from " +
                                endpoint.base_url + ": " + res->body,
                            false);
    }
    try {
        return json::parse(res->body);
    } catch (const json::exception& e) {
        throw EndpointError(std::string("malformed JSON response: ") + e.what(), false);
    }
}

}  // namespace

std::vector<std::string> HttpTransport::chat(const EndpointConfig& endpoint,
                                             const std::vector<ChatMessage>& messages,
                                             const SamplingParams& sampling) {
    json body = {{"messages", messages_to_json(messages)},
                 {"temperature", sampling.temperature},
                 {"max_tokens", sampling.max_tokens},
                 {"n", sampling.n}};
    if (!endpoint.model.empty()) body["model"] = endpoint.model;
    json reply = post_json(endpoint, "/chat/completions", body);
    std::vector<std::string> out;
    try {
        for (const auto& choice : reply.at("choices")) {
            out.push_back(choice.at("message").at("content").get<std::string>());
        }
    } catch (const json::exception& e) {
        throw EndpointError(std::string("unexpected chat response shape: ") + e.what(),
                            false);
    }
    if (out.empty()) throw EndpointError("chat response has no choices", false);
    return out;
}

std::vector<std::vector<double>> HttpTransport::embed(const EndpointConfig& endpoint,
                                                      const std::vector<std::string>& texts) {
    json body = {{"input", texts}};
    if (!endpoint.model.empty()) body["model"] = endpoint.model;
    json reply = post_json(endpoint, "/embeddings", body);
    std::vector<std::vector<double>> out(texts.size());
    try {
        size_t fallback_index = 0;
        for (const auto& item : reply.at("data")) {
            size_t index = item.contains("index") ? item.at("index").get<size_t>()
                                                  : fallback_index;
            if (index >= out.size()) throw EndpointError("embedding index out of range", false);
            out[index] = item.at("embedding").get<std::vector<double>>();
            ++fallback_index;
        }
    } catch (const json::exception& e) {
        throw EndpointError(std::string("unexpected embeddings response shape: ") + e.what(),
                            false);
    }
    return out;
}

// ---- ScriptedTransport ----

void ScriptedTransport::add_rule(const std::string& needle, std::vector<std::string> replies,
                                 bool repeat_last) {
    std::lock_guard<std::mutex> lock(mu_);
    Rule rule;
    rule.needle = needle;
    rule.last = replies.empty() ? "" : replies.back();
    for (auto& r : replies) rule.replies.push_back(std::move(r));
    rule.repeat_last = repeat_last;
    rules_.push_back(std::move(rule));
}

void ScriptedTransport::set_default_reply(std::string reply) {
    std::lock_guard<std::mutex> lock(mu_);
    default_reply_ = std::move(reply);
}

void ScriptedTransport::fail_next(int count, bool retryable) {
    std::lock_guard<std::mutex> lock(mu_);
    pending_failures_ = count;
    failures_retryable_ = retryable;
}

int ScriptedTransport::chat_calls() const {
    std::lock_guard<std::mutex> lock(mu_);
    return chat_calls_;
}

int ScriptedTransport::embed_calls() const {
    std::lock_guard<std::mutex> lock(mu_);
    return embed_calls_;
}

int ScriptedTransport::max_in_flight() const {
    std::lock_guard<std::mutex> lock(mu_);
    return max_in_flight_;
}

void ScriptedTransport::enter() {
    ++in_flight_;
    max_in_flight_ = std::max(max_in_flight_, in_flight_);
}

void ScriptedTransport::leave() { --in_flight_; }

std::vector<std::string> ScriptedTransport::chat(const EndpointConfig&,
                                                 const std::vector<ChatMessage>& messages,
                                                 const SamplingParams& sampling) {
    std::unique_lock<std::mutex> lock(mu_);
    enter();
    ++chat_calls_;
    // Hold the slot briefly so concurrency instrumentation can observe overlap.
    lock.unlock();
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
    lock.lock();
    leave();

    if (pending_failures_ > 0) {
        --pending_failures_;
        throw EndpointError("scripted failure", failures_retryable_);
    }
    const std::string& haystack = messages.back().content;
    std::string reply;
    bool found = false;
    for (auto& rule : rules_) {
        if (haystack.find(rule.needle) == std::string::npos) continue;
        if (!rule.replies.empty()) {
            reply = rule.replies.front();
            rule.replies.pop_front();
            found = true;
        } else if (rule.repeat_last) {
            reply = rule.last;
            found = true;
        }
        if (found) break;
    }
    if (!found) {
        if (!default_reply_) {
            throw EndpointError("scripted transport: no rule matches message", false);
        }
        reply = *default_reply_;
    }
    return std::vector<std::string>(static_cast<size_t>(std::max(1, sampling.n)), reply);
}

std::vector<double> ScriptedTransport::bag_of_tokens_embedding(const std::string& text,
                                                               size_t dim) {
    std::vector<double> v(dim, 0.0);
    std::string token;
    auto flush = [&] {
        if (token.empty()) return;
        uint64_t h = 1469598103934665603ull;  // FNV-1a
        for (unsigned char c : token) {
            h ^= c;
            h *= 1099511628211ull;
        }
        v[h % dim] += 1.0;
        token.clear();
    };
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            token.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else {
            flush();
        }
    }
    flush();
    return v;
}

std::vector<std::vector<double>> ScriptedTransport::embed(const EndpointConfig&,
                                                          const std::vector<std::string>& texts) {
    std::lock_guard<std::mutex> lock(mu_);
    ++embed_calls_;
    if (pending_failures_ > 0) {
        --pending_failures_;
        throw EndpointError("scripted failure", failures_retryable_);
    }
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(bag_of_tokens_embedding(t, embed_dim_));
    return out;
}

// ---- cassette transports ----

RecordingTransport::RecordingTransport(std::shared_ptr<ModelTransport> inner,
                                       std::string cassette_path)
    : inner_(std::move(inner)), path_(std::move(cassette_path)) {}

std::vector<std::string> RecordingTransport::chat(const EndpointConfig& endpoint,
                                                  const std::vector<ChatMessage>& messages,
                                                  const SamplingParams& sampling) {
    auto responses = inner_->chat(endpoint, messages, sampling);
    std::lock_guard<std::mutex> lock(mu_);
    std::ofstream out(path_, std::ios::app);
    json j = {{"v", 1},
              {"kind", "chat"},
              {"key", chat_request_key(endpoint, messages, sampling)},
              {"responses", responses}};
    out << j.dump() << "\n";
    return responses;
}

std::vector<std::vector<double>> RecordingTransport::embed(const EndpointConfig& endpoint,
                                                           const std::vector<std::string>& texts) {
    auto responses = inner_->embed(endpoint, texts);
    std::lock_guard<std::mutex> lock(mu_);
    std::ofstream out(path_, std::ios::app);
    json j = {{"v", 1},
              {"kind", "embed"},
              {"key", embed_request_key(endpoint, texts)},
              {"responses", responses}};
    out << j.dump() << "\n";
    return responses;
}

ReplayTransport::ReplayTransport(const std::string& cassette_path) {
    std::ifstream in(cassette_path);
    if (!in) throw std::runtime_error("cannot open cassette: " + cassette_path);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error("cassette " + cassette_path + " line " +
                                     std::to_string(lineno) + ": " + e.what());
        }
        const std::string kind = j.at("kind").get<std::string>();
        const std::string key = j.at("key").get<std::string>();
        if (kind == "chat") {
            chat_by_key_[key].push_back(j.at("responses").get<std::vector<std::string>>());
        } else if (kind == "embed") {
            embed_by_key_[key].push_back(
                j.at("responses").get<std::vector<std::vector<double>>>());
        }
    }
}

std::vector<std::string> ReplayTransport::chat(const EndpointConfig& endpoint,
                                               const std::vector<ChatMessage>& messages,
                                               const SamplingParams& sampling) {
    const std::string key = chat_request_key(endpoint, messages, sampling);
    std::lock_guard<std::mutex> lock(mu_);
    auto it = chat_by_key_.find(key);
    if (it == chat_by_key_.end() || it->second.empty()) {
        throw EndpointError("cassette miss for chat request " + short_digest(key), false);
    }
    auto responses = it->second.front();
    if (it->second.size() > 1) it->second.pop_front();  // last response replays forever
    return responses;
}

std::vector<std::vector<double>> ReplayTransport::embed(const EndpointConfig& endpoint,
                                                        const std::vector<std::string>& texts) {
    const std::string key = embed_request_key(endpoint, texts);
    std::lock_guard<std::mutex> lock(mu_);
    auto it = embed_by_key_.find(key);
    if (it == embed_by_key_.end() || it->second.empty()) {
        throw EndpointError("cassette miss for embed request " + short_digest(key), false);
    }
    auto responses = it->second.front();
    if (it->second.size() > 1) it->second.pop_front();
    return responses;
}

}  // namespace sqlrl
