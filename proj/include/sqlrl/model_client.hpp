#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sqlrl {

struct ChatMessage {
    std::string role;  // system | user | assistant | tool
    std::string content;
};

struct SamplingParams {
    double temperature = 0.7;
    int max_tokens = 2048;
    int n = 1;
};

struct EndpointConfig {
    std::string name;
    std::string base_url;
    std::string api_key_env;
    std::string model;
    int max_retries = 2;
    int timeout_ms = 30000;
    int max_concurrent = 8;
};

class EndpointError : public std::runtime_error {
public:
    EndpointError(const std::string& what, bool retryable)
        : std::runtime_error(what), retryable_(retryable) {}
    bool retryable() const { return retryable_; }

private:
    bool retryable_;
};

// One attempt against a backing service. Implementations: HTTP, scripted
// mocks, cassette record/replay.
class ModelTransport {
public:
    virtual ~ModelTransport() = default;
    virtual std::vector<std::string> chat(const EndpointConfig& endpoint,
                                          const std::vector<ChatMessage>& messages,
                                          const SamplingParams& sampling) = 0;
    virtual std::vector<std::vector<double>> embed(const EndpointConfig& endpoint,
                                                   const std::vector<std::string>& texts) = 0;
};

struct CallLogEntry {
    std::string endpoint;
    std::string kind;  // chat | embed
    std::string request_digest;
    std::string response_digest;
    int64_t latency_ms = 0;
    int attempts = 0;
    int64_t timestamp_ms = 0;
};

// Append-only, thread-safe. Optionally mirrors entries to a JSONL file.
class CallLog {
public:
    void append(CallLogEntry entry);
    std::vector<CallLogEntry> entries() const;
    void set_sink(const std::string& jsonl_path);

private:
    mutable std::mutex mu_;
    std::vector<CallLogEntry> entries_;
    std::string sink_path_;
};

// Stable digest of a request payload; cassette key and log id.
std::string chat_request_key(const EndpointConfig& endpoint,
                             const std::vector<ChatMessage>& messages,
                             const SamplingParams& sampling);
std::string embed_request_key(const EndpointConfig& endpoint,
                              const std::vector<std::string>& texts);

// Retries, bounded per-endpoint concurrency, call logging and embedding
// normalization around a transport. Thread-safe and shareable.
class ModelClient {
public:
    ModelClient(EndpointConfig config, std::shared_ptr<ModelTransport> transport,
                std::shared_ptr<CallLog> log = nullptr);

    std::vector<std::string> chat(const std::vector<ChatMessage>& messages,
                                  const SamplingParams& sampling = {});
    std::string chat_one(const std::vector<ChatMessage>& messages,
                         const SamplingParams& sampling = {});
    // Unit-normalized regardless of what the server returns.
    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts);

    const EndpointConfig& config() const { return config_; }
    void set_backoff_base_ms(int ms) { backoff_base_ms_ = ms; }

private:
    class Semaphore {
    public:
        explicit Semaphore(int count) : count_(count) {}
        void acquire();
        void release();

    private:
        std::mutex mu_;
        std::condition_variable cv_;
        int count_;
    };

    template <typename Fn>
    auto with_retries(const std::string& kind, const std::string& request_digest, Fn&& fn)
        -> decltype(fn());

    EndpointConfig config_;
    std::shared_ptr<ModelTransport> transport_;
    std::shared_ptr<CallLog> log_;
    Semaphore slots_;
    int backoff_base_ms_ = 25;
};

// ---- transports ----

// Chat-completions HTTP+JSON. Request/response field names are documented in
// docs/protocol.md.
class HttpTransport : public ModelTransport {
public:
    std::vector<std::string> chat(const EndpointConfig&, const std::vector<ChatMessage>&,
                                  const SamplingParams&) override;
    std::vector<std::vector<double>> embed(const EndpointConfig&,
                                           const std::vector<std::string>&) override;
};

// Deterministic mock. Chat replies come from substring rules matched against
// the last message; embeddings are a hashed bag-of-tokens so cosine tracks
// token overlap.
class ScriptedTransport : public ModelTransport {
public:
    // Rules are checked in registration order; each consumes replies FIFO and
    // then repeats the last one (unless repeat_last = false, after which the
    // rule is exhausted and skipped).
    void add_rule(const std::string& needle, std::vector<std::string> replies,
                  bool repeat_last = true);
    void set_default_reply(std::string reply);
    void fail_next(int count, bool retryable = true);
    void set_embed_dim(size_t dim) { embed_dim_ = dim; }

    int chat_calls() const;
    int embed_calls() const;
    int max_in_flight() const;

    std::vector<std::string> chat(const EndpointConfig&, const std::vector<ChatMessage>&,
                                  const SamplingParams&) override;
    std::vector<std::vector<double>> embed(const EndpointConfig&,
                                           const std::vector<std::string>&) override;

    static std::vector<double> bag_of_tokens_embedding(const std::string& text, size_t dim);

private:
    struct Rule {
        std::string needle;
        std::deque<std::string> replies;
        std::string last;
        bool repeat_last;
    };
    void enter();
    void leave();

    mutable std::mutex mu_;
    std::vector<Rule> rules_;
    std::optional<std::string> default_reply_;
    int pending_failures_ = 0;
    bool failures_retryable_ = true;
    size_t embed_dim_ = 256;
    int chat_calls_ = 0;
    int embed_calls_ = 0;
    int in_flight_ = 0;
    int max_in_flight_ = 0;
};

// Cassette formats: one JSON object per line,
//   {"v":1,"kind":"chat|embed","key":<digest>,"responses":[...]}.
class RecordingTransport : public ModelTransport {
public:
    RecordingTransport(std::shared_ptr<ModelTransport> inner, std::string cassette_path);
    std::vector<std::string> chat(const EndpointConfig&, const std::vector<ChatMessage>&,
                                  const SamplingParams&) override;
    std::vector<std::vector<double>> embed(const EndpointConfig&,
                                           const std::vector<std::string>&) override;

private:
    std::shared_ptr<ModelTransport> inner_;
    std::string path_;
    std::mutex mu_;
};

class ReplayTransport : public ModelTransport {
public:
    explicit ReplayTransport(const std::string& cassette_path);  // throws on bad file
    std::vector<std::string> chat(const EndpointConfig&, const std::vector<ChatMessage>&,
                                  const SamplingParams&) override;
    std::vector<std::vector<double>> embed(const EndpointConfig&,
                                           const std::vector<std::string>&) override;

private:
    std::mutex mu_;
    std::map<std::string, std::deque<std::vector<std::string>>> chat_by_key_;
    std::map<std::string, std::deque<std::vector<std::vector<double>>>> embed_by_key_;
};

std::vector<double> unit_normalize(std::vector<double> v);  // throws on zero norm

}  // namespace sqlrl
