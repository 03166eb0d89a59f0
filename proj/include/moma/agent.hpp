#pragma once

// Uniform client for text-generation and embedding backends. Two backend
// kinds: `remote` speaks an OpenAI-compatible wire format (POST
// /v1/chat/completions and /v1/embeddings), `mock` dispatches to registered
// in-process functions so every test runs without network access. Transient
// failures retry with exponential backoff; a per-backend admission gate
// bounds in-flight requests.

#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "moma/core.hpp"
#include "moma/detail/rng.hpp"
#include "moma/detail/sha256.hpp"
#include "moma/matrix.hpp"

// httplib is only needed for the remote backend; keep it out of unity builds
// that never talk to the network by defining MOMA_NO_REMOTE.
#ifndef MOMA_NO_REMOTE
#include <httplib.h>
#endif

namespace moma {

enum class BackendKind { remote, mock };

inline std::string to_string(BackendKind k) {
    return k == BackendKind::remote ? "remote" : "mock";
}

struct AgentConfig {
    std::string agent_id;
    BackendKind backend = BackendKind::mock;
    std::string endpoint_url;            // remote only, scheme://host:port
    std::string model_name;
    double temperature = 0.0;            // 0 for reproducible runs
    int max_tokens = 512;
    std::chrono::milliseconds timeout{30000};
    int max_retries = 3;
    int requests_in_flight_limit = 4;
    double backoff_base_s = 0.5;
    std::string api_key_env;             // env var holding the bearer token, if any
    std::string mock_behavior = "echo";  // mock only
    std::string mock_embedder = "hash";  // mock only
    int embedding_dim = 0;               // declared embedding width; 0 = accept backend's

    void validate() const {
        if (agent_id.empty()) throw ConfigError("agent config: agent_id is required");
        if (backend == BackendKind::remote && endpoint_url.empty())
            throw ConfigError("agent '" + agent_id + "': remote backend requires endpoint_url");
        if (temperature < 0)
            throw ConfigError("agent '" + agent_id + "': temperature must be >= 0");
        if (max_tokens <= 0)
            throw ConfigError("agent '" + agent_id + "': max_tokens must be positive");
        if (max_retries < 0)
            throw ConfigError("agent '" + agent_id + "': max_retries must be >= 0");
        if (requests_in_flight_limit <= 0)
            throw ConfigError("agent '" + agent_id + "': requests_in_flight_limit must be positive");
        if (embedding_dim < 0)
            throw ConfigError("agent '" + agent_id + "': embedding_dim must be >= 0");
    }

    std::string fingerprint() const {
        if (backend == BackendKind::mock) return model_name + "@mock:" + mock_behavior;
        return model_name + "@" + endpoint_url;
    }
};

struct AttachmentRef {
    std::string path;
    std::string media_type = "image/png";

    friend bool operator==(const AttachmentRef&, const AttachmentRef&) = default;
};

struct AgentRequest {
    std::string prompt;
    std::vector<AttachmentRef> attachments;
    std::optional<double> temperature_override;
    std::optional<int> max_tokens_override;
};

struct AgentResponse {
    std::string text;
    std::string backend_fingerprint;
    std::chrono::microseconds latency{0};
    int retry_count = 0;
};

struct EmbeddingResponse {
    Vec vector;
    int dimension = 0;
};

// Deterministic jittered exponential backoff. `unit` in [0,1] supplies the
// jitter draw; delays are nondecreasing in `attempt` for any jitter because
// (1 - frac) * multiplier > 1 + frac at the defaults.
inline double backoff_delay_s(int attempt, double base_s = 0.5, double multiplier = 2.0,
                              double jitter_frac = 0.1, double unit = 0.5) {
    double jitter = 1.0 + jitter_frac * (2.0 * unit - 1.0);
    return base_s * std::pow(multiplier, attempt) * jitter;
}

inline bool status_is_retryable(int status) {
    return status == 408 || status == 429 || status >= 500;
}

namespace detail_agent {

inline const char* kB64Table = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(const std::string& in) {
    std::string out;
    out.reserve((in.size() + 2) / 3 * 4);
    std::size_t i = 0;
    while (i + 3 <= in.size()) {
        std::uint32_t n = (static_cast<unsigned char>(in[i]) << 16) |
                          (static_cast<unsigned char>(in[i + 1]) << 8) |
                          static_cast<unsigned char>(in[i + 2]);
        out += kB64Table[(n >> 18) & 63];
        out += kB64Table[(n >> 12) & 63];
        out += kB64Table[(n >> 6) & 63];
        out += kB64Table[n & 63];
        i += 3;
    }
    if (i + 1 == in.size()) {
        std::uint32_t n = static_cast<unsigned char>(in[i]) << 16;
        out += kB64Table[(n >> 18) & 63];
        out += kB64Table[(n >> 12) & 63];
        out += "==";
    } else if (i + 2 == in.size()) {
        std::uint32_t n = (static_cast<unsigned char>(in[i]) << 16) |
                          (static_cast<unsigned char>(in[i + 1]) << 8);
        out += kB64Table[(n >> 18) & 63];
        out += kB64Table[(n >> 12) & 63];
        out += kB64Table[(n >> 6) & 63];
        out += '=';
    }
    return out;
}

// First 8 bytes of sha256(text) as a stable RNG seed.
inline std::uint64_t text_seed(const std::string& text) {
    auto hex = detail::sha256_hex(text);
    std::uint64_t seed = 0;
    for (int i = 0; i < 16; ++i) {
        char c = hex[static_cast<std::size_t>(i)];
        seed = seed * 16 + static_cast<std::uint64_t>(c <= '9' ? c - '0' : c - 'a' + 10);
    }
    return seed;
}

struct GateState {
    std::mutex m;
    std::condition_variable cv;
    int active = 0;
};

class GatePass {
public:
    GatePass(GateState& gate, int limit) : gate_(gate) {
        std::unique_lock lk(gate_.m);
        gate_.cv.wait(lk, [&] { return gate_.active < limit; });
        ++gate_.active;
    }
    ~GatePass() {
        {
            std::lock_guard lk(gate_.m);
            --gate_.active;
        }
        gate_.cv.notify_one();
    }
    GatePass(const GatePass&) = delete;
    GatePass& operator=(const GatePass&) = delete;

private:
    GateState& gate_;
};

} // namespace detail_agent

struct MockContext {
    const AgentConfig& cfg;
    const AgentRequest& req;
};

using MockBehaviorFn = std::function<std::string(const MockContext&)>;

// Shareable across worker threads; all mutable state is internally locked.
class AgentClient {
public:
    AgentClient() { install_builtin_mocks(); }

    void register_mock(const std::string& name, MockBehaviorFn fn, bool supports_vision = true) {
        std::lock_guard lk(mocks_mutex_);
        mocks_[name] = MockEntry{std::move(fn), supports_vision};
    }

    void set_transcript_path(const std::filesystem::path& path) {
        std::lock_guard lk(transcript_mutex_);
        transcript_path_ = path;
        std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
        transcript_.open(path, std::ios::app);
        if (!transcript_) throw Error("cannot open transcript file: " + path.string());
    }

    std::uint64_t backend_calls() const { return completion_calls_.load(); }
    std::uint64_t embedding_calls() const { return embedding_calls_.load(); }

    AgentResponse complete(const AgentConfig& cfg, const AgentRequest& req) {
        cfg.validate();
        if (req.prompt.empty())
            throw ValidationError("agent '" + cfg.agent_id + "': request prompt must be nonempty");
        auto started = std::chrono::steady_clock::now();
        detail_agent::GatePass pass(gate_for(cfg), cfg.requests_in_flight_limit);
        int attempt = 0;
        for (;;) {
            try {
                completion_calls_.fetch_add(1);
                std::string text = cfg.backend == BackendKind::mock ? mock_complete(cfg, req)
                                                                    : remote_complete(cfg, req);
                AgentResponse resp;
                resp.text = std::move(text);
                resp.backend_fingerprint = cfg.fingerprint();
                resp.retry_count = attempt;
                resp.latency = std::chrono::duration_cast<std::chrono::microseconds>(
                    std::chrono::steady_clock::now() - started);
                log_transcript(cfg, req, resp);
                return resp;
            } catch (const BackendError& e) {
                if (!e.retryable || attempt >= cfg.max_retries) throw;
                std::this_thread::sleep_for(std::chrono::duration<double>(
                    backoff_delay_s(attempt, cfg.backoff_base_s, 2.0, 0.1, jitter_unit())));
                ++attempt;
            }
        }
    }

    EmbeddingResponse embed_last_hidden(const AgentConfig& cfg, const std::string& text) {
        cfg.validate();
        if (text.empty())
            throw ValidationError("agent '" + cfg.agent_id + "': embedding input must be nonempty");
        detail_agent::GatePass pass(gate_for(cfg), cfg.requests_in_flight_limit);
        int attempt = 0;
        for (;;) {
            try {
                embedding_calls_.fetch_add(1);
                Vec v = cfg.backend == BackendKind::mock ? mock_embed(cfg, text)
                                                         : remote_embed(cfg, text);
                if (cfg.embedding_dim > 0 &&
                    v.size() != static_cast<std::size_t>(cfg.embedding_dim))
                    throw ValidationError("agent '" + cfg.agent_id + "': backend returned " +
                                          std::to_string(v.size()) +
                                          "-dim embedding, declared dim is " +
                                          std::to_string(cfg.embedding_dim));
                for (double x : v)
                    if (!std::isfinite(x))
                        throw BackendError("agent '" + cfg.agent_id +
                                               "': embedding contains non-finite entries",
                                           false);
                EmbeddingResponse resp;
                resp.dimension = static_cast<int>(v.size());
                resp.vector = std::move(v);
                return resp;
            } catch (const BackendError& e) {
                if (!e.retryable || attempt >= cfg.max_retries) throw;
                std::this_thread::sleep_for(std::chrono::duration<double>(
                    backoff_delay_s(attempt, cfg.backoff_base_s, 2.0, 0.1, jitter_unit())));
                ++attempt;
            }
        }
    }

private:
    struct MockEntry {
        MockBehaviorFn fn;
        bool supports_vision = true;
    };

    void install_builtin_mocks() {
        mocks_["echo"] = MockEntry{[](const MockContext& c) { return c.req.prompt; }, false};
        mocks_["reverse"] = MockEntry{[](const MockContext& c) {
                                          return std::string(c.req.prompt.rbegin(),
                                                             c.req.prompt.rend());
                                      },
                                      false};
        // Emits one line per attachment derived from the file name, standing in
        // for a vision/table specialist that reads the referenced payload.
        mocks_["attachment_summary"] = MockEntry{[](const MockContext& c) {
                                                     std::string out;
                                                     for (const auto& a : c.req.attachments) {
                                                         std::filesystem::path p(a.path);
                                                         out += "Observed marker: " +
                                                                p.stem().string() + ".\n";
                                                     }
                                                     if (c.req.attachments.empty())
                                                         out = "No attachments provided.\n";
                                                     return out;
                                                 },
                                                 true};
    }

    detail_agent::GateState& gate_for(const AgentConfig& cfg) {
        std::lock_guard lk(gates_mutex_);
        auto& slot = gates_[cfg.fingerprint()];
        if (!slot) slot = std::make_unique<detail_agent::GateState>();
        return *slot;
    }

    double jitter_unit() {
        std::lock_guard lk(jitter_mutex_);
        return detail::next_double(jitter_rng_);
    }

    std::string mock_complete(const AgentConfig& cfg, const AgentRequest& req) {
        const std::string& name = cfg.mock_behavior;
        if (name.rfind("constant:", 0) == 0) return name.substr(9);
        MockEntry entry;
        {
            std::lock_guard lk(mocks_mutex_);
            auto it = mocks_.find(name);
            if (it == mocks_.end())
                throw ConfigError("agent '" + cfg.agent_id + "': unknown mock behavior '" + name +
                                  "'");
            entry = it->second;
        }
        if (!req.attachments.empty() && !entry.supports_vision)
            throw BackendError("agent '" + cfg.agent_id + "': backend '" + name +
                                   "' does not accept image attachments",
                               false);
        return entry.fn(MockContext{cfg, req});
    }

    Vec mock_embed(const AgentConfig& cfg, const std::string& text) {
        if (cfg.embedding_dim <= 0)
            throw ConfigError("agent '" + cfg.agent_id +
                              "': mock embedder requires embedding_dim > 0");
        auto dim = static_cast<std::size_t>(cfg.embedding_dim);
        if (cfg.mock_embedder == "hash") {
            std::mt19937_64 rng(detail_agent::text_seed(cfg.model_name + "\x1f" + text));
            Vec v(dim);
            for (auto& x : v) x = detail::next_uniform(rng, -1.0, 1.0);
            return v;
        }
        if (cfg.mock_embedder == "token_bag") {
            // Feature hashing over lowercase alnum tokens: signed counts, then
            // scaled by 1/sqrt(token count) to keep magnitudes bounded.
            Vec v(dim, 0.0);
            std::string token;
            std::size_t n_tokens = 0;
            auto flush = [&] {
                if (token.empty()) return;
                std::uint64_t h = detail_agent::text_seed(token);
                v[h % dim] += (h >> 63) ? 1.0 : -1.0;
                ++n_tokens;
                token.clear();
            };
            for (char c : text) {
                if (std::isalnum(static_cast<unsigned char>(c)))
                    token += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
                else
                    flush();
            }
            flush();
            double scale = 1.0 / std::sqrt(static_cast<double>(n_tokens ? n_tokens : 1));
            for (auto& x : v) x *= scale;
            return v;
        }
        throw ConfigError("agent '" + cfg.agent_id + "': unknown mock embedder '" +
                          cfg.mock_embedder + "'");
    }

#ifndef MOMA_NO_REMOTE
    std::unique_ptr<httplib::Client> http_client(const AgentConfig& cfg) const {
        auto cli = std::make_unique<httplib::Client>(cfg.endpoint_url);
        auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg.timeout);
        auto rem = std::chrono::duration_cast<std::chrono::microseconds>(cfg.timeout - secs);
        cli->set_connection_timeout(static_cast<time_t>(secs.count()),
                                    static_cast<time_t>(rem.count()));
        cli->set_read_timeout(static_cast<time_t>(secs.count()),
                              static_cast<time_t>(rem.count()));
        if (!cfg.api_key_env.empty()) {
            if (const char* key = std::getenv(cfg.api_key_env.c_str()); key && *key)
                cli->set_default_headers({{"Authorization", std::string("Bearer ") + key}});
        }
        return cli;
    }

    static nlohmann::json post_json(httplib::Client& cli, const std::string& agent_id,
                                    const std::string& path, const nlohmann::json& body) {
        auto res = cli.Post(path, body.dump(), "application/json");
        if (!res)
            throw BackendError("agent '" + agent_id + "': connection to backend failed (" +
                                   httplib::to_string(res.error()) + ")",
                               true);
        if (res->status != 200)
            throw BackendError("agent '" + agent_id + "': backend returned HTTP " +
                                   std::to_string(res->status),
                               status_is_retryable(res->status), res->status);
        try {
            return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            throw BackendError("agent '" + agent_id +
                                   "': backend returned malformed JSON: " + e.what(),
                               false);
        }
    }

    std::string remote_complete(const AgentConfig& cfg, const AgentRequest& req) const {
        nlohmann::json message{{"role", "user"}};
        if (req.attachments.empty()) {
            message["content"] = req.prompt;
        } else {
            auto content = nlohmann::json::array();
            content.push_back({{"type", "text"}, {"text", req.prompt}});
            for (const auto& a : req.attachments) {
                std::string data;
                try {
                    data = read_text_file(a.path);
                } catch (const Error& e) {
                    throw BackendError("agent '" + cfg.agent_id +
                                           "': cannot read attachment: " + e.what(),
                                       false);
                }
                content.push_back(
                    {{"type", "image_url"},
                     {"image_url",
                      {{"url", "data:" + a.media_type + ";base64," +
                                   detail_agent::base64_encode(data)}}}});
            }
            message["content"] = std::move(content);
        }
        nlohmann::json body{
            {"model", cfg.model_name},
            {"messages", nlohmann::json::array({std::move(message)})},
            {"temperature", req.temperature_override.value_or(cfg.temperature)},
            {"max_tokens", req.max_tokens_override.value_or(cfg.max_tokens)},
        };
        auto cli = http_client(cfg);
        auto parsed = post_json(*cli, cfg.agent_id, "/v1/chat/completions", body);
        try {
            return parsed.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception&) {
            throw BackendError("agent '" + cfg.agent_id +
                                   "': completion response missing choices[0].message.content",
                               false);
        }
    }

    Vec remote_embed(const AgentConfig& cfg, const std::string& text) const {
        nlohmann::json body{{"model", cfg.model_name}, {"input", text}};
        auto cli = http_client(cfg);
        auto parsed = post_json(*cli, cfg.agent_id, "/v1/embeddings", body);
        try {
            return parsed.at("data").at(0).at("embedding").get<Vec>();
        } catch (const nlohmann::json::exception&) {
            throw BackendError("agent '" + cfg.agent_id +
                                   "': embedding response missing data[0].embedding",
                               false);
        }
    }
#else
    std::string remote_complete(const AgentConfig& cfg, const AgentRequest&) const {
        throw ConfigError("agent '" + cfg.agent_id + "': remote backend support compiled out");
    }
    Vec remote_embed(const AgentConfig& cfg, const std::string&) const {
        throw ConfigError("agent '" + cfg.agent_id + "': remote backend support compiled out");
    }
#endif

    void log_transcript(const AgentConfig& cfg, const AgentRequest& req,
                        const AgentResponse& resp) {
        std::lock_guard lk(transcript_mutex_);
        if (!transcript_.is_open()) return;
        nlohmann::json line{
            {"agent_id", cfg.agent_id},
            {"backend", to_string(cfg.backend)},
            {"fingerprint", resp.backend_fingerprint},
            {"prompt", req.prompt},
            {"attachments", req.attachments.size()},
            {"response", resp.text},
            {"retry_count", resp.retry_count},
            {"latency_us", resp.latency.count()},
        };
        transcript_ << line.dump() << "\n";
        transcript_.flush();
    }

    std::mutex mocks_mutex_;
    std::map<std::string, MockEntry> mocks_;
    std::mutex gates_mutex_;
    std::map<std::string, std::unique_ptr<detail_agent::GateState>> gates_;
    std::atomic<std::uint64_t> completion_calls_{0};
    std::atomic<std::uint64_t> embedding_calls_{0};
    std::mutex jitter_mutex_;
    std::mt19937_64 jitter_rng_{0x9e3779b97f4a7c15ull};
    std::mutex transcript_mutex_;
    std::filesystem::path transcript_path_;
    std::ofstream transcript_;
};

} // namespace moma
