#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csp/clockwork.hpp"
#include "csp/errors.hpp"
#include "csp/text.hpp"

namespace csp {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Requests and configs
// ---------------------------------------------------------------------------

struct ChatRequest {
    std::string model_id;
    std::string system_prompt;
    std::vector<std::string> user_messages;
    double temperature = 0.0;
    int max_tokens = 2048;
    std::optional<long> seed;

    void validate() const {
        if (user_messages.empty())
            throw PreconditionError("ChatRequest: at least one user message required");
        if (temperature < 0.0 || temperature > 2.0)
            throw PreconditionError("ChatRequest: temperature must be in [0, 2]");
        if (max_tokens <= 0)
            throw PreconditionError("ChatRequest: max_tokens must be positive");
    }
};

struct BackendConfig {
    std::string endpoint_url;      // e.g. http://localhost:8080; empty selects a mock
    std::string model_id;          // default model for embeddings / NLI calls
    std::string auth_token_env;    // env var holding the bearer token; empty = no auth
    std::chrono::milliseconds timeout{30000};
    int max_retries = 3;
    int requests_per_minute = 120;
    bool sentence_level_embeddings = false;  // documented degradation mode
    int embed_dimension = 0;                 // 0 = accept whatever the backend returns

    void validate() const {
        if (max_retries < 0 || max_retries > 10)
            throw ConfigError("BackendConfig: max_retries must be in [0, 10]");
        if (timeout.count() <= 0)
            throw ConfigError("BackendConfig: timeout must be positive");
        if (requests_per_minute <= 0)
            throw ConfigError("BackendConfig: requests_per_minute must be positive");
    }
};

enum class NliLabel { entailment, neutral, contradiction };

inline std::string to_string(NliLabel l) {
    switch (l) {
        case NliLabel::entailment: return "entailment";
        case NliLabel::neutral: return "neutral";
        case NliLabel::contradiction: return "contradiction";
    }
    return "neutral";
}

inline NliLabel nli_label_from_string(const std::string& s) {
    if (s == "entailment") return NliLabel::entailment;
    if (s == "neutral") return NliLabel::neutral;
    if (s == "contradiction") return NliLabel::contradiction;
    throw Error("unknown NLI label: " + s);
}

struct NliVerdict {
    NliLabel label = NliLabel::neutral;
    std::map<NliLabel, double> scores;

    void validate() const {
        double sum = 0.0;
        double best = -1.0;
        NliLabel best_label = NliLabel::neutral;
        for (const auto& [l, p] : scores) {
            sum += p;
            if (p > best) {
                best = p;
                best_label = l;
            }
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw Error("NliVerdict: scores must sum to 1");
        if (best_label != label)
            throw Error("NliVerdict: label must be the argmax of scores");
    }

    static NliVerdict make(NliLabel winner, double confidence = 0.8) {
        NliVerdict v;
        v.label = winner;
        double rest = (1.0 - confidence) / 2.0;
        for (NliLabel l : {NliLabel::entailment, NliLabel::neutral, NliLabel::contradiction})
            v.scores[l] = (l == winner) ? confidence : rest;
        return v;
    }
};

// ---------------------------------------------------------------------------
// Backend interfaces (chat completion, token embeddings, NLI)
// ---------------------------------------------------------------------------

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual std::string chat(const ChatRequest& request) = 0;
};

class EmbedBackend {
public:
    virtual ~EmbedBackend() = default;
    // One unit-normalized vector per token of the gateway's canonical
    // tokenization (see tokenize() in text.hpp).
    virtual std::vector<std::vector<double>> embed_tokens(const std::string& text) = 0;
};

class NliBackend {
public:
    virtual ~NliBackend() = default;
    virtual NliVerdict nli(const std::string& premise, const std::string& hypothesis) = 0;
};

// Bundle of the three capabilities a pipeline stage may need.
struct Gateway {
    std::shared_ptr<ChatBackend> chat;
    std::shared_ptr<EmbedBackend> embed;
    std::shared_ptr<NliBackend> nli;
};

// ---------------------------------------------------------------------------
// Rate limiting and retry policy
// ---------------------------------------------------------------------------

// Sliding-window limiter shared by all HTTP backends of one endpoint. Over
// any 60-second window at most requests_per_minute dispatches go out; callers
// queue on the internal mutex.
class RateLimiter {
public:
    explicit RateLimiter(int requests_per_minute, Clock& clock = SystemClock::instance())
        : rpm_(requests_per_minute), clock_(clock) {
        if (rpm_ <= 0) throw ConfigError("RateLimiter: requests_per_minute must be positive");
    }

    Clock::TimePoint acquire() {
        std::lock_guard<std::mutex> lock(mutex_);
        const auto window = std::chrono::seconds(60);
        auto now = clock_.now();
        prune(now, window);
        while (static_cast<int>(dispatched_.size()) >= rpm_) {
            auto wake = dispatched_.front() + window;
            auto wait = std::chrono::duration_cast<Clock::Duration>(wake - now);
            clock_.sleep_for(std::max(wait, Clock::Duration(1)));
            now = clock_.now();
            prune(now, window);
        }
        dispatched_.push_back(now);
        return now;
    }

private:
    void prune(Clock::TimePoint now, std::chrono::seconds window) {
        while (!dispatched_.empty() && now - dispatched_.front() >= window)
            dispatched_.pop_front();
    }

    int rpm_;
    Clock& clock_;
    std::mutex mutex_;
    std::deque<Clock::TimePoint> dispatched_;
};

// Exponential backoff with jitter: base 1 s, doubling, capped at 30 s.
struct BackoffPolicy {
    std::chrono::milliseconds base{1000};
    std::chrono::milliseconds cap{30000};

    std::chrono::milliseconds delay(int attempt, std::mt19937_64& rng) const {
        double exp_ms = static_cast<double>(base.count()) * std::pow(2.0, attempt);
        exp_ms = std::min(exp_ms, static_cast<double>(cap.count()));
        std::uniform_real_distribution<double> jitter(0.5, 1.0);
        return std::chrono::milliseconds(static_cast<long>(exp_ms * jitter(rng)));
    }
};

inline std::string resolve_auth_token(const BackendConfig& config) {
    if (config.auth_token_env.empty()) return {};
    const char* tok = std::getenv(config.auth_token_env.c_str());
    if (!tok || !*tok)
        throw ConfigError("auth token environment variable not set: " +
                          config.auth_token_env);
    return tok;
}

inline void normalize_in_place(std::vector<double>& v) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0)
        for (double& x : v) x /= norm;
}

}  // namespace csp
