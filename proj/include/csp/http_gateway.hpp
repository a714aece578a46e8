#pragma once

#include <httplib.h>

#include <memory>
#include <string>
#include <vector>

#include "csp/gateway.hpp"

namespace csp {

namespace detail {

inline bool transient_status(int status) { return status == 429 || status >= 500; }

// Shared request loop: rate limit, send, classify, back off, retry.
// Attempts never exceed max_retries + 1.
template <typename SendFn>
json send_with_retries(const BackendConfig& config, RateLimiter& limiter,
                       Clock& clock, std::mt19937_64& rng, SendFn&& send,
                       int* retries_out = nullptr) {
    config.validate();
    BackoffPolicy backoff;
    int last_status = 0;
    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt <= config.max_retries; ++attempt) {
        if (attempt > 0) {
            clock.sleep_for(backoff.delay(attempt - 1, rng));
            if (retries_out) *retries_out = attempt;
        }
        limiter.acquire();
        httplib::Result res = send();
        if (!res) {
            last_status = 0;
            last_error = "connection failure: " + httplib::to_string(res.error());
            continue;
        }
        if (transient_status(res->status)) {
            last_status = res->status;
            last_error = "transient status " + std::to_string(res->status);
            continue;
        }
        if (res->status >= 400) {
            throw RequestError("request rejected with status " +
                                   std::to_string(res->status) + ": " + res->body,
                               res->status);
        }
        try {
            return json::parse(res->body);
        } catch (const json::exception& e) {
            throw Error(std::string("backend returned unparseable JSON: ") + e.what());
        }
    }
    throw TransportError("retries exhausted: " + last_error, last_status);
}

inline httplib::Headers auth_headers(const BackendConfig& config) {
    httplib::Headers headers;
    std::string token = resolve_auth_token(config);
    if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);
    return headers;
}

inline std::unique_ptr<httplib::Client> make_client(const BackendConfig& config) {
    auto cli = std::make_unique<httplib::Client>(config.endpoint_url);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(config.timeout);
    time_t s = std::max<time_t>(secs.count(), 1);
    cli->set_connection_timeout(s, 0);
    cli->set_read_timeout(s, 0);
    cli->set_write_timeout(s, 0);
    return cli;
}

}  // namespace detail

// POST <endpoint>/v1/chat/completions with the de-facto standard chat wire
// format; returns the first completion choice's message content.
class HttpChatBackend : public ChatBackend {
public:
    explicit HttpChatBackend(BackendConfig config,
                             std::shared_ptr<RateLimiter> limiter = nullptr,
                             Clock& clock = SystemClock::instance(),
                             uint64_t rng_seed = 0)
        : config_(std::move(config)), clock_(clock), rng_seed_(rng_seed) {
        config_.validate();
        limiter_ = limiter ? std::move(limiter)
                           : std::make_shared<RateLimiter>(config_.requests_per_minute, clock_);
    }

    std::string chat(const ChatRequest& request) override {
        request.validate();
        auto headers = detail::auth_headers(config_);  // before any network call
        json body;
        body["model"] = request.model_id.empty() ? config_.model_id : request.model_id;
        body["messages"] = json::array();
        if (!request.system_prompt.empty())
            body["messages"].push_back({{"role", "system"}, {"content", request.system_prompt}});
        for (const auto& msg : request.user_messages)
            body["messages"].push_back({{"role", "user"}, {"content", msg}});
        body["temperature"] = request.temperature;
        body["max_tokens"] = request.max_tokens;
        if (request.seed) body["seed"] = *request.seed;

        int retries = 0;
        std::mt19937_64 rng(rng_seed_ ^ (call_counter_.fetch_add(1) * 0x9E3779B97F4A7C15ull));
        json reply = detail::send_with_retries(
            config_, *limiter_, clock_, rng,
            [&] {
                auto cli = detail::make_client(config_);
                return cli->Post("/v1/chat/completions", headers, body.dump(),
                                 "application/json");
            },
            &retries);
        last_retries_.store(retries);
        try {
            return reply.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception&) {
            throw Error("chat backend reply missing choices[0].message.content");
        }
    }

    int last_retries() const { return last_retries_.load(); }

private:
    BackendConfig config_;
    std::shared_ptr<RateLimiter> limiter_;
    Clock& clock_;
    uint64_t rng_seed_;
    std::atomic<uint64_t> call_counter_{0};
    std::atomic<int> last_retries_{0};
};

// POST <endpoint>/v1/embeddings. Token-level mode sends the canonical tokens
// as an array input (one embedding per element). The sentence-level fallback
// sends the whole text and replicates the single vector per token. All
// vectors are unit-normalized by the gateway.
class HttpEmbedBackend : public EmbedBackend {
public:
    explicit HttpEmbedBackend(BackendConfig config,
                              std::shared_ptr<RateLimiter> limiter = nullptr,
                              Clock& clock = SystemClock::instance(),
                              uint64_t rng_seed = 0)
        : config_(std::move(config)), clock_(clock), rng_seed_(rng_seed) {
        config_.validate();
        limiter_ = limiter ? std::move(limiter)
                           : std::make_shared<RateLimiter>(config_.requests_per_minute, clock_);
    }

    std::vector<std::vector<double>> embed_tokens(const std::string& text) override {
        if (trim(text).empty())
            throw PreconditionError("embed_tokens: text must be non-empty");
        TokenSeq tokens = tokenize(text);
        if (tokens.empty())
            throw PreconditionError("embed_tokens: text has no tokens");
        auto headers = detail::auth_headers(config_);

        json body;
        body["model"] = config_.model_id;
        if (config_.sentence_level_embeddings) {
            body["input"] = text;
        } else {
            body["input"] = tokens;
        }

        std::mt19937_64 rng(rng_seed_ ^ (call_counter_.fetch_add(1) * 0x9E3779B97F4A7C15ull));
        json reply = detail::send_with_retries(config_, *limiter_, clock_, rng, [&] {
            auto cli = detail::make_client(config_);
            return cli->Post("/v1/embeddings", headers, body.dump(), "application/json");
        });

        std::vector<std::vector<double>> vectors;
        try {
            for (const auto& item : reply.at("data"))
                vectors.push_back(item.at("embedding").get<std::vector<double>>());
        } catch (const json::exception&) {
            throw Error("embeddings backend reply missing data[].embedding");
        }
        if (config_.sentence_level_embeddings) {
            if (vectors.size() != 1)
                throw Error("sentence-level embeddings: expected exactly one vector");
            vectors.assign(tokens.size(), vectors.front());
        } else if (vectors.size() != tokens.size()) {
            throw Error("embeddings backend returned " + std::to_string(vectors.size()) +
                        " vectors for " + std::to_string(tokens.size()) + " tokens");
        }
        size_t dim = vectors.empty() ? 0 : vectors.front().size();
        if (config_.embed_dimension > 0) dim = static_cast<size_t>(config_.embed_dimension);
        for (auto& v : vectors) {
            if (v.size() != dim)
                throw Error("embedding dimension mismatch across batch");
            normalize_in_place(v);
        }
        return vectors;
    }

private:
    BackendConfig config_;
    std::shared_ptr<RateLimiter> limiter_;
    Clock& clock_;
    uint64_t rng_seed_;
    std::atomic<uint64_t> call_counter_{0};
};

// POST <endpoint>/nli with {"premise","hypothesis"}; expects
// {"label","scores"} back. See docs/PROTOCOLS.md for the exact schema.
class HttpNliBackend : public NliBackend {
public:
    explicit HttpNliBackend(BackendConfig config,
                            std::shared_ptr<RateLimiter> limiter = nullptr,
                            Clock& clock = SystemClock::instance(),
                            uint64_t rng_seed = 0)
        : config_(std::move(config)), clock_(clock), rng_seed_(rng_seed) {
        config_.validate();
        limiter_ = limiter ? std::move(limiter)
                           : std::make_shared<RateLimiter>(config_.requests_per_minute, clock_);
    }

    NliVerdict nli(const std::string& premise, const std::string& hypothesis) override {
        if (trim(premise).empty() || trim(hypothesis).empty())
            throw PreconditionError("nli: premise and hypothesis must be non-empty");
        auto headers = detail::auth_headers(config_);
        json body{{"premise", premise}, {"hypothesis", hypothesis}};

        std::mt19937_64 rng(rng_seed_ ^ (call_counter_.fetch_add(1) * 0x9E3779B97F4A7C15ull));
        json reply = detail::send_with_retries(config_, *limiter_, clock_, rng, [&] {
            auto cli = detail::make_client(config_);
            return cli->Post("/nli", headers, body.dump(), "application/json");
        });

        NliVerdict verdict;
        try {
            verdict.label = nli_label_from_string(reply.at("label").get<std::string>());
            for (const auto& [key, value] : reply.at("scores").items())
                verdict.scores[nli_label_from_string(key)] = value.get<double>();
        } catch (const json::exception&) {
            throw Error("nli backend reply missing label/scores");
        }
        verdict.validate();
        return verdict;
    }

private:
    BackendConfig config_;
    std::shared_ptr<RateLimiter> limiter_;
    Clock& clock_;
    uint64_t rng_seed_;
    std::atomic<uint64_t> call_counter_{0};
};

}  // namespace csp
