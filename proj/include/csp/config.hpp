#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "csp/errors.hpp"
#include "csp/gateway.hpp"

namespace csp {

namespace configdetail {

inline nlohmann::json backend_to_json(const BackendConfig& b) {
    return {{"endpoint_url", b.endpoint_url},
            {"model_id", b.model_id},
            {"auth_token_env", b.auth_token_env},
            {"timeout_ms", b.timeout.count()},
            {"max_retries", b.max_retries},
            {"requests_per_minute", b.requests_per_minute},
            {"sentence_level_embeddings", b.sentence_level_embeddings},
            {"embed_dimension", b.embed_dimension}};
}

inline BackendConfig backend_from_json(const nlohmann::json& j) {
    BackendConfig b;
    if (!j.is_object()) throw ConfigError("backend config: expected an object");
    b.endpoint_url = j.value("endpoint_url", "");
    b.model_id = j.value("model_id", "");
    b.auth_token_env = j.value("auth_token_env", "");
    b.timeout = std::chrono::milliseconds(
        j.value("timeout_ms", static_cast<int64_t>(30000)));
    b.max_retries = j.value("max_retries", 3);
    b.requests_per_minute = j.value("requests_per_minute", 120);
    b.sentence_level_embeddings = j.value("sentence_level_embeddings", false);
    b.embed_dimension = j.value("embed_dimension", 0);
    b.validate();
    return b;
}

}  // namespace configdetail

// Declarative run configuration. A config file fills it first; CLI flags
// override individual fields afterwards.
struct RunConfig {
    struct Paths {
        std::filesystem::path input_dir;        // report bundle directory
        std::filesystem::path lexicon;          // key-term lexicon file
        std::filesystem::path agent_specs;      // agent spec directory (optional)
        std::filesystem::path prompts;          // prompt template directory (optional)
        std::filesystem::path redaction_rules;  // redaction rule file (optional)
        std::filesystem::path output_dir = "out";
    } paths;

    BackendConfig chat;
    BackendConfig embed;
    BackendConfig nli;

    uint64_t seed = 0;
    size_t workers = 1;
    std::string language = "en";  // "en" or "zh"
    bool mock = false;
    bool dry_run = false;

    // Structural checks always run; with check_paths every *set* path must
    // exist on disk (output_dir excepted — it is created on demand).
    void validate(bool check_paths = true) const {
        if (workers < 1) throw ConfigError("config: workers must be >= 1");
        if (language != "en" && language != "zh")
            throw ConfigError("config: language must be en or zh, got '" +
                              language + "'");
        chat.validate();
        embed.validate();
        nli.validate();
        if (paths.output_dir.empty())
            throw ConfigError("config: output_dir must not be empty");
        if (!check_paths) return;
        auto must_exist = [](const std::filesystem::path& p, const char* what) {
            if (p.empty()) return;
            if (!std::filesystem::exists(p))
                throw ConfigError(std::string("config: ") + what +
                                  " path does not exist: " + p.string());
        };
        must_exist(paths.input_dir, "input_dir");
        must_exist(paths.lexicon, "lexicon");
        must_exist(paths.agent_specs, "agent_specs");
        must_exist(paths.prompts, "prompts");
        must_exist(paths.redaction_rules, "redaction_rules");
    }

    static RunConfig from_json(const nlohmann::json& j) {
        if (!j.is_object()) throw ConfigError("config: expected a JSON object");
        RunConfig c;
        if (j.contains("paths")) {
            const auto& p = j.at("paths");
            if (!p.is_object()) throw ConfigError("config: paths must be an object");
            c.paths.input_dir = p.value("input_dir", "");
            c.paths.lexicon = p.value("lexicon", "");
            c.paths.agent_specs = p.value("agent_specs", "");
            c.paths.prompts = p.value("prompts", "");
            c.paths.redaction_rules = p.value("redaction_rules", "");
            c.paths.output_dir = p.value("output_dir", "out");
        }
        if (j.contains("backends")) {
            const auto& b = j.at("backends");
            if (b.contains("chat"))
                c.chat = configdetail::backend_from_json(b.at("chat"));
            if (b.contains("embed"))
                c.embed = configdetail::backend_from_json(b.at("embed"));
            if (b.contains("nli"))
                c.nli = configdetail::backend_from_json(b.at("nli"));
        }
        c.seed = j.value("seed", static_cast<uint64_t>(0));
        c.workers = j.value("workers", static_cast<size_t>(1));
        c.language = j.value("language", "en");
        c.mock = j.value("mock", false);
        c.validate(false);
        return c;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["paths"] = {{"input_dir", paths.input_dir.string()},
                      {"lexicon", paths.lexicon.string()},
                      {"agent_specs", paths.agent_specs.string()},
                      {"prompts", paths.prompts.string()},
                      {"redaction_rules", paths.redaction_rules.string()},
                      {"output_dir", paths.output_dir.string()}};
        j["backends"] = {{"chat", configdetail::backend_to_json(chat)},
                         {"embed", configdetail::backend_to_json(embed)},
                         {"nli", configdetail::backend_to_json(nli)}};
        j["seed"] = seed;
        j["workers"] = workers;
        j["language"] = language;
        j["mock"] = mock;
        return j;
    }

    static RunConfig load(const std::filesystem::path& file) {
        std::ifstream in(file, std::ios::binary);
        if (!in) throw ConfigError("cannot read config file: " + file.string());
        nlohmann::json j;
        try {
            in >> j;
        } catch (const std::exception& e) {
            throw ConfigError("config file " + file.string() + ": " + e.what());
        }
        return from_json(j);
    }
};

}  // namespace csp
