#pragma once

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "csp/agents.hpp"
#include "csp/config.hpp"
#include "csp/dataset.hpp"
#include "csp/errors.hpp"
#include "csp/http_gateway.hpp"
#include "csp/ingest.hpp"
#include "csp/mocks.hpp"
#include "csp/redact.hpp"
#include "csp/report.hpp"

namespace csp {

// ---------------------------------------------------------------------------
// Cancellation and the shared worker loop
// ---------------------------------------------------------------------------

namespace pipelinedetail {

inline std::atomic<bool>& stop_flag() {
    static std::atomic<bool> flag{false};
    return flag;
}

}  // namespace pipelinedetail

inline void request_stop() { pipelinedetail::stop_flag().store(true); }
inline void clear_stop() { pipelinedetail::stop_flag().store(false); }
inline bool stop_requested() { return pipelinedetail::stop_flag().load(); }

// SIGINT flips the stop flag; in-flight items finish, queued items are
// abandoned, and callers flush whatever completed.
inline void install_interrupt_handler() {
    std::signal(SIGINT, [](int) { request_stop(); });
}

// Runs fn(0..count-1) on up to `workers` threads. Item order of pickup is
// the index order; results must be written to per-index slots by the caller.
// Returns false when the stop flag cut the run short.
inline bool parallel_for(size_t count, size_t workers,
                         const std::function<void(size_t)>& fn) {
    if (workers < 1) throw PreconditionError("parallel_for: workers must be >= 1");
    std::atomic<size_t> next{0};
    std::atomic<bool> stopped{false};

    auto loop = [&]() {
        while (true) {
            if (stop_requested()) {
                stopped.store(true);
                return;
            }
            size_t i = next.fetch_add(1);
            if (i >= count) return;
            fn(i);
        }
    };

    size_t threads = std::min(workers, count == 0 ? size_t{1} : count);
    if (threads <= 1) {
        loop();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (size_t t = 0; t < threads; ++t) pool.emplace_back(loop);
        for (auto& t : pool) t.join();
    }
    return !stopped.load();
}

// ---------------------------------------------------------------------------
// Backend selection
// ---------------------------------------------------------------------------

struct BackendSet {
    std::unique_ptr<ChatBackend> chat;
    std::unique_ptr<EmbedBackend> embed;
    std::unique_ptr<NliBackend> nli;
};

// Offline backends when --mock is set; otherwise HTTP clients per backend.
// An individual backend with no endpoint URL also falls back to its mock so
// partial deployments (e.g. chat served, NLI local) keep working.
inline BackendSet make_backends(const RunConfig& config) {
    BackendSet set;
    if (config.mock || config.chat.endpoint_url.empty())
        set.chat = std::make_unique<PipelineChatMock>(config.seed);
    else
        set.chat = std::make_unique<HttpChatBackend>(config.chat, nullptr,
                                                     SystemClock::instance(),
                                                     config.seed);
    if (config.mock || config.embed.endpoint_url.empty())
        set.embed = std::make_unique<HashEmbedBackend>(64, config.seed);
    else
        set.embed = std::make_unique<HttpEmbedBackend>(config.embed, nullptr,
                                                       SystemClock::instance(),
                                                       config.seed);
    if (config.mock || config.nli.endpoint_url.empty())
        set.nli = std::make_unique<RuleNliBackend>();
    else
        set.nli = std::make_unique<HttpNliBackend>(config.nli, nullptr,
                                                   SystemClock::instance(),
                                                   config.seed);
    return set;
}

inline ChatCallOptions chat_options(const RunConfig& config) {
    ChatCallOptions opts;
    opts.model_id = config.chat.model_id.empty() ? "default" : config.chat.model_id;
    opts.seed = static_cast<long>(config.seed);
    return opts;
}

// ---------------------------------------------------------------------------
// Report interpretation (ingest -> specialists -> synthesis)
// ---------------------------------------------------------------------------

struct PipelineFailure {
    std::string case_id;
    std::string error;
};

struct InterpretOutcome {
    std::vector<PatientDescription> descriptions;  // sorted by case_id
    // case_id -> reference decision found in the source reports, if any.
    std::map<std::string, std::string> physician_decisions;
    std::vector<PipelineFailure> failures;
    std::vector<std::string> notes;  // load problems, unknown reports, redactions
    size_t eye_bundles = 0;
    bool interrupted = false;
};

// First "Physician plan:"/"Physician decision:" line found across the eye's
// reports; used downstream as the recommendation alignment reference.
inline std::string physician_decision_for(const ReportBundle& bundle) {
    static const std::regex pattern(
        R"((?:Physician plan|Physician decision)\s*:\s*(.+))",
        std::regex::icase);
    for (const auto& report : bundle.reports) {
        std::smatch m;
        if (std::regex_search(report.content, m, pattern))
            return trim(m[1].str());
    }
    return "";
}

inline InterpretOutcome interpret_bundles(
    const std::filesystem::path& input_dir, ChatBackend& chat,
    const std::vector<AgentSpec>& specs, const PromptSet& prompts,
    const RedactionRuleset& redactions, size_t workers = 1,
    const ChatCallOptions& opts = {}) {
    if (specs.empty()) throw ConfigError("interpret: no agent specs");

    InterpretOutcome outcome;
    LoadResult loaded = load_reports(input_dir);
    for (const auto& e : loaded.errors) outcome.notes.push_back(e);

    size_t redaction_count = 0;
    for (auto& report : loaded.reports) {
        if (!redactions.empty()) {
            RedactionResult r = deidentify(report.content, redactions);
            for (const auto& [category, spans] : r.log)
                redaction_count += static_cast<size_t>(spans);
            report.content = std::move(r.text);
        }
        report.report_type = classify_report(report.content);
        report.laterality = detect_laterality(report.content);
    }
    if (redaction_count > 0)
        outcome.notes.push_back("redacted " + std::to_string(redaction_count) +
                                " sensitive spans");

    AgentRegistry registry;
    std::map<ReportType, const AgentSpec*> by_type;
    for (const auto& spec : specs) {
        registry[spec.report_type] = spec.agent_id;
        by_type[spec.report_type] = &spec;
    }

    std::vector<ReportBundle> eyes;
    for (const auto& bundle : make_bundles(loaded.reports))
        for (auto& eye : split_bundle_by_eye(bundle)) eyes.push_back(std::move(eye));
    outcome.eye_bundles = eyes.size();

    struct Slot {
        std::optional<PatientDescription> description;
        std::optional<PipelineFailure> failure;
        std::vector<std::string> notes;
        std::string physician_decision;
    };
    std::vector<Slot> slots(eyes.size());

    bool completed = parallel_for(eyes.size(), workers, [&](size_t i) {
        const ReportBundle& eye = eyes[i];
        Slot& slot = slots[i];
        std::string case_id = case_id_for(eye);
        try {
            RouteResult routed = route(eye, registry);
            for (const auto& unknown : routed.unknown)
                slot.notes.push_back("case " + case_id +
                                     ": unclassified report " +
                                     unknown.report_id + " ignored");
            std::vector<ReportType> missing(routed.missing_types.begin(),
                                            routed.missing_types.end());
            const std::string notes_text = availability_notes_text(missing);

            std::vector<SpecialistSummary> summaries;
            for (const auto& [type, pair] : routed.routed)
                summaries.push_back(run_specialist(*by_type.at(type),
                                                   pair.first, chat,
                                                   notes_text, opts));
            slot.description =
                synthesize_patient(eye, summaries, chat, prompts, opts);
            slot.physician_decision = physician_decision_for(eye);
        } catch (const std::exception& e) {
            slot.failure = PipelineFailure{case_id, e.what()};
        }
    });
    outcome.interrupted = !completed;

    for (auto& slot : slots) {
        for (auto& note : slot.notes) outcome.notes.push_back(std::move(note));
        if (slot.failure) outcome.failures.push_back(std::move(*slot.failure));
        if (slot.description) {
            if (!slot.physician_decision.empty())
                outcome.physician_decisions[slot.description->case_id] =
                    slot.physician_decision;
            outcome.descriptions.push_back(std::move(*slot.description));
        }
    }
    std::sort(outcome.descriptions.begin(), outcome.descriptions.end(),
              [](const PatientDescription& a, const PatientDescription& b) {
                  return a.case_id < b.case_id;
              });
    return outcome;
}

// ---------------------------------------------------------------------------
// Dataset construction (question -> chain -> recommendation per description)
// ---------------------------------------------------------------------------

struct BuildOutcome {
    std::vector<CaseRecord> records;  // sorted by case_id
    std::vector<PipelineFailure> failures;
    bool interrupted = false;
};

inline BuildOutcome build_dataset(
    const std::vector<PatientDescription>& descriptions, ChatBackend& chat,
    const PromptSet& prompts,
    const std::map<std::string, std::string>& physician_decisions = {},
    const StageCatalogue& catalogue = StageCatalogue::defaults(),
    size_t workers = 1, const ChatCallOptions& opts = {}, int max_retries = 2) {
    if (descriptions.empty())
        throw PreconditionError("build_dataset: no patient descriptions");

    struct Slot {
        std::optional<CaseRecord> record;
        std::optional<PipelineFailure> failure;
    };
    std::vector<Slot> slots(descriptions.size());

    BuildOutcome outcome;
    bool completed = parallel_for(descriptions.size(), workers, [&](size_t i) {
        const PatientDescription& d = descriptions[i];
        try {
            auto it = physician_decisions.find(d.case_id);
            const std::string decision =
                it != physician_decisions.end() ? it->second : "";
            slots[i].record = build_case_record(d, chat, prompts, catalogue,
                                                decision, opts, max_retries);
        } catch (const std::exception& e) {
            slots[i].failure = PipelineFailure{d.case_id, e.what()};
        }
    });
    outcome.interrupted = !completed;

    for (auto& slot : slots) {
        if (slot.record) outcome.records.push_back(std::move(*slot.record));
        if (slot.failure) outcome.failures.push_back(std::move(*slot.failure));
    }
    std::sort(outcome.records.begin(), outcome.records.end(),
              [](const CaseRecord& a, const CaseRecord& b) {
                  return a.case_id < b.case_id;
              });
    return outcome;
}

// ---------------------------------------------------------------------------
// On-disk layout helpers
// ---------------------------------------------------------------------------

inline void write_json_file(const nlohmann::json& j,
                            const std::filesystem::path& path) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    try {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const std::exception& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

// One `<case_id>.json` file per description.
inline void write_description_files(
    const std::vector<PatientDescription>& descriptions,
    const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& d : descriptions)
        write_json_file(d.to_json(), dir / (d.case_id + ".json"));
}

inline std::vector<PatientDescription> read_description_files(
    const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir) || !std::filesystem::is_directory(dir))
        throw ConfigError("description directory does not exist: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".json")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::vector<PatientDescription> out;
    for (const auto& file : files) {
        try {
            out.push_back(PatientDescription::from_json(read_json_file(file)));
        } catch (const nlohmann::json::exception& e) {
            throw Error("not a patient description: " + file.string() + ": " +
                        e.what());
        }
    }
    if (out.empty())
        throw Error("no description files under " + dir.string());
    return out;
}

inline nlohmann::json interpret_manifest(const InterpretOutcome& outcome) {
    nlohmann::json cases = nlohmann::json::array();
    for (const auto& d : outcome.descriptions) {
        nlohmann::json entry;
        entry["case_id"] = d.case_id;
        entry["status"] = "ok";
        nlohmann::json missing = nlohmann::json::array();
        for (const auto& type : d.missing_reports) missing.push_back(to_string(type));
        entry["missing_reports"] = missing;
        auto it = outcome.physician_decisions.find(d.case_id);
        if (it != outcome.physician_decisions.end())
            entry["physician_decision"] = it->second;
        cases.push_back(std::move(entry));
    }
    for (const auto& f : outcome.failures)
        cases.push_back({{"case_id", f.case_id},
                         {"status", "failed"},
                         {"error", f.error}});
    return {{"cases", cases},
            {"notes", outcome.notes},
            {"eye_bundles", outcome.eye_bundles},
            {"interrupted", outcome.interrupted}};
}

inline std::map<std::string, std::string> physician_decisions_from_manifest(
    const std::filesystem::path& path) {
    std::map<std::string, std::string> decisions;
    if (!std::filesystem::exists(path)) return decisions;
    nlohmann::json j = read_json_file(path);
    if (!j.contains("cases")) return decisions;
    for (const auto& entry : j.at("cases"))
        if (entry.contains("physician_decision"))
            decisions[entry.value("case_id", "")] =
                entry.value("physician_decision", "");
    return decisions;
}

inline nlohmann::json build_manifest(const BuildOutcome& outcome) {
    nlohmann::json cases = nlohmann::json::array();
    for (const auto& r : outcome.records)
        cases.push_back({{"case_id", r.case_id}, {"status", "ok"}});
    for (const auto& f : outcome.failures)
        cases.push_back({{"case_id", f.case_id},
                         {"status", "failed"},
                         {"error", f.error}});
    return {{"cases", cases}, {"interrupted", outcome.interrupted}};
}

}  // namespace csp
