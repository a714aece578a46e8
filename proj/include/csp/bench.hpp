#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "csp/agents.hpp"
#include "csp/dataset.hpp"
#include "csp/errors.hpp"
#include "csp/gateway.hpp"
#include "csp/lexicon.hpp"
#include "csp/metrics.hpp"
#include "csp/mocks.hpp"
#include "csp/text.hpp"

namespace csp {

// ---------------------------------------------------------------------------
// Evaluation cases
// ---------------------------------------------------------------------------

// Benchmark-facing view of one stored case: the question plus the reference
// texts for the two tasks. `complex_cot` or `response` may be empty (but not
// both); task runners skip cases lacking their reference.
struct EvalCase {
    std::string case_id;
    std::string question;
    std::string complex_cot;
    std::string response;

    struct Meta {
        std::optional<int> age;
        std::string sex = "unspecified";
        std::string abnormality_status = "unspecified";
        std::string surgical_method = "unspecified";
    } meta;

    void validate() const {
        if (case_id.empty()) throw PreconditionError("EvalCase: empty case_id");
        if (trim(question).empty())
            throw PreconditionError("EvalCase " + case_id + ": empty question");
        if (trim(complex_cot).empty() && trim(response).empty())
            throw PreconditionError("EvalCase " + case_id +
                                    ": needs at least one reference text");
    }
};

inline EvalCase eval_case_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error("eval case: expected a JSON object");
    EvalCase c;
    c.case_id = j.value("case_id", "");
    c.question = j.value("question", "");
    c.complex_cot = j.value("complex_cot", "");
    c.response = j.value("response", "");
    if (j.contains("meta") && j.at("meta").is_object()) {
        const auto& m = j.at("meta");
        if (m.contains("age") && m.at("age").is_number())
            c.meta.age = m.at("age").get<int>();
        c.meta.sex = m.value("sex", "unspecified");
        // The on-disk key is "abnormality"; accept the long spelling too.
        if (m.contains("abnormality"))
            c.meta.abnormality_status = m.value("abnormality", "unspecified");
        else
            c.meta.abnormality_status = m.value("abnormality_status", "unspecified");
        c.meta.surgical_method = m.value("surgical_method", "unspecified");
    }
    c.validate();
    return c;
}

inline std::vector<EvalCase> read_eval_cases(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open case file: " + path.string());
    std::vector<EvalCase> cases;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            cases.push_back(eval_case_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw Error(path.string() + ":" + std::to_string(line_no) + ": " +
                        e.what());
        }
    }
    if (cases.empty()) throw Error("no cases found in " + path.string());
    return cases;
}

inline EvalCase eval_case_from_record(const CaseRecord& record) {
    EvalCase c;
    c.case_id = record.case_id;
    c.question = record.question.text;
    c.complex_cot = record.complex_cot();
    c.response = record.response();
    c.meta.age = record.description.demographics.age;
    c.meta.sex = record.description.demographics.sex;
    c.meta.abnormality_status = record.description.abnormality_status;
    c.meta.surgical_method =
        classify_surgical_method(record.recommendation.surgical_technique);
    return c;
}

// ---------------------------------------------------------------------------
// Tasks and metric columns
// ---------------------------------------------------------------------------

enum class BenchTask { cot, response };

inline std::string to_string(BenchTask task) {
    return task == BenchTask::cot ? "cot" : "response";
}

inline BenchTask bench_task_from_string(const std::string& name) {
    if (name == "cot") return BenchTask::cot;
    if (name == "response") return BenchTask::response;
    throw ConfigError("unknown task '" + name + "' (expected cot or response)");
}

inline const std::string& reference_text(const EvalCase& c, BenchTask task) {
    return task == BenchTask::cot ? c.complex_cot : c.response;
}

// Column order mirrors the report tables: surface metrics first, then the
// structure-sensitive ones that only apply to reasoning chains.
inline std::vector<std::string> metric_names(BenchTask task) {
    std::vector<std::string> names = {"bleu",        "rouge_l", "bertscore_f1",
                                      "k_precision", "k_recall", "k_f1"};
    if (task == BenchTask::cot) {
        names.insert(names.end(), {"entity_precision", "entity_recall",
                                   "entity_f1", "nli_consistency"});
    }
    return names;
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

struct CaseScore {
    std::string case_id;
    std::string hypothesis;
    // Metric -> value; nullopt means undefined for this case (e.g. NLI
    // consistency of a one-step chain) and is excluded from aggregation.
    std::map<std::string, std::optional<double>> values;
};

struct CaseFailure {
    std::string case_id;
    std::string error;
};

struct MetricCoverage {
    size_t defined = 0;
    size_t undefined = 0;
    size_t failed = 0;
};

struct BenchmarkRun {
    std::string model_id;
    BenchTask task = BenchTask::cot;
    std::vector<CaseScore> scores;     // case order of the input list
    std::vector<CaseFailure> failures; // idem
    size_t eligible = 0;               // cases carrying the task's reference
    size_t skipped = 0;                // cases lacking it

    MetricCoverage coverage(const std::string& metric) const {
        MetricCoverage cov;
        for (const auto& s : scores) {
            auto it = s.values.find(metric);
            if (it != s.values.end() && it->second.has_value())
                ++cov.defined;
            else
                ++cov.undefined;
        }
        cov.failed = failures.size();
        return cov;
    }
};

// Raised when too many cases fail mid-run; carries everything scored so far
// so callers can still persist a partial artifact.
struct BenchAbortError : Error {
    BenchmarkRun partial;
    BenchAbortError(const std::string& message, BenchmarkRun run)
        : Error(message), partial(std::move(run)) {}
};

struct BenchOptions {
    std::string model_id = "model";
    std::string language = "en";
    size_t workers = 1;
    std::optional<uint64_t> seed;
    int bleu_max_n = 4;
    BleuSmoothing bleu_smoothing = BleuSmoothing::add_epsilon;
    // Abort once failures exceed both this fraction of the eligible cases and
    // a grace allowance of one failure (so tiny runs can finish with a single
    // bad case on record).
    double max_failure_fraction = 0.25;
};

struct BenchBackends {
    ChatBackend* chat = nullptr;
    EmbedBackend* embed = nullptr;
    NliBackend* nli = nullptr;  // required for the cot task only
};

namespace benchdetail {

inline SftPairing pairing_for(BenchTask task) {
    return task == BenchTask::cot ? SftPairing::question_cot
                                  : SftPairing::question_response;
}

inline CaseScore score_case(const EvalCase& c, BenchTask task,
                            const std::string& hypothesis,
                            EmbedBackend& embed, NliBackend* nli,
                            const TermLexicon& lexicon,
                            const BenchOptions& options) {
    CaseScore score;
    score.case_id = c.case_id;
    score.hypothesis = hypothesis;

    const std::string& reference = reference_text(c, task);
    auto hyp_tokens = tokenize(hypothesis);
    auto ref_tokens = tokenize(reference);

    const bool empty_hyp = hyp_tokens.empty();
    score.values["bleu"] =
        empty_hyp ? 0.0
                  : bleu(hyp_tokens, ref_tokens, options.bleu_max_n,
                         options.bleu_smoothing);
    score.values["rouge_l"] =
        empty_hyp ? 0.0 : rouge_l(hyp_tokens, ref_tokens).f1;
    score.values["bertscore_f1"] =
        empty_hyp ? 0.0 : bertscore(hypothesis, reference, embed).f1;

    // Keypoint metrics are undefined when neither side mentions any lexicon
    // term: there is nothing to verify, so the case must not drag averages.
    auto hyp_terms = lexicon.extract(hypothesis);
    auto ref_terms = lexicon.extract(reference);
    if (hyp_terms.empty() && ref_terms.empty()) {
        score.values["k_precision"] = std::nullopt;
        score.values["k_recall"] = std::nullopt;
        score.values["k_f1"] = std::nullopt;
    } else {
        ScoreTriple k = keypoint_scores(hypothesis, reference, lexicon);
        score.values["k_precision"] = k.precision;
        score.values["k_recall"] = k.recall;
        score.values["k_f1"] = k.f1;
    }

    if (task == BenchTask::cot) {
        if (hyp_terms.empty() && ref_terms.empty()) {
            score.values["entity_precision"] = std::nullopt;
            score.values["entity_recall"] = std::nullopt;
            score.values["entity_f1"] = std::nullopt;
        } else {
            ScoreTriple e = entity_step_scores(hypothesis, reference, lexicon);
            score.values["entity_precision"] = e.precision;
            score.values["entity_recall"] = e.recall;
            score.values["entity_f1"] = e.f1;
        }
        score.values["nli_consistency"] =
            empty_hyp ? std::optional<double>{}
                      : nli_consistency(hypothesis, *nli);
    }
    return score;
}

}  // namespace benchdetail

// Queries the model once per eligible case (task instruction + question) and
// scores the reply against the stored reference. Individual case failures are
// recorded and the run continues; once failures exceed the configured
// fraction the run aborts, surfacing the partial result via BenchAbortError.
inline BenchmarkRun run_benchmark(const std::vector<EvalCase>& cases,
                                  BenchTask task, BenchBackends backends,
                                  const TermLexicon& lexicon,
                                  const BenchOptions& options = {}) {
    if (!backends.chat) throw PreconditionError("run_benchmark: chat backend required");
    if (!backends.embed) throw PreconditionError("run_benchmark: embed backend required");
    if (task == BenchTask::cot && !backends.nli)
        throw PreconditionError("run_benchmark: nli backend required for the cot task");
    if (lexicon.empty()) throw PreconditionError("run_benchmark: empty lexicon");
    if (options.workers == 0) throw PreconditionError("run_benchmark: workers must be >= 1");

    BenchmarkRun run;
    run.model_id = options.model_id;
    run.task = task;

    std::vector<const EvalCase*> eligible;
    for (const auto& c : cases) {
        if (trim(reference_text(c, task)).empty())
            ++run.skipped;
        else
            eligible.push_back(&c);
    }
    run.eligible = eligible.size();
    if (eligible.empty())
        throw PreconditionError("run_benchmark: no case carries a " +
                                to_string(task) + " reference");

    const std::string instruction =
        sft_instruction(benchdetail::pairing_for(task), options.language);
    const double limit = std::max(
        1.0, options.max_failure_fraction * static_cast<double>(eligible.size()));

    struct Slot {
        std::optional<CaseScore> score;
        std::optional<CaseFailure> failure;
    };
    std::vector<Slot> slots(eligible.size());
    std::atomic<size_t> next{0};
    std::atomic<size_t> failure_count{0};
    std::atomic<bool> aborted{false};

    auto worker = [&]() {
        while (true) {
            if (aborted.load()) return;
            size_t i = next.fetch_add(1);
            if (i >= eligible.size()) return;
            const EvalCase& c = *eligible[i];
            try {
                ChatRequest request;
                request.model_id = options.model_id;
                request.system_prompt = instruction;
                request.user_messages = {c.question};
                request.seed = options.seed;
                std::string hypothesis = backends.chat->chat(request);
                slots[i].score = benchdetail::score_case(
                    c, task, hypothesis, *backends.embed, backends.nli,
                    lexicon, options);
            } catch (const std::exception& e) {
                slots[i].failure = CaseFailure{c.case_id, e.what()};
                size_t failures = failure_count.fetch_add(1) + 1;
                if (static_cast<double>(failures) > limit) aborted.store(true);
            }
        }
    };

    size_t thread_count = std::min(options.workers, eligible.size());
    if (thread_count <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(thread_count);
        for (size_t t = 0; t < thread_count; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    for (auto& slot : slots) {
        if (slot.score) run.scores.push_back(std::move(*slot.score));
        if (slot.failure) run.failures.push_back(std::move(*slot.failure));
    }

    if (aborted.load()) {
        std::ostringstream msg;
        msg << "benchmark aborted: " << run.failures.size() << " of "
            << run.eligible << " cases failed (limit "
            << options.max_failure_fraction << ")";
        throw BenchAbortError(msg.str(), std::move(run));
    }
    return run;
}

// Prediction files pair a case with a pre-generated model output: JSONL with
// "case_id" and "output" (or "hypothesis") per line.
inline std::map<std::string, std::string> read_predictions(
    const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open predictions file: " + path.string());
    std::map<std::string, std::string> predictions;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            std::string case_id = j.value("case_id", "");
            if (case_id.empty()) throw Error("missing case_id");
            std::string output = j.contains("output")
                                     ? j.value("output", "")
                                     : j.value("hypothesis", "");
            if (!predictions.emplace(case_id, std::move(output)).second)
                throw Error("duplicate prediction for case " + case_id);
        } catch (const std::exception& e) {
            throw Error(path.string() + ":" + std::to_string(line_no) + ": " +
                        e.what());
        }
    }
    if (predictions.empty())
        throw Error("no predictions found in " + path.string());
    return predictions;
}

// Scores pre-generated outputs against the stored references — the offline
// variant of run_benchmark. Eligible cases without a prediction are recorded
// as failures; the failure-fraction abort applies as usual.
inline BenchmarkRun score_predictions(
    const std::vector<EvalCase>& cases, BenchTask task,
    const std::map<std::string, std::string>& predictions,
    BenchBackends backends, const TermLexicon& lexicon,
    const BenchOptions& options = {}) {
    if (!backends.embed) throw PreconditionError("score_predictions: embed backend required");
    if (task == BenchTask::cot && !backends.nli)
        throw PreconditionError("score_predictions: nli backend required for the cot task");
    if (lexicon.empty()) throw PreconditionError("score_predictions: empty lexicon");

    BenchmarkRun run;
    run.model_id = options.model_id;
    run.task = task;

    std::vector<const EvalCase*> eligible;
    for (const auto& c : cases) {
        if (trim(reference_text(c, task)).empty())
            ++run.skipped;
        else
            eligible.push_back(&c);
    }
    run.eligible = eligible.size();
    if (eligible.empty())
        throw PreconditionError("score_predictions: no case carries a " +
                                to_string(task) + " reference");

    const double limit = std::max(
        1.0, options.max_failure_fraction * static_cast<double>(eligible.size()));
    for (const EvalCase* c : eligible) {
        auto it = predictions.find(c->case_id);
        if (it == predictions.end()) {
            run.failures.push_back({c->case_id, "no prediction provided"});
        } else {
            try {
                run.scores.push_back(benchdetail::score_case(
                    *c, task, it->second, *backends.embed, backends.nli,
                    lexicon, options));
            } catch (const std::exception& e) {
                run.failures.push_back({c->case_id, e.what()});
            }
        }
        if (static_cast<double>(run.failures.size()) > limit) {
            std::ostringstream msg;
            msg << "evaluation aborted: " << run.failures.size() << " of "
                << run.eligible << " cases failed (limit "
                << options.max_failure_fraction << ")";
            throw BenchAbortError(msg.str(), std::move(run));
        }
    }
    return run;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct MetricRow {
    std::string model_id;
    std::string task;
    std::string metric;
    std::optional<double> mean;  // absent when no case defined the metric
    std::optional<double> std_dev;  // absent when fewer than two values
    size_t n = 0;
};

// Welford accumulation; sample (n-1) standard deviation.
inline std::vector<MetricRow> aggregate(const BenchmarkRun& run) {
    if (run.scores.empty() && run.failures.empty())
        throw PreconditionError("aggregate: empty benchmark run");
    std::vector<MetricRow> rows;
    for (const auto& metric : metric_names(run.task)) {
        MetricRow row;
        row.model_id = run.model_id;
        row.task = to_string(run.task);
        row.metric = metric;
        double mean = 0.0, m2 = 0.0;
        size_t n = 0;
        for (const auto& s : run.scores) {
            auto it = s.values.find(metric);
            if (it == s.values.end() || !it->second.has_value()) continue;
            ++n;
            double delta = *it->second - mean;
            mean += delta / static_cast<double>(n);
            m2 += delta * (*it->second - mean);
        }
        row.n = n;
        if (n > 0) row.mean = mean;
        if (n > 1) row.std_dev = std::sqrt(m2 / static_cast<double>(n - 1));
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

enum class ReportFormat { markdown, csv };

namespace benchdetail {

inline std::string format3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

inline std::string format_cell(const MetricRow& row) {
    if (!row.mean) return "—";
    std::string cell = format3(*row.mean);
    cell += "±";
    cell += row.std_dev ? format3(*row.std_dev) : "—";
    return cell;
}

}  // namespace benchdetail

// One table row per (model, task); one column per metric; cells `mean±std`
// with three decimals. In markdown the best (maximum) mean per column is
// bolded; the csv carries the same grid without emphasis.
inline std::string render_report(const std::vector<MetricRow>& rows,
                                 ReportFormat format) {
    if (rows.empty()) throw PreconditionError("render_report: no rows");

    std::vector<std::pair<std::string, std::string>> groups;  // (model, task)
    std::vector<std::string> columns;
    for (const auto& row : rows) {
        auto g = std::make_pair(row.model_id, row.task);
        if (std::find(groups.begin(), groups.end(), g) == groups.end())
            groups.push_back(g);
        if (std::find(columns.begin(), columns.end(), row.metric) ==
            columns.end())
            columns.push_back(row.metric);
    }

    auto find_row = [&](const std::pair<std::string, std::string>& g,
                        const std::string& metric) -> const MetricRow* {
        for (const auto& row : rows)
            if (row.model_id == g.first && row.task == g.second &&
                row.metric == metric)
                return &row;
        return nullptr;
    };

    std::map<std::string, double> best;
    for (const auto& column : columns) {
        for (const auto& g : groups) {
            const MetricRow* row = find_row(g, column);
            if (!row || !row->mean) continue;
            auto it = best.find(column);
            if (it == best.end() || *row->mean > it->second)
                best[column] = *row->mean;
        }
    }

    std::ostringstream out;
    if (format == ReportFormat::markdown) {
        out << "| model | task |";
        for (const auto& column : columns) out << ' ' << column << " |";
        out << "\n|---|---|";
        for (size_t i = 0; i < columns.size(); ++i) out << "---|";
        out << '\n';
        for (const auto& g : groups) {
            out << "| " << g.first << " | " << g.second << " |";
            for (const auto& column : columns) {
                const MetricRow* row = find_row(g, column);
                std::string cell = row ? benchdetail::format_cell(*row) : "—";
                bool is_best = row && row->mean && best.count(column) &&
                               *row->mean == best.at(column);
                out << ' ' << (is_best ? "**" + cell + "**" : cell) << " |";
            }
            out << '\n';
        }
    } else {
        out << "model,task";
        for (const auto& column : columns) out << ',' << column;
        out << '\n';
        for (const auto& g : groups) {
            out << g.first << ',' << g.second;
            for (const auto& column : columns) {
                const MetricRow* row = find_row(g, column);
                out << ',' << (row ? benchdetail::format_cell(*row) : "—");
            }
            out << '\n';
        }
    }
    return out.str();
}

inline void write_scores_jsonl(const BenchmarkRun& run,
                               const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& s : run.scores) {
        nlohmann::json j;
        j["case_id"] = s.case_id;
        j["model_id"] = run.model_id;
        j["task"] = to_string(run.task);
        nlohmann::json metrics = nlohmann::json::object();
        for (const auto& [name, value] : s.values)
            metrics[name] = value ? nlohmann::json(*value) : nlohmann::json();
        j["metrics"] = metrics;
        j["hypothesis"] = s.hypothesis;
        out << j.dump() << '\n';
    }
    for (const auto& f : run.failures) {
        nlohmann::json j;
        j["case_id"] = f.case_id;
        j["model_id"] = run.model_id;
        j["task"] = to_string(run.task);
        j["error"] = f.error;
        out << j.dump() << '\n';
    }
}

// Writes scores.jsonl, report.md, and report.csv into `directory`.
inline void write_benchmark_artifacts(const BenchmarkRun& run,
                                      const std::filesystem::path& directory) {
    std::filesystem::create_directories(directory);
    write_scores_jsonl(run, directory / "scores.jsonl");
    auto rows = aggregate(run);
    for (auto [format, name] :
         {std::make_pair(ReportFormat::markdown, "report.md"),
          std::make_pair(ReportFormat::csv, "report.csv")}) {
        std::ofstream out(directory / name, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + (directory / name).string());
        out << render_report(rows, format);
    }
}

// ---------------------------------------------------------------------------
// Mock models
// ---------------------------------------------------------------------------

// Offline stand-ins for a served model. `mock-echo` returns each case's
// reference verbatim (the scoring ceiling); `mock-noisy` returns a degraded
// copy (drops the opening line or sentence, appends a generic filler).
inline std::unique_ptr<ChatBackend> make_mock_model(
    const std::string& model_id, const std::vector<EvalCase>& cases,
    BenchTask task) {
    if (model_id != "mock-echo" && model_id != "mock-noisy")
        throw ConfigError("unknown mock model '" + model_id +
                          "' (expected mock-echo or mock-noisy)");
    auto chat = std::make_unique<KeyedChat>();
    for (const auto& c : cases) {
        const std::string& reference = reference_text(c, task);
        if (trim(reference).empty() || trim(c.question).empty()) continue;
        chat->add_rule(c.question, model_id == "mock-echo"
                                       ? reference
                                       : degrade_reply(reference));
    }
    return chat;
}

// ---------------------------------------------------------------------------
// Dataset statistics
// ---------------------------------------------------------------------------

struct StatsReport {
    size_t case_count = 0;

    size_t age_n = 0;
    size_t age_unspecified = 0;
    std::optional<double> age_mean;
    std::optional<double> age_median;
    std::optional<double> age_sd;  // sample (n-1)

    std::map<std::string, size_t> sex_counts;
    std::map<std::string, size_t> abnormality_counts;
    std::map<std::string, size_t> method_counts;

    // Parameter -> fraction of linked descriptions carrying a value. Empty
    // when no descriptions were supplied.
    std::vector<std::pair<std::string, double>> biometric_availability;
    size_t description_count = 0;

    struct LengthStats {
        size_t n = 0;
        double token_mean = 0.0;
        double token_median = 0.0;
        double char_mean = 0.0;
        double char_median = 0.0;
    };
    // Keys: question, cot, response (only texts present contribute).
    std::map<std::string, LengthStats> text_lengths;

    std::string to_markdown() const;
};

namespace benchdetail {

inline double median_of(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    size_t n = xs.size();
    return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

inline std::pair<double, std::optional<double>> mean_sd(
    const std::vector<double>& xs) {
    double mean = 0.0, m2 = 0.0;
    size_t n = 0;
    for (double x : xs) {
        ++n;
        double delta = x - mean;
        mean += delta / static_cast<double>(n);
        m2 += delta * (x - mean);
    }
    std::optional<double> sd;
    if (n > 1) sd = std::sqrt(m2 / static_cast<double>(n - 1));
    return {mean, sd};
}

inline StatsReport::LengthStats length_stats(const std::vector<std::string>& texts) {
    StatsReport::LengthStats stats;
    std::vector<double> tokens, chars;
    for (const auto& t : texts) {
        tokens.push_back(static_cast<double>(tokenize(t).size()));
        chars.push_back(static_cast<double>(codepoint_count(t)));
    }
    stats.n = texts.size();
    if (!texts.empty()) {
        stats.token_mean = mean_sd(tokens).first;
        stats.token_median = median_of(tokens);
        stats.char_mean = mean_sd(chars).first;
        stats.char_median = median_of(chars);
    }
    return stats;
}

inline std::string format1(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
}

inline std::string percent(size_t part, size_t whole) {
    if (whole == 0) return "0.0%";
    return format1(100.0 * static_cast<double>(part) /
                   static_cast<double>(whole)) +
           "%";
}

}  // namespace benchdetail

// Age, sex, abnormality, biometric availability, surgical method, and text
// length summaries. Categories missing from a case are counted under
// "unspecified" rather than dropped.
inline StatsReport dataset_stats(
    const std::vector<EvalCase>& cases,
    const std::vector<PatientDescription>* descriptions = nullptr) {
    if (cases.empty()) throw PreconditionError("dataset_stats: no cases");

    StatsReport report;
    report.case_count = cases.size();

    std::vector<double> ages;
    std::vector<std::string> questions, cots, responses;
    for (const auto& c : cases) {
        if (c.meta.age)
            ages.push_back(static_cast<double>(*c.meta.age));
        else
            ++report.age_unspecified;
        auto norm = [](const std::string& v) {
            return v.empty() ? std::string("unspecified") : v;
        };
        ++report.sex_counts[norm(c.meta.sex)];
        ++report.abnormality_counts[norm(c.meta.abnormality_status)];
        ++report.method_counts[norm(c.meta.surgical_method)];
        if (!trim(c.question).empty()) questions.push_back(c.question);
        if (!trim(c.complex_cot).empty()) cots.push_back(c.complex_cot);
        if (!trim(c.response).empty()) responses.push_back(c.response);
    }

    report.age_n = ages.size();
    if (!ages.empty()) {
        auto [mean, sd] = benchdetail::mean_sd(ages);
        report.age_mean = mean;
        report.age_sd = sd;
        report.age_median = benchdetail::median_of(ages);
    }

    if (descriptions && !descriptions->empty()) {
        report.description_count = descriptions->size();
        for (const auto& name : BiometricPanel::parameter_names()) {
            size_t present = 0;
            for (const auto& d : *descriptions)
                if (d.biometrics.get(name).has_value()) ++present;
            report.biometric_availability.emplace_back(
                name, static_cast<double>(present) /
                          static_cast<double>(descriptions->size()));
        }
    }

    report.text_lengths["question"] = benchdetail::length_stats(questions);
    report.text_lengths["cot"] = benchdetail::length_stats(cots);
    report.text_lengths["response"] = benchdetail::length_stats(responses);
    return report;
}

inline std::string StatsReport::to_markdown() const {
    using benchdetail::format1;
    using benchdetail::percent;
    std::ostringstream out;
    out << "# Dataset Statistics\n\n";
    out << "Cases: " << case_count << "\n\n";

    out << "## Age Distribution\n\n";
    if (age_mean) {
        out << "- mean: " << format1(*age_mean) << " years\n";
        out << "- median: " << format1(*age_median) << " years\n";
        out << "- sd: " << (age_sd ? format1(*age_sd) : std::string("—"))
            << " years\n";
    } else {
        out << "- no ages recorded\n";
    }
    out << "- with age: " << age_n << "\n";
    out << "- unspecified: " << age_unspecified << "\n\n";

    auto counts_panel = [&](const char* title,
                            const std::map<std::string, size_t>& counts) {
        out << "## " << title << "\n\n";
        for (const auto& [key, count] : counts)
            out << "- " << key << ": " << count << " ("
                << percent(count, case_count) << ")\n";
        out << '\n';
    };
    counts_panel("Sex Distribution", sex_counts);
    counts_panel("Abnormality Distribution", abnormality_counts);

    out << "## Biometric Parameter Availability\n\n";
    if (biometric_availability.empty()) {
        out << "- patient descriptions not provided\n";
    } else {
        out << "Linked descriptions: " << description_count << "\n\n";
        for (const auto& [name, fraction] : biometric_availability) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.2f", fraction);
            out << "- " << name << ": " << buf << "\n";
        }
    }
    out << '\n';

    counts_panel("Recommended Surgical Method", method_counts);

    out << "## Text Length Statistics\n\n";
    for (const auto& [part, stats] : text_lengths) {
        out << "- " << part << ": tokens mean " << format1(stats.token_mean)
            << ", median " << format1(stats.token_median) << "; chars mean "
            << format1(stats.char_mean) << ", median "
            << format1(stats.char_median) << " (n=" << stats.n << ")\n";
    }
    return out.str();
}

}  // namespace csp
