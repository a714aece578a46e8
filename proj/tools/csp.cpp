// csp — batch toolkit for ophthalmic report interpretation, reasoning-dataset
// construction, and model evaluation.
//
// Subcommands: interpret, build-dataset, evaluate, benchmark, stats.
// Exit codes: 0 success, 1 runtime/pipeline failure, 2 configuration/usage.

#include <ctime>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "csp/bench.hpp"
#include "csp/config.hpp"
#include "csp/pipeline.hpp"

namespace {

using namespace csp;

struct GlobalFlags {
    std::string config_file;
    std::optional<uint64_t> seed;
    std::optional<size_t> workers;
    std::string language;
    std::string output_dir;
    bool mock = false;
    bool dry_run = false;
};

RunConfig resolve_config(const GlobalFlags& flags) {
    RunConfig config = flags.config_file.empty()
                           ? RunConfig{}
                           : RunConfig::load(flags.config_file);
    if (flags.seed) config.seed = *flags.seed;
    if (flags.workers) config.workers = *flags.workers;
    if (!flags.language.empty()) config.language = flags.language;
    if (!flags.output_dir.empty()) config.paths.output_dir = flags.output_dir;
    if (flags.mock) config.mock = true;
    if (flags.dry_run) config.dry_run = true;
    return config;
}

std::string run_id_for(const RunConfig& config) {
    if (config.mock) return "mock-seed" + std::to_string(config.seed);
    std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%dT%H%M%SZ", std::gmtime(&now));
    return buf;
}

TermLexicon require_lexicon(const RunConfig& config) {
    if (config.paths.lexicon.empty())
        throw ConfigError(
            "config: a lexicon file is required (set paths.lexicon or pass "
            "--lexicon)");
    return TermLexicon::load(config.paths.lexicon);
}

std::vector<AgentSpec> resolve_agent_specs(const RunConfig& config) {
    return config.paths.agent_specs.empty()
               ? default_agent_specs()
               : load_agent_specs(config.paths.agent_specs);
}

PromptSet resolve_prompts(const RunConfig& config) {
    return config.paths.prompts.empty() ? PromptSet::defaults()
                                        : PromptSet::load_dir(config.paths.prompts);
}

RedactionRuleset resolve_redactions(const RunConfig& config) {
    return config.paths.redaction_rules.empty()
               ? RedactionRuleset::defaults()
               : RedactionRuleset::load(config.paths.redaction_rules);
}

// Exceeding this failure share marks the whole command as failed (exit 1);
// partial outputs and the manifest are still written beforehand.
constexpr double kPipelineFailureLimit = 0.25;

bool too_many_failures(size_t failures, size_t total) {
    if (total == 0) return true;
    return static_cast<double>(failures) >
           kPipelineFailureLimit * static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// interpret
// ---------------------------------------------------------------------------

int cmd_interpret(RunConfig config, const std::string& input_flag) {
    if (!input_flag.empty()) config.paths.input_dir = input_flag;
    config.validate(true);
    if (config.paths.input_dir.empty())
        throw ConfigError("config: input_dir is required (set paths.input_dir "
                          "or pass --input)");

    auto specs = resolve_agent_specs(config);
    auto prompts = resolve_prompts(config);
    auto redactions = resolve_redactions(config);
    const auto out = config.paths.output_dir;

    if (config.dry_run) {
        std::cout << "plan: read report bundles from " << config.paths.input_dir
                  << "\n"
                  << "plan: run " << specs.size()
                  << " specialist agents per eye (workers=" << config.workers
                  << ", backend=" << (config.mock ? "mock" : "http") << ")\n"
                  << "plan: write descriptions to "
                  << (out / "descriptions") << "\n"
                  << "plan: write manifest to "
                  << (out / "interpret_manifest.json") << "\n";
        return 0;
    }

    auto backends = make_backends(config);
    install_interrupt_handler();
    InterpretOutcome outcome = interpret_bundles(
        config.paths.input_dir, *backends.chat, specs, prompts, redactions,
        config.workers, chat_options(config));

    if (!outcome.descriptions.empty())
        write_description_files(outcome.descriptions, out / "descriptions");
    write_json_file(interpret_manifest(outcome),
                    out / "interpret_manifest.json");

    size_t with_missing = 0;
    for (const auto& d : outcome.descriptions)
        if (!d.missing_reports.empty()) ++with_missing;

    std::cout << "interpret: " << outcome.eye_bundles << " eye bundles, "
              << outcome.descriptions.size() << " descriptions, "
              << outcome.failures.size() << " failed, " << with_missing
              << " with missing reports, " << outcome.notes.size()
              << " notes\n"
              << "descriptions: " << (out / "descriptions") << "\n"
              << "manifest: " << (out / "interpret_manifest.json") << "\n";
    for (const auto& f : outcome.failures)
        std::cerr << "failed " << f.case_id << ": " << f.error << "\n";

    if (outcome.interrupted) {
        std::cerr << "interpret: interrupted; partial outputs kept\n";
        return 1;
    }
    if (outcome.descriptions.empty() ||
        too_many_failures(outcome.failures.size(), outcome.eye_bundles))
        return 1;
    return 0;
}

// ---------------------------------------------------------------------------
// build-dataset
// ---------------------------------------------------------------------------

int cmd_build_dataset(RunConfig config, const std::string& descriptions_flag,
                      const std::string& pairing_flag) {
    config.validate(true);
    const auto out = config.paths.output_dir;
    const std::filesystem::path descriptions_dir =
        descriptions_flag.empty() ? out / "descriptions"
                                  : std::filesystem::path(descriptions_flag);

    bool emit_cot = pairing_flag == "cot" || pairing_flag == "both";
    bool emit_response = pairing_flag == "response" || pairing_flag == "both";
    if (!emit_cot && !emit_response)
        throw ConfigError("--pairing must be cot, response, or both (got '" +
                          pairing_flag + "')");

    auto prompts = resolve_prompts(config);

    if (config.dry_run) {
        std::cout << "plan: read descriptions from " << descriptions_dir << "\n"
                  << "plan: build question/reasoning/recommendation records "
                     "(workers="
                  << config.workers
                  << ", backend=" << (config.mock ? "mock" : "http") << ")\n"
                  << "plan: write case store to " << (out / "cases.jsonl")
                  << "\n";
        if (emit_cot)
            std::cout << "plan: write SFT file "
                      << (out / "sft" /
                          ("question_cot." + config.language + ".json"))
                      << "\n";
        if (emit_response)
            std::cout << "plan: write SFT file "
                      << (out / "sft" /
                          ("question_response." + config.language + ".json"))
                      << "\n";
        return 0;
    }

    auto descriptions = read_description_files(descriptions_dir);
    auto decisions =
        physician_decisions_from_manifest(out / "interpret_manifest.json");

    auto backends = make_backends(config);
    install_interrupt_handler();
    BuildOutcome outcome = build_dataset(
        descriptions, *backends.chat, prompts, decisions,
        StageCatalogue::defaults(), config.workers, chat_options(config));

    std::filesystem::create_directories(out);
    if (!outcome.records.empty())
        write_case_records(outcome.records, out / "cases.jsonl");
    write_json_file(build_manifest(outcome), out / "build_manifest.json");

    std::cout << "build-dataset: " << outcome.records.size() << " records, "
              << outcome.failures.size() << " failed\n";
    for (const auto& f : outcome.failures)
        std::cerr << "failed " << f.case_id << ": " << f.error << "\n";

    if (!outcome.records.empty()) {
        std::cout << "cases: " << (out / "cases.jsonl") << "\n";
        std::filesystem::create_directories(out / "sft");
        auto emit = [&](SftPairing pairing, const std::string& stem) {
            auto path = out / "sft" / (stem + "." + config.language + ".json");
            EmitResult result =
                emit_sft(outcome.records, pairing, path, config.language);
            std::cout << "sft: " << path << " (" << result.written
                      << " written, " << result.skipped.size()
                      << " skipped)\n";
            for (const auto& skipped : result.skipped)
                std::cerr << "sft skipped " << skipped << ": no "
                          << (pairing == SftPairing::question_cot
                                  ? "reasoning chain"
                                  : "response")
                          << "\n";
        };
        if (emit_cot) emit(SftPairing::question_cot, "question_cot");
        if (emit_response)
            emit(SftPairing::question_response, "question_response");
    }

    if (outcome.interrupted) {
        std::cerr << "build-dataset: interrupted; partial outputs kept\n";
        return 1;
    }
    if (outcome.records.empty() ||
        too_many_failures(outcome.failures.size(), descriptions.size()))
        return 1;
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate / benchmark
// ---------------------------------------------------------------------------

int finish_benchmark(const BenchmarkRun& run,
                     const std::vector<EvalCase>& cases,
                     const std::filesystem::path& run_dir, bool aborted) {
    std::filesystem::create_directories(run_dir);
    write_benchmark_artifacts(run, run_dir);
    {
        StatsReport stats = dataset_stats(cases);
        std::ofstream out(run_dir / "stats.md",
                          std::ios::binary | std::ios::trunc);
        out << stats.to_markdown();
    }
    std::cout << render_report(aggregate(run), ReportFormat::markdown)
              << "scored: " << run.scores.size() << ", failed: "
              << run.failures.size() << ", skipped: " << run.skipped << "\n"
              << "run directory: " << run_dir << "\n";
    for (const auto& f : run.failures)
        std::cerr << "failed " << f.case_id << ": " << f.error << "\n";
    return aborted ? 1 : 0;
}

int cmd_evaluate(RunConfig config, const std::string& cases_flag,
                 const std::string& predictions_flag,
                 const std::string& task_flag, const std::string& model_flag,
                 const std::string& lexicon_flag) {
    if (!lexicon_flag.empty()) config.paths.lexicon = lexicon_flag;
    config.validate(true);
    BenchTask task = bench_task_from_string(task_flag);
    if (predictions_flag.empty())
        throw ConfigError("evaluate: --predictions is required");

    const std::filesystem::path cases_path =
        cases_flag.empty() ? config.paths.output_dir / "cases.jsonl"
                           : std::filesystem::path(cases_flag);
    const std::string model = model_flag.empty() ? "external" : model_flag;
    const auto run_dir = config.paths.output_dir / model / to_string(task) /
                         run_id_for(config);

    if (config.dry_run) {
        std::cout << "plan: score predictions " << predictions_flag
                  << " against references in " << cases_path << " (task "
                  << to_string(task) << ")\n"
                  << "plan: write scores and reports to " << run_dir << "\n";
        return 0;
    }

    TermLexicon lexicon = require_lexicon(config);
    auto cases = read_eval_cases(cases_path);
    auto predictions = read_predictions(predictions_flag);
    auto backends = make_backends(config);

    BenchOptions options;
    options.model_id = model;
    options.language = config.language;
    options.workers = config.workers;
    options.seed = config.seed;

    try {
        BenchmarkRun run =
            score_predictions(cases, task, predictions,
                              {nullptr, backends.embed.get(),
                               backends.nli.get()},
                              lexicon, options);
        return finish_benchmark(run, cases, run_dir, false);
    } catch (const BenchAbortError& e) {
        std::cerr << "csp: " << e.what() << "\n";
        return finish_benchmark(e.partial, cases, run_dir, true);
    }
}

int cmd_benchmark(RunConfig config, const std::string& cases_flag,
                  const std::string& task_flag, const std::string& model_flag,
                  const std::string& lexicon_flag) {
    if (!lexicon_flag.empty()) config.paths.lexicon = lexicon_flag;
    config.validate(true);
    BenchTask task = bench_task_from_string(task_flag);
    if (model_flag.empty())
        throw ConfigError("benchmark: --model is required (mock-echo and "
                          "mock-noisy run offline with --mock)");

    const std::filesystem::path cases_path =
        cases_flag.empty() ? config.paths.output_dir / "cases.jsonl"
                           : std::filesystem::path(cases_flag);
    const auto run_dir = config.paths.output_dir / model_flag /
                         to_string(task) / run_id_for(config);

    if (config.dry_run) {
        std::cout << "plan: query model " << model_flag << " over cases in "
                  << cases_path << " (task " << to_string(task)
                  << ", workers=" << config.workers << ")\n"
                  << "plan: write scores and reports to " << run_dir << "\n";
        return 0;
    }

    TermLexicon lexicon = require_lexicon(config);
    auto cases = read_eval_cases(cases_path);

    std::unique_ptr<ChatBackend> chat;
    if (config.mock) {
        chat = make_mock_model(model_flag, cases, task);
    } else {
        if (config.chat.endpoint_url.empty())
            throw ConfigError("benchmark: chat endpoint_url is required "
                              "unless --mock is set");
        BackendConfig served = config.chat;
        served.model_id = model_flag;
        chat = std::make_unique<HttpChatBackend>(
            served, nullptr, SystemClock::instance(), config.seed);
    }
    auto backends = make_backends(config);

    BenchOptions options;
    options.model_id = model_flag;
    options.language = config.language;
    options.workers = config.workers;
    options.seed = config.seed;

    try {
        BenchmarkRun run = run_benchmark(
            cases, task,
            {chat.get(), backends.embed.get(), backends.nli.get()}, lexicon,
            options);
        return finish_benchmark(run, cases, run_dir, false);
    } catch (const BenchAbortError& e) {
        std::cerr << "csp: " << e.what() << "\n";
        return finish_benchmark(e.partial, cases, run_dir, true);
    }
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

int cmd_stats(RunConfig config, const std::string& cases_flag,
              const std::string& output_flag) {
    config.validate(true);
    const std::filesystem::path cases_path =
        cases_flag.empty() ? config.paths.output_dir / "cases.jsonl"
                           : std::filesystem::path(cases_flag);
    const std::filesystem::path output_path =
        output_flag.empty() ? config.paths.output_dir / "stats.md"
                            : std::filesystem::path(output_flag);

    if (config.dry_run) {
        std::cout << "plan: read case store " << cases_path << "\n"
                  << "plan: write statistics to " << output_path << "\n";
        return 0;
    }

    auto records = read_case_records(cases_path);
    std::vector<EvalCase> cases;
    std::vector<PatientDescription> descriptions;
    for (const auto& record : records) {
        cases.push_back(eval_case_from_record(record));
        descriptions.push_back(record.description);
    }
    StatsReport report = dataset_stats(cases, &descriptions);

    std::filesystem::create_directories(output_path.parent_path());
    {
        std::ofstream out(output_path, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + output_path.string());
        out << report.to_markdown();
    }
    std::cout << report.to_markdown() << "stats: " << output_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Ophthalmic report interpretation, surgical-planning dataset "
                 "construction, and benchmark toolkit"};
    app.require_subcommand(1);

    GlobalFlags flags;
    app.add_option("--config", flags.config_file,
                   "JSON run configuration file");
    auto* seed_opt = app.add_option("--seed", "RNG seed for reproducible runs");
    auto* workers_opt =
        app.add_option("--workers", "worker threads for case-level stages");
    app.add_option("--language", flags.language,
                   "dataset language (en or zh)");
    app.add_option("--output", flags.output_dir, "output directory");
    app.add_flag("--mock", flags.mock, "use offline deterministic backends");
    app.add_flag("--dry-run", flags.dry_run,
                 "validate configuration and print the plan only");

    std::string input_dir;
    auto* interpret =
        app.add_subcommand("interpret", "interpret report bundles into "
                                        "structured patient descriptions");
    interpret->add_option("--input", input_dir, "report bundle directory");

    std::string descriptions_dir, pairing = "both";
    auto* build = app.add_subcommand(
        "build-dataset", "build question/reasoning/recommendation records "
                         "and SFT files from descriptions");
    build->add_option("--descriptions", descriptions_dir,
                      "patient description directory");
    build->add_option("--pairing", pairing, "cot, response, or both");

    std::string eval_cases, eval_predictions, eval_task = "cot", eval_model,
                eval_lexicon;
    auto* evaluate = app.add_subcommand(
        "evaluate", "score pre-generated predictions against the case store");
    evaluate->add_option("--cases", eval_cases, "case store (JSONL)");
    evaluate->add_option("--predictions", eval_predictions,
                         "predictions JSONL with case_id and output");
    evaluate->add_option("--task", eval_task, "cot or response");
    evaluate->add_option("--model", eval_model, "label for the report rows");
    evaluate->add_option("--lexicon", eval_lexicon, "key-term lexicon file");

    std::string bench_cases, bench_task = "cot", bench_model, bench_lexicon;
    auto* benchmark = app.add_subcommand(
        "benchmark", "query a model over the case store and score it");
    benchmark->add_option("--cases", bench_cases, "case store (JSONL)");
    benchmark->add_option("--task", bench_task, "cot or response");
    benchmark->add_option("--model", bench_model,
                          "served model id, or mock-echo / mock-noisy");
    benchmark->add_option("--lexicon", bench_lexicon, "key-term lexicon file");

    std::string stats_cases, stats_output;
    auto* stats =
        app.add_subcommand("stats", "dataset statistics for a case store");
    stats->add_option("--cases", stats_cases, "case store (JSONL)");
    stats->add_option("--output", stats_output, "statistics file destination");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints the message and usage pointer
        return 2;
    }

    if (seed_opt->count()) flags.seed = seed_opt->as<uint64_t>();
    if (workers_opt->count()) flags.workers = workers_opt->as<size_t>();

    try {
        RunConfig config = resolve_config(flags);
        if (app.got_subcommand(interpret))
            return cmd_interpret(std::move(config), input_dir);
        if (app.got_subcommand(build))
            return cmd_build_dataset(std::move(config), descriptions_dir,
                                     pairing);
        if (app.got_subcommand(evaluate))
            return cmd_evaluate(std::move(config), eval_cases,
                                eval_predictions, eval_task, eval_model,
                                eval_lexicon);
        if (app.got_subcommand(benchmark))
            return cmd_benchmark(std::move(config), bench_cases, bench_task,
                                 bench_model, bench_lexicon);
        if (app.got_subcommand(stats))
            return cmd_stats(std::move(config), stats_cases, stats_output);
        std::cerr << "csp: no subcommand selected\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "csp: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "csp: " << e.what() << "\n";
        return 1;
    }
}
