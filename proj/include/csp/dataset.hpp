#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csp/agents.hpp"
#include "csp/errors.hpp"
#include "csp/gateway.hpp"
#include "csp/prompts.hpp"
#include "csp/text.hpp"

namespace csp {

// A generation stage (question, reasoning chain, recommendation, knowledge
// QA) exhausted its retry budget; `problems` holds the last validation
// failures verbatim.
class GenerationError : public Error {
public:
    GenerationError(const std::string& msg, std::vector<std::string> p)
        : Error(msg), problems(std::move(p)) {}
    std::vector<std::string> problems;
};

// ---------------------------------------------------------------------------
// Reasoning stage catalogue
// ---------------------------------------------------------------------------

// Eight reasoning stages: six fixed clinical stages plus two slots
// ("measurement consistency check", "decision synthesis") that are part of
// this toolkit's configuration, not a clinical standard; override them via
// StageCatalogue if a different split of the eight steps is preferred.
struct StageCatalogue {
    std::vector<std::string> stages;     // the allowed tags, in canonical order
    std::vector<std::string> mandatory;  // must each appear >= once per chain

    static StageCatalogue defaults() {
        StageCatalogue c;
        c.stages = {"biometric parameter analysis",
                    "corneal topography interpretation",
                    "measurement consistency check",
                    "abnormal findings",
                    "surgical risk assessment",
                    "IOL selection logic",
                    "patient-specific adaptations",
                    "decision synthesis"};
        c.mandatory = {"biometric parameter analysis",
                       "corneal topography interpretation",
                       "abnormal findings",
                       "IOL selection logic",
                       "surgical risk assessment",
                       "patient-specific adaptations"};
        return c;
    }

    void validate() const {
        if (stages.empty()) throw ConfigError("StageCatalogue: no stages");
        std::set<std::string> seen(stages.begin(), stages.end());
        if (seen.size() != stages.size())
            throw ConfigError("StageCatalogue: duplicate stage names");
        for (const auto& m : mandatory)
            if (!seen.count(m))
                throw ConfigError("StageCatalogue: mandatory stage '" + m +
                                  "' not in the stage list");
    }

    size_t chain_length() const { return stages.size(); }

    bool allows(const std::string& stage) const {
        return std::find(stages.begin(), stages.end(), stage) != stages.end();
    }
};

// ---------------------------------------------------------------------------
// Diagnostic questions
// ---------------------------------------------------------------------------

struct DiagnosticQuestion {
    std::string case_id;
    std::string text;
    std::vector<std::string> highlighted_findings;  // field names referenced
};

// Verb stems that would turn a question into a treatment order; matched as
// token prefixes so inflections ("implanting", "scheduled") are caught too.
inline const std::vector<std::string>& banned_question_stems() {
    static const std::vector<std::string> stems = {"implant", "prescrib",
                                                   "schedul", "operat"};
    return stems;
}

// Problems with a candidate question; empty means valid.
inline std::vector<std::string> validate_question_text(const std::string& text) {
    std::vector<std::string> problems;
    std::string t = trim(text);
    if (t.empty()) {
        problems.push_back("question text is empty");
        return problems;
    }
    if (t.back() != '?')
        problems.push_back("question must end with '?'");
    TokenSeq tokens = tokenize(t);
    if (tokens.size() < 8)
        problems.push_back("question is too short to describe a case");
    for (const auto& tok : tokens)
        for (const auto& stem : banned_question_stems())
            if (starts_with(tok, stem)) {
                problems.push_back("banned treatment verb '" + tok + "'");
                break;
            }
    return problems;
}

namespace datasetdetail {

// Phrases that commonly name a structured field in prose, besides the field
// name itself ("axial length" -> AL).
inline const std::vector<std::pair<std::string, std::string>>& field_synonyms() {
    static const std::vector<std::pair<std::string, std::string>> v = {
        {"axial length", "AL"},
        {"anterior chamber depth", "ACD"},
        {"lens thickness", "LT"},
        {"central corneal thickness", "CCT"},
        {"corneal astigmatism", "corneal_astigmatism"},
        {"central macular thickness", "cmt"},
        {"cup to disc", "cup_disc_ratio"},
        {"cup-to-disc", "cup_disc_ratio"},
    };
    return v;
}

inline bool tokens_contain_run(const TokenSeq& hay, const TokenSeq& needle) {
    if (needle.empty() || needle.size() > hay.size()) return false;
    for (size_t i = 0; i + needle.size() <= hay.size(); ++i) {
        bool all = true;
        for (size_t k = 0; k < needle.size(); ++k)
            if (hay[i + k] != needle[k]) {
                all = false;
                break;
            }
        if (all) return true;
    }
    return false;
}

}  // namespace datasetdetail

// Field names of the description that the question text actually mentions:
// by field name token, by a known synonym phrase, or by quoting the
// finding's value. Only fields present in this description count.
inline std::vector<std::string> highlighted_fields(
    const std::string& question_text, const PatientDescription& d) {
    const TokenSeq q = tokenize(question_text);
    std::set<std::string> hits;

    auto mentions = [&](const std::string& phrase) {
        return datasetdetail::tokens_contain_run(q, tokenize(phrase));
    };

    for (const auto& name : BiometricPanel::parameter_names()) {
        if (!d.biometrics.get(name)) continue;
        if (mentions(name)) hits.insert(name);
    }
    for (const auto& [phrase, field] : datasetdetail::field_synonyms()) {
        bool present = false;
        for (const auto& name : BiometricPanel::parameter_names())
            if (name == field && d.biometrics.get(name)) present = true;
        for (const auto& f : d.findings)
            if (!f.superseded && f.field_name == field) present = true;
        if (present && mentions(phrase)) hits.insert(field);
    }
    for (const auto& f : d.findings) {
        if (f.superseded) continue;
        if (mentions(f.field_name) || mentions(f.value_text))
            hits.insert(f.field_name);
    }
    return {hits.begin(), hits.end()};
}

namespace datasetdetail {

inline std::string feedback_prompt(const std::string& base,
                                   const std::vector<std::string>& problems,
                                   const std::string& instruction) {
    std::ostringstream p;
    p << base << "\n" << markers::kViolationsBegin << "\n"
      << "Your previous reply was rejected:\n";
    for (const auto& m : problems) p << "- " << m << "\n";
    p << instruction << "\n";
    return p.str();
}

}  // namespace datasetdetail

// Turns a patient description into one diagnostic question via the gateway,
// re-prompting with the validation problems up to max_retries extra times.
inline DiagnosticQuestion generate_question(const PatientDescription& d,
                                            ChatBackend& chat,
                                            const PromptSet& prompts,
                                            const ChatCallOptions& opts = {},
                                            int max_retries = 2) {
    const std::string base =
        render_template(prompts.question, {{"digest", describe_for_prompt(d)}});
    std::string prompt = base;
    std::vector<std::string> problems;
    for (int attempt = 0; attempt <= max_retries; ++attempt) {
        std::string reply = trim(chat.chat(opts.request(prompt)));
        problems = validate_question_text(reply);
        if (problems.empty()) {
            DiagnosticQuestion q;
            q.case_id = d.case_id;
            q.text = reply;
            q.highlighted_findings = highlighted_fields(reply, d);
            return q;
        }
        prompt = datasetdetail::feedback_prompt(
            base, problems, "Rewrite the question fixing every problem above.");
    }
    std::string msg = "question generation failed for case " + d.case_id + ":";
    for (const auto& p : problems) msg += " [" + p + "]";
    throw GenerationError(msg, problems);
}

// ---------------------------------------------------------------------------
// Reasoning chains
// ---------------------------------------------------------------------------

struct ReasoningStep {
    int index = 0;
    std::string stage;
    std::string text;
};

struct ReasoningChain {
    std::string case_id;
    std::vector<ReasoningStep> steps;

    // "N. [stage] text" lines joined by newlines; parse() reverses exactly.
    std::string serialize() const {
        std::ostringstream out;
        for (size_t i = 0; i < steps.size(); ++i) {
            if (i) out << '\n';
            out << steps[i].index << ". [" << steps[i].stage << "] "
                << steps[i].text;
        }
        return out.str();
    }

    static ReasoningChain parse(const std::string& text,
                                std::vector<std::string>* problems = nullptr) {
        static const std::regex line_re(R"(^(\d+)\.\s+\[([^\]]+)\]\s+(.*\S)\s*$)");
        ReasoningChain chain;
        for (const auto& raw : split_lines(text)) {
            std::string line = trim(raw);
            if (line.empty()) continue;
            std::smatch m;
            if (!std::regex_match(line, m, line_re)) {
                if (problems)
                    problems->push_back("malformed step line: '" + line + "'");
                continue;
            }
            ReasoningStep step;
            step.index = std::stoi(m[1].str());
            step.stage = trim(m[2].str());
            step.text = m[3].str();
            chain.steps.push_back(std::move(step));
        }
        return chain;
    }
};

// Numeric values a chain is allowed to quote: the screened biometric panel,
// the age, and every number carried by a finding of the description.
inline std::vector<double> traceable_numbers(const PatientDescription& d) {
    std::vector<double> allowed;
    if (d.demographics.age) allowed.push_back(*d.demographics.age);
    for (const auto& name : BiometricPanel::parameter_names())
        if (auto v = d.biometrics.get(name)) allowed.push_back(*v);
    for (const auto& f : d.findings) {
        if (f.number) allowed.push_back(*f.number);
        for (double v : extract_numbers(f.value_text)) allowed.push_back(v);
    }
    return allowed;
}

// Chain invariants: exactly catalogue.chain_length() steps, indices
// consecutive from 1, stage tags drawn from the catalogue, every mandatory
// stage present, and every number quoted in a step traceable to the
// description. Returns the list of problems; empty means valid.
inline std::vector<std::string> validate_chain(const ReasoningChain& chain,
                                               const StageCatalogue& catalogue,
                                               const PatientDescription& d) {
    catalogue.validate();
    std::vector<std::string> problems;
    if (chain.steps.size() != catalogue.chain_length())
        problems.push_back("expected " + std::to_string(catalogue.chain_length()) +
                           " steps, got " + std::to_string(chain.steps.size()));
    for (size_t i = 0; i < chain.steps.size(); ++i) {
        const auto& step = chain.steps[i];
        if (step.index != static_cast<int>(i) + 1)
            problems.push_back("step " + std::to_string(i + 1) +
                               " carries index " + std::to_string(step.index));
        if (!catalogue.allows(step.stage))
            problems.push_back("unknown stage tag '" + step.stage + "'");
        if (trim(step.text).empty())
            problems.push_back("step " + std::to_string(step.index) +
                               " has no text");
    }
    std::set<std::string> tags;
    for (const auto& step : chain.steps) tags.insert(step.stage);
    for (const auto& m : catalogue.mandatory)
        if (!tags.count(m)) problems.push_back("missing mandatory stage '" + m + "'");

    const std::vector<double> allowed = traceable_numbers(d);
    for (const auto& step : chain.steps) {
        for (double v : extract_numbers(step.text)) {
            bool traced = false;
            for (double a : allowed)
                if (std::abs(v - a) <= 1e-6 * std::max(1.0, std::abs(a))) {
                    traced = true;
                    break;
                }
            if (!traced) {
                std::ostringstream msg;
                msg << "step " << step.index << " quotes "
                    << agentdetail::format_number(v)
                    << ", which matches no finding in the description";
                problems.push_back(msg.str());
            }
        }
    }
    return problems;
}

// Annotates the eight-step reasoning chain for a question, enforcing the
// chain invariants (stage coverage, numbering, numeric traceability) with
// feedback retries.
inline ReasoningChain annotate_cot(const DiagnosticQuestion& question,
                                   const PatientDescription& d,
                                   ChatBackend& chat, const PromptSet& prompts,
                                   const StageCatalogue& catalogue =
                                       StageCatalogue::defaults(),
                                   const ChatCallOptions& opts = {},
                                   int max_retries = 2) {
    if (question.case_id != d.case_id)
        throw PreconditionError("annotate_cot: question " + question.case_id +
                                " does not belong to case " + d.case_id);
    const std::string base =
        render_template(prompts.cot, {{"digest", describe_for_prompt(d)},
                                      {"question", question.text}});
    std::string prompt = base;
    std::vector<std::string> problems;
    for (int attempt = 0; attempt <= max_retries; ++attempt) {
        std::string reply = chat.chat(opts.request(prompt));
        problems.clear();
        ReasoningChain chain = ReasoningChain::parse(reply, &problems);
        chain.case_id = d.case_id;
        auto invariant_problems = validate_chain(chain, catalogue, d);
        problems.insert(problems.end(), invariant_problems.begin(),
                        invariant_problems.end());
        if (problems.empty()) return chain;
        prompt = datasetdetail::feedback_prompt(
            base, problems,
            "Re-emit the full corrected reasoning chain, all steps.");
    }
    std::string msg = "reasoning annotation failed for case " + d.case_id + ":";
    for (const auto& p : problems) msg += " [" + p + "]";
    throw GenerationError(msg, problems);
}

// ---------------------------------------------------------------------------
// Recommendations
// ---------------------------------------------------------------------------

struct Recommendation {
    std::string case_id;
    std::string key_findings;
    std::string iol_selection;
    std::string surgical_technique;
    std::vector<std::string> risk_alerts;
    std::string postoperative_plan;

    std::string iol_type;                // lens description, without power
    std::optional<double> iol_power_d;   // parsed from iol_selection, diopters

    bool physician_aligned = true;       // false when a provided physician
    std::string physician_decision;      // decision is not matched verbatim

    std::string serialize() const {
        std::ostringstream out;
        out << "Key findings: " << key_findings << "\n"
            << "IOL selection: " << iol_selection << "\n"
            << "Surgical technique: " << surgical_technique << "\n"
            << "Risk alerts: ";
        for (size_t i = 0; i < risk_alerts.size(); ++i)
            out << (i ? "; " : "") << risk_alerts[i];
        out << "\n"
            << "Postoperative plan: " << postoperative_plan;
        return out.str();
    }
};

inline const std::vector<std::string>& recommendation_headers() {
    static const std::vector<std::string> v = {
        "Key findings", "IOL selection", "Surgical technique", "Risk alerts",
        "Postoperative plan"};
    return v;
}

// Parses the five mandated sections ("Header: content" lines, in order;
// unheaded lines continue the previous section). Problems out-param lists
// missing or empty sections; power is extracted when the IOL section states
// one ("22.0 D").
inline Recommendation parse_recommendation(const std::string& text,
                                           std::vector<std::string>* problems) {
    std::map<std::string, std::string> sections;
    std::string current;
    for (const auto& raw : split_lines(text)) {
        std::string line = trim(raw);
        if (line.empty()) continue;
        bool started = false;
        for (const auto& header : recommendation_headers()) {
            if (starts_with(line, header + ":")) {
                current = header;
                sections[current] = trim(line.substr(header.size() + 1));
                started = true;
                break;
            }
        }
        if (!started && !current.empty()) {
            auto& body = sections[current];
            if (!body.empty()) body += ' ';
            body += line;
        }
    }

    Recommendation rec;
    for (const auto& header : recommendation_headers()) {
        auto it = sections.find(header);
        if (it == sections.end() || it->second.empty()) {
            if (problems)
                problems->push_back("missing section '" + header + "'");
            continue;
        }
        const std::string& body = it->second;
        if (header == "Key findings") rec.key_findings = body;
        if (header == "IOL selection") rec.iol_selection = body;
        if (header == "Surgical technique") rec.surgical_technique = body;
        if (header == "Postoperative plan") rec.postoperative_plan = body;
        if (header == "Risk alerts") {
            std::istringstream parts(body);
            std::string alert;
            while (std::getline(parts, alert, ';'))
                if (!trim(alert).empty()) rec.risk_alerts.push_back(trim(alert));
            if (rec.risk_alerts.empty())
                if (problems) problems->push_back("risk alerts section is empty");
        }
    }

    if (!rec.iol_selection.empty()) {
        static const std::regex power_re(R"((\d+(?:\.\d+)?)\s*D\b)");
        std::smatch m;
        if (std::regex_search(rec.iol_selection, m, power_re)) {
            rec.iol_power_d = std::stod(m[1].str());
            if (*rec.iol_power_d < 0.0 || *rec.iol_power_d > 40.0)
                if (problems)
                    problems->push_back("IOL power " + m[1].str() +
                                        " D outside 0-40 D");
        }
        size_t comma = rec.iol_selection.find(',');
        rec.iol_type = trim(comma == std::string::npos
                                ? rec.iol_selection
                                : rec.iol_selection.substr(0, comma));
    }
    return rec;
}

// Surgical-method category used by the dataset statistics and benchmark
// metadata.
inline std::string classify_surgical_method(const std::string& technique) {
    std::string t = to_lower(technique);
    if (trim(t).empty()) return "unspecified";
    if (t.find("capsular tension ring") != std::string::npos)
        return "ctr_implantation";
    if (t.find("phacoemulsification") != std::string::npos)
        return "phacoemulsification";
    return "other";
}

// Generates the five-section recommendation. A provided physician decision
// must appear verbatim inside the surgical technique section; a mismatch
// flags the record as misaligned but keeps it (alignment statistics are a
// dataset-quality signal, not a filter).
inline Recommendation synthesize_recommendation(
    const DiagnosticQuestion& question, const ReasoningChain& chain,
    const PatientDescription& d, ChatBackend& chat, const PromptSet& prompts,
    const std::string& physician_decision = "",
    const ChatCallOptions& opts = {}, int max_retries = 2) {
    if (chain.case_id != d.case_id)
        throw PreconditionError("synthesize_recommendation: chain " +
                                chain.case_id + " does not belong to case " +
                                d.case_id);
    const std::string base = render_template(
        prompts.recommendation, {{"digest", describe_for_prompt(d)},
                                 {"question", question.text},
                                 {"chain", chain.serialize()}});
    std::string prompt = base;
    std::vector<std::string> problems;
    for (int attempt = 0; attempt <= max_retries; ++attempt) {
        std::string reply = chat.chat(opts.request(prompt));
        problems.clear();
        Recommendation rec = parse_recommendation(reply, &problems);
        if (problems.empty()) {
            rec.case_id = d.case_id;
            rec.physician_decision = trim(physician_decision);
            rec.physician_aligned =
                rec.physician_decision.empty() ||
                rec.surgical_technique.find(rec.physician_decision) !=
                    std::string::npos;
            return rec;
        }
        prompt = datasetdetail::feedback_prompt(
            base, problems, "Re-emit all five sections, complete.");
    }
    std::string msg = "recommendation synthesis failed for case " + d.case_id + ":";
    for (const auto& p : problems) msg += " [" + p + "]";
    throw GenerationError(msg, problems);
}

// ---------------------------------------------------------------------------
// Case records
// ---------------------------------------------------------------------------

struct CaseRecord {
    std::string case_id;
    PatientDescription description;
    DiagnosticQuestion question;
    ReasoningChain chain;
    Recommendation recommendation;

    std::string complex_cot() const { return chain.serialize(); }
    std::string response() const { return recommendation.serialize(); }

    nlohmann::json to_json() const {
        auto lengths = [](const std::string& s) {
            return nlohmann::json{{"tokens", tokenize(s).size()},
                                  {"chars", codepoint_count(s)}};
        };
        nlohmann::json meta;
        if (description.demographics.age) meta["age"] = *description.demographics.age;
        meta["sex"] = description.demographics.sex;
        meta["abnormality"] = description.abnormality_status;
        meta["surgical_method"] =
            classify_surgical_method(recommendation.surgical_technique);
        meta["text_lengths"] = {{"question", lengths(question.text)},
                                {"cot", lengths(complex_cot())},
                                {"response", lengths(response())}};
        meta["highlighted_findings"] = question.highlighted_findings;
        if (!recommendation.physician_decision.empty()) {
            meta["physician_decision"] = recommendation.physician_decision;
            meta["physician_aligned"] = recommendation.physician_aligned;
        }
        nlohmann::json available = nlohmann::json::array();
        for (const auto& [name, have] : description.biometrics.availability())
            if (have) available.push_back(name);
        meta["biometrics_available"] = std::move(available);
        return nlohmann::json{{"case_id", case_id},
                              {"question", question.text},
                              {"complex_cot", complex_cot()},
                              {"response", response()},
                              {"meta", std::move(meta)},
                              {"patient", description.to_json()}};
    }
};

inline CaseRecord case_record_from_json(const nlohmann::json& j) {
    CaseRecord r;
    r.case_id = j.at("case_id").get<std::string>();
    if (j.contains("patient"))
        r.description = PatientDescription::from_json(j.at("patient"));
    else
        r.description.case_id = r.case_id;
    r.question.case_id = r.case_id;
    r.question.text = j.at("question").get<std::string>();
    const auto& meta = j.at("meta");
    for (const auto& h :
         meta.value("highlighted_findings", nlohmann::json::array()))
        r.question.highlighted_findings.push_back(h.get<std::string>());
    r.chain = ReasoningChain::parse(j.at("complex_cot").get<std::string>());
    r.chain.case_id = r.case_id;
    r.recommendation = parse_recommendation(j.at("response").get<std::string>(),
                                            nullptr);
    r.recommendation.case_id = r.case_id;
    if (meta.contains("physician_decision")) {
        r.recommendation.physician_decision =
            meta.at("physician_decision").get<std::string>();
        r.recommendation.physician_aligned =
            meta.value("physician_aligned", true);
    }
    return r;
}

inline std::vector<CaseRecord> read_case_records(
    const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read case records: " + path.string());
    std::vector<CaseRecord> records;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            records.push_back(case_record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw Error("case record store " + path.string() + " line " +
                        std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

// Runs the three construction stages for one synthesized patient.
inline CaseRecord build_case_record(const PatientDescription& d,
                                    ChatBackend& chat, const PromptSet& prompts,
                                    const StageCatalogue& catalogue =
                                        StageCatalogue::defaults(),
                                    const std::string& physician_decision = "",
                                    const ChatCallOptions& opts = {},
                                    int max_retries = 2) {
    CaseRecord record;
    record.case_id = d.case_id;
    record.description = d;
    record.question = generate_question(d, chat, prompts, opts, max_retries);
    record.chain = annotate_cot(record.question, d, chat, prompts, catalogue,
                                opts, max_retries);
    record.recommendation =
        synthesize_recommendation(record.question, record.chain, d, chat,
                                  prompts, physician_decision, opts, max_retries);
    return record;
}

// JSONL store: one case per line, sorted by case_id, newline-terminated.
inline size_t write_case_records(const std::vector<CaseRecord>& records,
                                 const std::filesystem::path& path) {
    std::vector<const CaseRecord*> sorted;
    std::set<std::string> ids;
    for (const auto& r : records) {
        if (!ids.insert(r.case_id).second)
            throw IntegrityError("write_case_records: duplicate case " +
                                 r.case_id);
        sorted.push_back(&r);
    }
    std::sort(sorted.begin(), sorted.end(),
              [](const CaseRecord* a, const CaseRecord* b) {
                  return a->case_id < b->case_id;
              });
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write case records: " + path.string());
    for (const auto* r : sorted) out << r->to_json().dump() << "\n";
    return sorted.size();
}

// ---------------------------------------------------------------------------
// Alpaca SFT emission
// ---------------------------------------------------------------------------

struct SFTSample {
    std::string instruction;
    std::string input;  // may be empty
    std::string output;

    void validate() const {
        if (instruction.empty()) throw PreconditionError("SFTSample: empty instruction");
        if (output.empty()) throw PreconditionError("SFTSample: empty output");
    }
};

enum class SftPairing { question_cot, question_response };

inline std::string to_string(SftPairing p) {
    return p == SftPairing::question_cot ? "question_cot" : "question_response";
}

// Fixed instruction preambles, one per (pairing, language). Constants so SFT
// files are reproducible byte for byte.
inline std::string sft_instruction(SftPairing pairing, const std::string& language) {
    if (language == "en") {
        if (pairing == SftPairing::question_cot)
            return "You are an experienced ophthalmic surgeon. Read the case "
                   "question and reason step by step through the preoperative "
                   "findings: biometric parameters, corneal topography, "
                   "measurement consistency, abnormal findings, surgical risk, "
                   "intraocular lens selection logic, patient-specific "
                   "adaptations, and a final decision synthesis. Number every "
                   "step.";
        return "You are an experienced ophthalmic surgeon. Read the case "
               "question and give the final surgical plan in five sections: "
               "key findings, IOL selection, surgical technique, risk alerts, "
               "and postoperative plan.";
    }
    if (language == "zh") {
        if (pairing == SftPairing::question_cot)
            return "你是一名经验丰富的眼科手术专家。请阅读病例问题，"
                   "对术前检查结果进行逐步推理：生物测量参数分析、角膜地形图解读、"
                   "测量一致性核查、异常发现、手术风险评估、人工晶状体选择逻辑、"
                   "患者个体化调整，以及最终决策综合，并为每一步编号。";
        return "你是一名经验丰富的眼科手术专家。请阅读病例问题，"
               "并分五个部分给出最终手术方案：关键发现、人工晶状体选择、"
               "手术方式、风险提示和术后管理计划。";
    }
    throw ConfigError("sft_instruction: unsupported language '" + language + "'");
}

inline std::string knowledge_instruction(const std::string& language) {
    if (language == "en")
        return "You are an ophthalmology knowledge assistant. Answer the "
               "question accurately, based on established clinical knowledge "
               "of cataract assessment and surgical planning.";
    if (language == "zh")
        return "你是一名眼科知识助手。请基于白内障评估与手术规划的既有临床知识，"
               "准确回答下列问题。";
    throw ConfigError("knowledge_instruction: unsupported language '" + language +
                      "'");
}

struct EmitResult {
    size_t written = 0;
    std::vector<std::string> skipped;  // case_ids lacking the target field
};

// Serializes samples as the Alpaca JSON array: objects with exactly the keys
// instruction/input/output, two-space indentation, UTF-8, newline-terminated.
inline std::string render_sft_json(const std::vector<SFTSample>& samples) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : samples) {
        s.validate();
        arr.push_back({{"instruction", s.instruction},
                       {"input", s.input},
                       {"output", s.output}});
    }
    return arr.dump(2) + "\n";
}

inline std::vector<SFTSample> parse_sft_json(const std::string& text) {
    nlohmann::json arr;
    try {
        arr = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("SFT file is not valid JSON: ") + e.what());
    }
    if (!arr.is_array()) throw Error("SFT file must hold a JSON array");
    std::vector<SFTSample> samples;
    for (const auto& item : arr) {
        if (!item.is_object() || item.size() != 3 || !item.contains("instruction") ||
            !item.contains("input") || !item.contains("output"))
            throw Error("SFT record must have exactly the keys "
                        "instruction/input/output");
        SFTSample s;
        s.instruction = item.at("instruction").get<std::string>();
        s.input = item.at("input").get<std::string>();
        s.output = item.at("output").get<std::string>();
        s.validate();
        samples.push_back(std::move(s));
    }
    return samples;
}

inline std::vector<SFTSample> load_sft_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read SFT file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_sft_json(ss.str());
}

// Emits one Alpaca file for the requested pairing: instruction = the fixed
// preamble, input = question, output = CoT text or response text. Records
// missing the target are skipped and reported; an empty result is an error.
inline EmitResult emit_sft(const std::vector<CaseRecord>& records,
                           SftPairing pairing,
                           const std::filesystem::path& destination,
                           const std::string& language = "en") {
    const std::string instruction = sft_instruction(pairing, language);
    std::vector<const CaseRecord*> sorted;
    for (const auto& r : records) sorted.push_back(&r);
    std::sort(sorted.begin(), sorted.end(),
              [](const CaseRecord* a, const CaseRecord* b) {
                  return a->case_id < b->case_id;
              });

    EmitResult result;
    std::vector<SFTSample> samples;
    for (const auto* r : sorted) {
        std::string target = pairing == SftPairing::question_cot
                                 ? r->complex_cot()
                                 : r->response();
        if (trim(r->question.text).empty() || trim(target).empty()) {
            result.skipped.push_back(r->case_id);
            continue;
        }
        samples.push_back({instruction, r->question.text, std::move(target)});
    }
    if (samples.empty())
        throw Error("emit_sft: no records produced output for pairing " +
                    to_string(pairing));

    std::ofstream out(destination, std::ios::binary);
    if (!out) throw ConfigError("cannot write SFT file: " + destination.string());
    out << render_sft_json(samples);
    result.written = samples.size();
    return result;
}

// ---------------------------------------------------------------------------
// Knowledge-base QA construction
// ---------------------------------------------------------------------------

struct ChunkResult {
    std::vector<std::string> chunks;
    std::vector<std::string> warnings;
};

namespace datasetdetail {

inline size_t word_count(const std::string& text) {
    std::istringstream in(text);
    std::string w;
    size_t n = 0;
    while (in >> w) ++n;
    return n;
}

// Splits one oversized paragraph into `parts` near-equal word runs.
inline std::vector<std::string> split_paragraph_by_words(const std::string& text,
                                                         size_t parts) {
    std::vector<std::string> words;
    std::istringstream in(text);
    std::string w;
    while (in >> w) words.push_back(w);
    std::vector<std::string> out;
    size_t start = 0;
    for (size_t k = 0; k < parts; ++k) {
        size_t end = words.size() * (k + 1) / parts;
        std::string part;
        for (size_t i = start; i < end; ++i) {
            if (!part.empty()) part += ' ';
            part += words[i];
        }
        if (!part.empty()) out.push_back(std::move(part));
        start = end;
    }
    return out;
}

// Packs paragraphs into n sequential chunks with near-equal word counts:
// the k-th boundary closes once the running total reaches k/n of the text.
inline std::vector<std::string> pack_paragraphs(
    const std::vector<std::pair<std::string, size_t>>& paragraphs, size_t n,
    size_t total_words, std::vector<size_t>* chunk_words) {
    std::vector<std::string> chunks;
    std::string current;
    size_t current_words = 0, cumulative = 0, boundary = 1;
    for (const auto& [text, words] : paragraphs) {
        if (!current.empty()) current += "\n\n";
        current += text;
        current_words += words;
        cumulative += words;
        if (boundary < n &&
            cumulative * n >= total_words * boundary) {
            chunks.push_back(std::move(current));
            if (chunk_words) chunk_words->push_back(current_words);
            current.clear();
            current_words = 0;
            ++boundary;
        }
    }
    if (!current.empty()) {
        chunks.push_back(std::move(current));
        if (chunk_words) chunk_words->push_back(current_words);
    }
    return chunks;
}

}  // namespace datasetdetail

// Splits a document at paragraph boundaries into chunks of target +/- 20%
// words. A paragraph longer than twice the target is hard-split by words
// first (with a warning). Several chunk counts near total/target are tried;
// the first whose chunks all fit the band wins, otherwise the base count is
// used and each out-of-band chunk is reported.
inline ChunkResult chunk_document(const std::string& document,
                                  size_t target_words = 5000) {
    if (trim(document).empty())
        throw PreconditionError("chunk_document: empty document");
    if (target_words == 0)
        throw PreconditionError("chunk_document: target_words must be positive");

    ChunkResult result;
    std::vector<std::pair<std::string, size_t>> paragraphs;
    std::string current;
    auto flush = [&]() {
        std::string p = trim(current);
        current.clear();
        if (p.empty()) return;
        size_t words = datasetdetail::word_count(p);
        if (words > 2 * target_words) {
            size_t parts = std::max<size_t>(
                2, static_cast<size_t>(std::llround(
                       static_cast<double>(words) /
                       static_cast<double>(target_words))));
            result.warnings.push_back(
                "paragraph of " + std::to_string(words) +
                " words exceeds twice the chunk target; hard-split into " +
                std::to_string(parts) + " parts");
            for (auto& part : datasetdetail::split_paragraph_by_words(p, parts))
                paragraphs.emplace_back(part, datasetdetail::word_count(part));
        } else {
            paragraphs.emplace_back(p, words);
        }
    };
    for (const auto& line : split_lines(document)) {
        if (trim(line).empty()) {
            flush();
        } else {
            if (!current.empty()) current += '\n';
            current += line;
        }
    }
    flush();

    size_t total = 0;
    for (const auto& [text, words] : paragraphs) total += words;
    size_t n0 = std::max<size_t>(
        1, static_cast<size_t>(std::llround(static_cast<double>(total) /
                                            static_cast<double>(target_words))));

    const double lo = 0.8 * static_cast<double>(target_words);
    const double hi = 1.2 * static_cast<double>(target_words);
    std::vector<size_t> candidates = {n0, n0 + 1};
    if (n0 > 1) candidates.push_back(n0 - 1);
    candidates.push_back(n0 + 2);

    for (size_t n : candidates) {
        if (n == 0 || n > paragraphs.size()) continue;
        std::vector<size_t> sizes;
        auto chunks = datasetdetail::pack_paragraphs(paragraphs, n, total, &sizes);
        if (chunks.size() != n) continue;
        bool ok = n == 1 ? total <= hi : true;
        if (n > 1)
            for (size_t s : sizes)
                if (static_cast<double>(s) < lo || static_cast<double>(s) > hi)
                    ok = false;
        if (ok) {
            result.chunks = std::move(chunks);
            return result;
        }
    }

    std::vector<size_t> sizes;
    result.chunks = datasetdetail::pack_paragraphs(
        paragraphs, std::min(n0, paragraphs.size()), total, &sizes);
    for (size_t i = 0; i < sizes.size(); ++i)
        if (static_cast<double>(sizes[i]) < lo || static_cast<double>(sizes[i]) > hi)
            result.warnings.push_back("chunk " + std::to_string(i + 1) + " has " +
                                      std::to_string(sizes[i]) +
                                      " words, outside the 20% band around " +
                                      std::to_string(target_words));
    return result;
}

// Optional retrieval-enrichment hook: given (question, answer), returns
// supplemental text appended to the answer ("" appends nothing). Off by
// default; no retrieval implementation ships with the toolkit.
using EnrichHook = std::function<std::string(const std::string& question,
                                             const std::string& answer)>;

// Parses "Q: ..." / "A: ..." pairs from a knowledge reply; unpaired lines
// attach to the open question or answer.
inline std::vector<std::pair<std::string, std::string>> parse_qa_pairs(
    const std::string& reply) {
    std::vector<std::pair<std::string, std::string>> pairs;
    std::string question, answer;
    bool in_answer = false;
    auto flush = [&]() {
        if (!trim(question).empty() && !trim(answer).empty())
            pairs.emplace_back(trim(question), trim(answer));
        question.clear();
        answer.clear();
        in_answer = false;
    };
    for (const auto& raw : split_lines(reply)) {
        std::string line = trim(raw);
        if (line.empty()) continue;
        if (starts_with(line, "Q:")) {
            flush();
            question = trim(line.substr(2));
        } else if (starts_with(line, "A:")) {
            answer = trim(line.substr(2));
            in_answer = true;
        } else if (in_answer) {
            answer += ' ';
            answer += line;
        } else if (!question.empty()) {
            question += ' ';
            question += line;
        }
    }
    flush();
    return pairs;
}

struct KnowledgeQaResult {
    std::vector<SFTSample> samples;  // document order
    std::vector<std::string> warnings;
    size_t chunks_failed = 0;
};

// Builds base-knowledge QA samples: chunk the document, ask the gateway for
// grounded Q/A pairs per chunk, and emit Alpaca samples in document order.
// A chunk whose generation fails is skipped with a report; it does not abort
// the document.
inline KnowledgeQaResult build_knowledge_qa(const std::string& document,
                                            ChatBackend& chat,
                                            const PromptSet& prompts,
                                            size_t chunk_target_words = 5000,
                                            const std::string& language = "en",
                                            const ChatCallOptions& opts = {},
                                            const EnrichHook& enrich = {}) {
    KnowledgeQaResult result;
    ChunkResult chunked = chunk_document(document, chunk_target_words);
    result.warnings = chunked.warnings;
    const std::string instruction = knowledge_instruction(language);

    for (size_t i = 0; i < chunked.chunks.size(); ++i) {
        std::string reply;
        try {
            reply = chat.chat(opts.request(render_template(
                prompts.knowledge_qa, {{"chunk", chunked.chunks[i]}})));
        } catch (const Error& e) {
            ++result.chunks_failed;
            result.warnings.push_back("chunk " + std::to_string(i + 1) +
                                      " generation failed: " + e.what());
            continue;
        }
        auto pairs = parse_qa_pairs(reply);
        if (pairs.empty()) {
            ++result.chunks_failed;
            result.warnings.push_back("chunk " + std::to_string(i + 1) +
                                      " produced no Q/A pairs");
            continue;
        }
        for (auto& [q, a] : pairs) {
            std::string output = a;
            if (enrich) {
                std::string extra = enrich(q, a);
                if (!extra.empty()) {
                    output += '\n';
                    output += extra;
                }
            }
            result.samples.push_back({instruction, q, std::move(output)});
        }
    }
    return result;
}

}  // namespace csp
