#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csp/errors.hpp"
#include "csp/gateway.hpp"
#include "csp/prompts.hpp"
#include "csp/report.hpp"
#include "csp/schema.hpp"
#include "csp/text.hpp"

namespace csp {

// ---------------------------------------------------------------------------
// Agent specification
// ---------------------------------------------------------------------------

// Collects the {placeholder} names a template references ("{{" escapes).
inline std::set<std::string> template_placeholders(const std::string& tmpl) {
    std::set<std::string> names;
    size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] != '{') {
            ++i;
            continue;
        }
        if (i + 1 < tmpl.size() && tmpl[i + 1] == '{') {
            i += 2;
            continue;
        }
        size_t close = tmpl.find('}', i + 1);
        if (close == std::string::npos)
            throw ConfigError("template: unterminated placeholder");
        names.insert(tmpl.substr(i + 1, close - i - 1));
        i = close + 1;
    }
    return names;
}

struct AgentSpec {
    std::string agent_id;
    ReportType report_type = ReportType::unknown;
    std::string prompt_template;
    FieldCatalogue output_schema;
    int max_repair_retries = 2;

    void validate() const {
        if (agent_id.empty()) throw ConfigError("AgentSpec: empty agent_id");
        if (report_type == ReportType::unknown)
            throw ConfigError("AgentSpec " + agent_id + ": report_type required");
        if (max_repair_retries < 0 || max_repair_retries > 10)
            throw ConfigError("AgentSpec " + agent_id +
                              ": max_repair_retries must be in [0, 10]");
        try {
            output_schema.validate();
        } catch (const Error& e) {
            throw ConfigError("AgentSpec " + agent_id + ": " + e.what());
        }
        static const std::set<std::string> allowed = {
            "report_content", "laterality", "availability_notes"};
        for (const auto& name : template_placeholders(prompt_template))
            if (!allowed.count(name))
                throw ConfigError("AgentSpec " + agent_id +
                                  ": unsupported placeholder {" + name + "}");
        if (!template_placeholders(prompt_template).count("report_content"))
            throw ConfigError("AgentSpec " + agent_id +
                              ": template must reference {report_content}");
    }

    static AgentSpec from_json(const nlohmann::json& j) {
        AgentSpec spec;
        spec.agent_id = j.at("agent_id").get<std::string>();
        spec.report_type =
            report_type_from_string(j.at("report_type").get<std::string>());
        spec.prompt_template = j.at("prompt_template").get<std::string>();
        if (j.contains("max_repair_retries"))
            spec.max_repair_retries = j.at("max_repair_retries").get<int>();
        for (const auto& jf : j.at("output_schema")) {
            FieldSpec f;
            f.name = jf.at("name").get<std::string>();
            std::string kind = jf.value("kind", std::string("text"));
            if (kind == "number")
                f.kind = FieldKind::number;
            else if (kind == "text")
                f.kind = FieldKind::text;
            else
                throw ConfigError("AgentSpec: field " + f.name +
                                  " has unknown kind '" + kind + "'");
            f.required = jf.value("required", false);
            f.units = jf.value("units", std::string());
            if (jf.contains("min")) f.min = jf.at("min").get<double>();
            if (jf.contains("max")) f.max = jf.at("max").get<double>();
            spec.output_schema.fields.push_back(std::move(f));
        }
        spec.validate();
        return spec;
    }

    nlohmann::json to_json() const {
        nlohmann::json fields = nlohmann::json::array();
        for (const auto& f : output_schema.fields) {
            nlohmann::json jf;
            jf["name"] = f.name;
            jf["kind"] = f.kind == FieldKind::number ? "number" : "text";
            jf["required"] = f.required;
            if (!f.units.empty()) jf["units"] = f.units;
            if (f.min) jf["min"] = *f.min;
            if (f.max) jf["max"] = *f.max;
            fields.push_back(std::move(jf));
        }
        return nlohmann::json{{"agent_id", agent_id},
                              {"report_type", to_string(report_type)},
                              {"max_repair_retries", max_repair_retries},
                              {"prompt_template", prompt_template},
                              {"output_schema", fields}};
    }

    static AgentSpec load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError("cannot read agent spec: " + path.string());
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("agent spec " + path.string() + ": " + e.what());
        }
        try {
            return from_json(j);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("agent spec " + path.string() + ": " + e.what());
        }
    }
};

namespace agentdetail {

// "master_biometry" -> "extract-master-biometry" (the task-marker spelling).
inline std::string task_name(ReportType t) {
    std::string s = to_string(t);
    std::replace(s.begin(), s.end(), '_', '-');
    return "extract-" + s;
}

inline std::string default_template(ReportType type, const FieldCatalogue& schema) {
    std::ostringstream t;
    t << markers::kTaskPrefix << task_name(type) << "\n"
      << "You read one ophthalmic " << to_string(type)
      << " report and emit only findings stated in it. Reply with a fenced\n"
         "block opened by a ```findings line and closed by a ``` line, holding\n"
         "one \"field: value\" line per finding; append \" | abnormal\" when the\n"
         "report itself marks the finding as pathological. Quote numbers and\n"
         "phrases verbatim from the report; never infer, convert, or guess.\n"
         "Omit any field the report does not state. Recognized fields:\n";
    for (const auto& f : schema.fields) {
        t << "- " << f.name;
        if (f.kind == FieldKind::number) {
            t << " (number";
            if (!f.units.empty()) t << ", " << f.units;
            t << ")";
        } else {
            t << " (text)";
        }
        t << "\n";
    }
    t << "Eye under review: {laterality}\n"
      << "{availability_notes}\n"
      << markers::kReportBegin << "\n"
      << "{report_content}\n"
      << markers::kReportEnd << "\n";
    return t.str();
}

inline FieldSpec num(const char* name, const char* units) {
    FieldSpec f;
    f.name = name;
    f.kind = FieldKind::number;
    f.units = units;
    return f;
}

inline FieldSpec txt(const char* name) {
    FieldSpec f;
    f.name = name;
    f.kind = FieldKind::text;
    return f;
}

}  // namespace agentdetail

// The four shipped specialists. Every field is optional: a source report is
// free to omit any measurement, and a required-but-absent field would push
// the model toward inventing one. Plausibility screening happens later, at
// biometric panel assembly, so an out-of-range value degrades that panel
// entry instead of failing the whole extraction.
inline std::vector<AgentSpec> default_agent_specs() {
    using agentdetail::num;
    using agentdetail::txt;
    std::vector<AgentSpec> specs;

    AgentSpec master;
    master.agent_id = "master_biometry";
    master.report_type = ReportType::master_biometry;
    master.output_schema.fields = {num("age", ""),   txt("sex"),
                                   num("AL", "mm"),  num("ACD", "mm"),
                                   num("K1", "D"),   num("K2", "D"),
                                   num("LT", "mm"),  num("CCT", "um"),
                                   txt("lens_status"), txt("anterior_segment")};
    specs.push_back(std::move(master));

    AgentSpec pentacam;
    pentacam.agent_id = "pentacam";
    pentacam.report_type = ReportType::pentacam;
    pentacam.output_schema.fields = {num("K1", "D"), num("K2", "D"),
                                     num("CCT", "um"),
                                     num("corneal_astigmatism", "D"),
                                     txt("topography_pattern")};
    specs.push_back(std::move(pentacam));

    AgentSpec oct;
    oct.agent_id = "oct";
    oct.report_type = ReportType::oct;
    oct.output_schema.fields = {num("cmt", "um"), txt("macular_status"),
                                txt("retinal_findings")};
    specs.push_back(std::move(oct));

    AgentSpec fundus;
    fundus.agent_id = "fundus";
    fundus.report_type = ReportType::fundus;
    fundus.output_schema.fields = {num("cup_disc_ratio", ""), txt("optic_disc"),
                                   txt("retinal_background")};
    specs.push_back(std::move(fundus));

    for (auto& spec : specs) {
        spec.prompt_template =
            agentdetail::default_template(spec.report_type, spec.output_schema);
        spec.validate();
    }
    return specs;
}

// Loads every *.json agent spec in a directory (sorted); the directory must
// yield at least one spec and no two specs may claim the same report type.
inline std::vector<AgentSpec> load_agent_specs(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        throw ConfigError("agent spec directory not found: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".json")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::vector<AgentSpec> specs;
    std::set<ReportType> claimed;
    for (const auto& f : files) {
        AgentSpec spec = AgentSpec::load(f);
        if (!claimed.insert(spec.report_type).second)
            throw ConfigError("agent specs: duplicate report type " +
                              to_string(spec.report_type));
        specs.push_back(std::move(spec));
    }
    if (specs.empty())
        throw ConfigError("agent spec directory has no *.json specs: " +
                          dir.string());
    return specs;
}

// ---------------------------------------------------------------------------
// Structured findings
// ---------------------------------------------------------------------------

struct Provenance {
    std::string report_id;
    std::string agent_id;
};

struct StructuredFinding {
    std::string field_name;
    std::string value_text;        // verbatim value (units stripped)
    std::optional<double> number;  // set for number-kind fields
    std::string units;
    bool abnormal = false;
    bool superseded = false;  // lost a precedence merge but is retained
    Provenance provenance;
};

struct SpecialistSummary {
    std::string agent_id;
    std::string report_id;
    ReportType report_type = ReportType::unknown;
    std::vector<StructuredFinding> findings;
    std::string narrative;  // optional prose after the fenced block
    int repair_count = 0;   // schema-repair round trips that were needed
};

class ExtractionError : public Error {
public:
    ExtractionError(const std::string& msg, std::vector<Violation> v)
        : Error(msg), violations(std::move(v)) {}
    std::vector<Violation> violations;
};

// ---------------------------------------------------------------------------
// Grounding audit
// ---------------------------------------------------------------------------

namespace agentdetail {

inline bool tokens_contiguous_in(const TokenSeq& needle, const TokenSeq& hay) {
    if (needle.empty()) return false;
    if (needle.size() > hay.size()) return false;
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

}  // namespace agentdetail

// Checks a schema-valid reply against the report it claims to describe.
// Numbers must appear in the report up to unit normalization (x1, x1000,
// x0.001 for mm/um style rescaling); text values must appear as a contiguous
// token run. Anything else is flagged as fabricated or speculative.
inline std::vector<Violation> audit_reply(const ParsedReply& parsed,
                                          const FieldCatalogue& schema,
                                          const std::string& report_content) {
    std::vector<Violation> violations;
    const std::vector<double> report_numbers = extract_numbers(report_content);
    const TokenSeq report_tokens = tokenize(report_content);

    for (const auto& field : parsed.fields) {
        const FieldSpec* spec = schema.find(field.name);
        if (spec && spec->kind == FieldKind::number && field.number) {
            bool grounded = false;
            for (double factor : {1.0, 1000.0, 0.001}) {
                double v = *field.number * factor;
                for (double r : report_numbers) {
                    if (std::abs(v - r) <= 1e-6 * std::max(1.0, std::abs(r))) {
                        grounded = true;
                        break;
                    }
                }
                if (grounded) break;
            }
            if (!grounded)
                violations.push_back({ViolationKind::fabricated_value, field.name,
                                      "value " + field.value_text +
                                          " does not appear in the report"});
        } else {
            TokenSeq value_tokens = tokenize(field.value_text);
            if (!agentdetail::tokens_contiguous_in(value_tokens, report_tokens))
                violations.push_back({ViolationKind::speculative_content,
                                      field.name,
                                      "'" + field.value_text +
                                          "' is not stated in the report"});
        }
    }
    return violations;
}

// ---------------------------------------------------------------------------
// Specialist execution with schema-repair retries
// ---------------------------------------------------------------------------

struct ChatCallOptions {
    std::string model_id;
    double temperature = 0.0;
    int max_tokens = 2048;
    std::optional<long> seed;

    ChatRequest request(std::string prompt) const {
        ChatRequest req;
        req.model_id = model_id;
        req.user_messages.push_back(std::move(prompt));
        req.temperature = temperature;
        req.max_tokens = max_tokens;
        req.seed = seed;
        return req;
    }
};

inline std::string repair_prompt(const std::string& base,
                                 const std::vector<Violation>& violations) {
    std::ostringstream p;
    p << base << "\n" << markers::kViolationsBegin << "\n"
      << "Your previous reply was rejected for these violations:\n";
    for (const auto& v : violations) p << "- " << v.describe() << "\n";
    p << "Re-emit the complete corrected fenced findings block.\n";
    return p.str();
}

// Runs one specialist over one report: render the prompt, call the model,
// parse and validate the fenced reply, audit it against the report, and on
// any violation send the violation list back for repair, up to
// max_repair_retries further attempts.
inline SpecialistSummary run_specialist(const AgentSpec& spec,
                                        const RawReport& report,
                                        ChatBackend& chat,
                                        const std::string& availability_notes = "",
                                        const ChatCallOptions& opts = {}) {
    spec.validate();
    report.validate();
    if (spec.report_type != report.report_type)
        throw PreconditionError("run_specialist: agent " + spec.agent_id +
                                " handles " + to_string(spec.report_type) +
                                ", got a " + to_string(report.report_type) +
                                " report");

    const std::string base_prompt = render_template(
        spec.prompt_template, {{"report_content", report.content},
                               {"laterality", to_string(report.laterality)},
                               {"availability_notes", availability_notes}});

    std::string prompt = base_prompt;
    std::vector<Violation> last;
    for (int attempt = 0; attempt <= spec.max_repair_retries; ++attempt) {
        std::string reply = chat.chat(opts.request(prompt));
        ParsedReply parsed;
        last = validate_schema(reply, spec.output_schema, &parsed);
        if (last.empty()) {
            auto grounding = audit_reply(parsed, spec.output_schema, report.content);
            last.insert(last.end(), grounding.begin(), grounding.end());
        }
        if (last.empty()) {
            SpecialistSummary summary;
            summary.agent_id = spec.agent_id;
            summary.report_id = report.report_id;
            summary.report_type = report.report_type;
            summary.narrative = parsed.narrative;
            summary.repair_count = attempt;
            for (const auto& pf : parsed.fields) {
                StructuredFinding f;
                f.field_name = pf.name;
                f.value_text = pf.value_text;
                f.number = pf.number;
                f.units = pf.units;
                f.abnormal = pf.abnormal;
                f.provenance = {report.report_id, spec.agent_id};
                summary.findings.push_back(std::move(f));
            }
            return summary;
        }
        prompt = repair_prompt(base_prompt, last);
    }

    std::ostringstream msg;
    msg << "agent " << spec.agent_id << " failed on report " << report.report_id
        << " after " << (spec.max_repair_retries + 1) << " attempts;"
        << " last violations:";
    for (const auto& v : last) msg << " [" << v.describe() << "]";
    throw ExtractionError(msg.str(), last);
}

// ---------------------------------------------------------------------------
// Biometric panel with plausibility screening
// ---------------------------------------------------------------------------

struct PlausibleRange {
    double lo = 0.0;
    double hi = 0.0;
    const char* units = "";
};

// Screening bounds for the six core biometrics, in canonical units.
inline const std::vector<std::pair<std::string, PlausibleRange>>&
plausible_ranges() {
    static const std::vector<std::pair<std::string, PlausibleRange>> v = {
        {"AL", {15.0, 40.0, "mm"}},  {"ACD", {1.5, 6.0, "mm"}},
        {"K1", {30.0, 60.0, "D"}},   {"K2", {30.0, 60.0, "D"}},
        {"LT", {2.0, 7.0, "mm"}},    {"CCT", {350.0, 700.0, "um"}},
    };
    return v;
}

struct PanelWarning {
    std::string parameter;
    double value = 0.0;
    std::string detail;
};

struct BiometricPanel {
    std::optional<double> AL, ACD, K1, K2, LT, CCT;

    static const std::vector<std::string>& parameter_names() {
        static const std::vector<std::string> names = {"AL", "ACD", "K1",
                                                       "K2", "LT",  "CCT"};
        return names;
    }

    std::optional<double>& slot(const std::string& name) {
        if (name == "AL") return AL;
        if (name == "ACD") return ACD;
        if (name == "K1") return K1;
        if (name == "K2") return K2;
        if (name == "LT") return LT;
        if (name == "CCT") return CCT;
        throw PreconditionError("BiometricPanel: unknown parameter " + name);
    }

    std::optional<double> get(const std::string& name) const {
        return const_cast<BiometricPanel*>(this)->slot(name);
    }

    std::map<std::string, bool> availability() const {
        std::map<std::string, bool> out;
        for (const auto& name : parameter_names())
            out[name] = get(name).has_value();
        return out;
    }

    double availability_fraction() const {
        int have = 0;
        for (const auto& name : parameter_names())
            if (get(name)) ++have;
        return static_cast<double>(have) /
               static_cast<double>(parameter_names().size());
    }
};

namespace agentdetail {

// Rescales a finding's value into the panel's canonical unit; mm/um is the
// only pair that differs by scale. Unknown or empty units pass through.
inline double to_canonical_unit(double value, const std::string& from_units,
                                const std::string& canonical_units) {
    std::string from = detail::canonical_unit(from_units);
    std::string to = detail::canonical_unit(canonical_units);
    if (from.empty() || from == to) return value;
    if (from == "mm" && to == "um") return value * 1000.0;
    if (from == "um" && to == "mm") return value * 0.001;
    return value;
}

}  // namespace agentdetail

// Assembles the six-parameter biometric panel from active findings. Values
// outside the plausibility ranges are rejected to absent with a warning, so
// one corrupt measurement degrades the panel instead of poisoning prompts.
inline BiometricPanel panel_from_findings(
    const std::vector<StructuredFinding>& findings,
    std::vector<PanelWarning>* warnings = nullptr) {
    BiometricPanel panel;
    for (const auto& [name, range] : plausible_ranges()) {
        for (const auto& f : findings) {
            if (f.superseded || f.field_name != name || !f.number) continue;
            double value =
                agentdetail::to_canonical_unit(*f.number, f.units, range.units);
            if (value < range.lo || value > range.hi) {
                if (warnings) {
                    std::ostringstream w;
                    w << name << " " << f.value_text;
                    if (!f.units.empty()) w << " " << f.units;
                    w << " from " << f.provenance.report_id
                      << " rejected: outside plausible range [" << range.lo
                      << ", " << range.hi << "] " << range.units;
                    warnings->push_back({name, value, w.str()});
                }
                continue;
            }
            panel.slot(name) = value;
            break;
        }
    }
    return panel;
}

// Convenience wrapper for a single specialist's findings.
inline BiometricPanel extract_biometrics(const SpecialistSummary& summary,
                                         std::vector<PanelWarning>* warnings = nullptr) {
    return panel_from_findings(summary.findings, warnings);
}

// ---------------------------------------------------------------------------
// Patient synthesis
// ---------------------------------------------------------------------------

struct Demographics {
    std::optional<int> age;
    std::string sex = "unspecified";  // female | male | unspecified
};

struct PatientDescription {
    std::string case_id;
    std::string patient_ref;
    Laterality laterality = Laterality::unspecified;
    Demographics demographics;
    BiometricPanel biometrics;
    std::vector<StructuredFinding> findings;  // full set, superseded retained
    std::vector<PanelWarning> warnings;
    std::vector<ReportType> missing_reports;  // sorted
    std::string abnormality_status = "unspecified";  // abnormal | normal | unspecified
    std::string narrative;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["case_id"] = case_id;
        j["patient_ref"] = patient_ref;
        j["laterality"] = to_string(laterality);
        if (demographics.age) j["age"] = *demographics.age;
        j["sex"] = demographics.sex;
        nlohmann::json panel;
        for (const auto& name : BiometricPanel::parameter_names())
            if (auto v = biometrics.get(name)) panel[name] = *v;
        j["biometrics"] = std::move(panel);
        nlohmann::json findings_json = nlohmann::json::array();
        for (const auto& f : findings) {
            nlohmann::json jf;
            jf["field"] = f.field_name;
            jf["value"] = f.value_text;
            if (f.number) jf["number"] = *f.number;
            if (!f.units.empty()) jf["units"] = f.units;
            jf["abnormal"] = f.abnormal;
            jf["superseded"] = f.superseded;
            jf["report_id"] = f.provenance.report_id;
            jf["agent_id"] = f.provenance.agent_id;
            findings_json.push_back(std::move(jf));
        }
        j["findings"] = std::move(findings_json);
        nlohmann::json warnings_json = nlohmann::json::array();
        for (const auto& w : warnings)
            warnings_json.push_back({{"parameter", w.parameter},
                                     {"value", w.value},
                                     {"detail", w.detail}});
        j["warnings"] = std::move(warnings_json);
        nlohmann::json missing_json = nlohmann::json::array();
        for (ReportType t : missing_reports) missing_json.push_back(to_string(t));
        j["missing_reports"] = std::move(missing_json);
        j["abnormality_status"] = abnormality_status;
        j["narrative"] = narrative;
        return j;
    }

    static PatientDescription from_json(const nlohmann::json& j) {
        PatientDescription d;
        d.case_id = j.at("case_id").get<std::string>();
        d.patient_ref = j.at("patient_ref").get<std::string>();
        d.laterality = laterality_from_string(j.at("laterality").get<std::string>());
        if (j.contains("age")) d.demographics.age = j.at("age").get<int>();
        d.demographics.sex = j.value("sex", std::string("unspecified"));
        if (j.contains("biometrics"))
            for (const auto& name : BiometricPanel::parameter_names())
                if (j.at("biometrics").contains(name))
                    d.biometrics.slot(name) =
                        j.at("biometrics").at(name).get<double>();
        for (const auto& jf : j.value("findings", nlohmann::json::array())) {
            StructuredFinding f;
            f.field_name = jf.at("field").get<std::string>();
            f.value_text = jf.at("value").get<std::string>();
            if (jf.contains("number")) f.number = jf.at("number").get<double>();
            f.units = jf.value("units", std::string());
            f.abnormal = jf.value("abnormal", false);
            f.superseded = jf.value("superseded", false);
            f.provenance.report_id = jf.value("report_id", std::string());
            f.provenance.agent_id = jf.value("agent_id", std::string());
            d.findings.push_back(std::move(f));
        }
        for (const auto& jw : j.value("warnings", nlohmann::json::array()))
            d.warnings.push_back({jw.at("parameter").get<std::string>(),
                                  jw.at("value").get<double>(),
                                  jw.at("detail").get<std::string>()});
        for (const auto& jm : j.value("missing_reports", nlohmann::json::array()))
            d.missing_reports.push_back(
                report_type_from_string(jm.get<std::string>()));
        d.abnormality_status = j.value("abnormality_status", std::string("unspecified"));
        d.narrative = j.value("narrative", std::string());
        return d;
    }
};

// Conflict precedence when two agents report the same field: the dedicated
// biometry device wins over topography, which wins over the retinal scans.
inline int agent_precedence(ReportType t) {
    switch (t) {
        case ReportType::master_biometry: return 0;
        case ReportType::pentacam: return 1;
        case ReportType::oct: return 2;
        case ReportType::fundus: return 3;
        case ReportType::unknown: return 4;
    }
    return 4;
}

// Merges all specialist findings into one list. For each field name the
// highest-precedence finding stays active; the losers are kept with
// superseded=true so nothing silently disappears from the record.
inline std::vector<StructuredFinding> merge_findings(
    const std::vector<SpecialistSummary>& summaries) {
    std::vector<StructuredFinding> merged;
    std::map<std::string, std::pair<int, size_t>> best;  // field -> (rank, index)
    for (const auto& summary : summaries) {
        int rank = agent_precedence(summary.report_type);
        for (const auto& f : summary.findings) {
            StructuredFinding copy = f;
            copy.superseded = false;
            size_t index = merged.size();
            auto it = best.find(f.field_name);
            if (it == best.end()) {
                best[f.field_name] = {rank, index};
            } else if (rank < it->second.first) {
                merged[it->second.second].superseded = true;
                it->second = {rank, index};
            } else {
                copy.superseded = true;
            }
            merged.push_back(std::move(copy));
        }
    }
    return merged;
}

namespace agentdetail {

// Compact numeric rendering for digests: up to six significant digits,
// trailing zeros trimmed ("23.52", "43.5", "541", "0.6").
inline std::string format_number(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return std::string(buf);
}

}  // namespace agentdetail

// One deterministic availability sentence per missing report type; these are
// fed to the synthesis model and must survive into its narrative.
inline std::string availability_note(ReportType t) {
    return "Note: the " + to_string(t) +
           " report is unavailable for this eye; findings that depend on it"
           " could not be assessed.";
}

inline std::string availability_notes_text(const std::vector<ReportType>& missing) {
    std::string out;
    for (ReportType t : missing) {
        if (!out.empty()) out += '\n';
        out += availability_note(t);
    }
    return out;
}

// Renders the structured patient digest embedded in downstream prompts:
//   case / laterality / age / sex / abnormality header lines,
//   one "<PARAM>: <value> <unit>" line per available biometric,
//   a findings: list of active non-panel findings with provenance tags,
//   and a missing: line naming absent report types.
inline std::string describe_for_prompt(const PatientDescription& d) {
    std::ostringstream out;
    out << "case: " << d.case_id << "\n";
    out << "laterality: " << to_string(d.laterality) << "\n";
    if (d.demographics.age) out << "age: " << *d.demographics.age << "\n";
    if (d.demographics.sex != "unspecified")
        out << "sex: " << d.demographics.sex << "\n";
    out << "abnormality: " << d.abnormality_status << "\n";

    std::map<std::string, const PlausibleRange*> panel_units;
    for (const auto& [name, range] : plausible_ranges())
        panel_units[name] = &range;
    for (const auto& name : BiometricPanel::parameter_names()) {
        auto v = d.biometrics.get(name);
        if (!v) continue;
        out << name << ": " << agentdetail::format_number(*v);
        const char* units = panel_units.at(name)->units;
        if (*units) out << " " << units;
        out << "\n";
    }

    std::set<std::string> panel_fields(BiometricPanel::parameter_names().begin(),
                                       BiometricPanel::parameter_names().end());
    std::vector<const StructuredFinding*> extra;
    for (const auto& f : d.findings) {
        if (f.superseded) continue;
        if (panel_fields.count(f.field_name)) continue;
        if (f.field_name == "age" || f.field_name == "sex") continue;
        extra.push_back(&f);
    }
    if (!extra.empty()) {
        out << "findings:\n";
        for (const auto* f : extra) {
            out << "- [" << f->provenance.agent_id << "] " << f->field_name
                << ": " << f->value_text;
            if (!f->units.empty()) out << " " << f->units;
            if (f->abnormal) out << " (abnormal)";
            out << "\n";
        }
    }

    if (!d.missing_reports.empty()) {
        out << "missing: ";
        for (size_t i = 0; i < d.missing_reports.size(); ++i)
            out << (i ? ", " : "") << to_string(d.missing_reports[i]);
        out << "\n";
    }
    return out.str();
}

// Fuses the per-report specialist summaries for one eye into a single
// patient description: precedence merge, demographics, screened biometric
// panel, abnormality status, missing-report notes, and a chat-generated
// narrative that must carry every availability note (notes a model reply
// drops are appended verbatim).
inline PatientDescription synthesize_patient(
    const ReportBundle& eye_bundle,
    const std::vector<SpecialistSummary>& summaries, ChatBackend& chat,
    const PromptSet& prompts, const ChatCallOptions& opts = {}) {
    eye_bundle.validate();

    PatientDescription d;
    d.patient_ref = eye_bundle.patient_ref;
    d.case_id = case_id_for(eye_bundle);
    for (const auto& r : eye_bundle.reports)
        if (r.laterality != Laterality::unspecified) {
            d.laterality = r.laterality;
            break;
        }

    d.findings = merge_findings(summaries);
    for (const auto& f : d.findings) {
        if (f.superseded) continue;
        if (f.field_name == "age" && f.number)
            d.demographics.age = static_cast<int>(std::lround(*f.number));
        if (f.field_name == "sex") d.demographics.sex = f.value_text;
    }
    d.biometrics = panel_from_findings(d.findings, &d.warnings);

    bool any_active = false, any_abnormal = false;
    for (const auto& f : d.findings) {
        if (f.superseded) continue;
        any_active = true;
        if (f.abnormal) any_abnormal = true;
    }
    d.abnormality_status =
        any_abnormal ? "abnormal" : (any_active ? "normal" : "unspecified");

    auto missing = eye_bundle.missing_types();
    d.missing_reports.assign(missing.begin(), missing.end());

    const std::string notes = availability_notes_text(d.missing_reports);
    const std::string prompt =
        render_template(prompts.synthesis, {{"digest", describe_for_prompt(d)},
                                            {"availability_notes", notes}});
    d.narrative = chat.chat(opts.request(prompt));
    for (ReportType t : d.missing_reports) {
        const std::string note = availability_note(t);
        if (d.narrative.find(note) == std::string::npos) {
            d.narrative += d.narrative.empty() ? "" : "\n";
            d.narrative += note;
        }
    }
    return d;
}

}  // namespace csp
