#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <mutex>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "csp/gateway.hpp"
#include "csp/prompts.hpp"
#include "csp/text.hpp"

namespace csp {

inline uint64_t fnv1a(std::string_view s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// ---------------------------------------------------------------------------
// Generic chat mocks
// ---------------------------------------------------------------------------

// Replies with the last user message verbatim.
class EchoChat : public ChatBackend {
public:
    std::string chat(const ChatRequest& request) override {
        request.validate();
        return request.user_messages.back();
    }
};

// Replays a queued list of replies in order; remembers every prompt it saw.
// When the queue runs dry the last reply repeats (so retry loops terminate).
class ScriptedChat : public ChatBackend {
public:
    explicit ScriptedChat(std::vector<std::string> replies)
        : replies_(std::move(replies)) {
        if (replies_.empty()) throw PreconditionError("ScriptedChat: no replies");
    }

    std::string chat(const ChatRequest& request) override {
        request.validate();
        std::lock_guard<std::mutex> lock(mu_);
        std::string prompt = request.system_prompt;
        for (const auto& m : request.user_messages) {
            prompt += '\n';
            prompt += m;
        }
        prompts_.push_back(std::move(prompt));
        size_t i = std::min(next_++, replies_.size() - 1);
        return replies_[i];
    }

    const std::vector<std::string>& prompts() const { return prompts_; }
    size_t calls() const { return prompts_.size(); }

private:
    std::vector<std::string> replies_;
    size_t next_ = 0;
    std::vector<std::string> prompts_;
    std::mutex mu_;
};

// Substring-keyed replies: the first rule whose key occurs in the prompt
// wins. Deterministic stand-in for a model with known outputs per input.
class KeyedChat : public ChatBackend {
public:
    KeyedChat() = default;

    void add_rule(std::string key, std::string reply) {
        if (key.empty()) throw PreconditionError("KeyedChat: empty key");
        rules_.emplace_back(std::move(key), std::move(reply));
    }
    void set_fallback(std::string reply) { fallback_ = std::move(reply); }

    std::string chat(const ChatRequest& request) override {
        request.validate();
        std::string prompt = request.system_prompt;
        for (const auto& m : request.user_messages) {
            prompt += '\n';
            prompt += m;
        }
        for (const auto& [key, reply] : rules_)
            if (prompt.find(key) != std::string::npos) return reply;
        if (!fallback_.empty()) return fallback_;
        throw RequestError("KeyedChat: no rule matched prompt", 0);
    }

private:
    std::vector<std::pair<std::string, std::string>> rules_;
    std::string fallback_;
};

// ---------------------------------------------------------------------------
// Deterministic embedding backend
// ---------------------------------------------------------------------------

// Unit vector per token derived from a hash of the token text, so equal
// tokens always land on identical vectors and distinct tokens are nearly
// orthogonal at reasonable dimensions. No external calls, fully reproducible
// across runs and platforms (no std::distribution involved).
class HashEmbedBackend : public EmbedBackend {
public:
    explicit HashEmbedBackend(size_t dimension = 64, uint64_t seed = 0)
        : dimension_(dimension), seed_(seed) {
        if (dimension_ == 0) throw PreconditionError("HashEmbedBackend: dimension 0");
    }

    std::vector<std::vector<double>> embed_tokens(const std::string& text) override {
        auto tokens = tokenize(text);
        std::vector<std::vector<double>> out;
        out.reserve(tokens.size());
        for (const auto& tok : tokens) out.push_back(vector_for(tok));
        return out;
    }

    std::vector<double> vector_for(const std::string& token) const {
        std::mt19937_64 rng(fnv1a(token) ^ seed_);
        std::vector<double> v(dimension_);
        double norm_sq = 0.0;
        for (auto& x : v) {
            // top 53 bits -> [0,1) -> [-1,1); avoids implementation-defined
            // distribution behavior
            double u = static_cast<double>(rng() >> 11) / 9007199254740992.0;
            x = 2.0 * u - 1.0;
            norm_sq += x * x;
        }
        double norm = std::sqrt(norm_sq);
        if (norm < 1e-12) {
            v.assign(dimension_, 0.0);
            v[0] = 1.0;
        } else {
            for (auto& x : v) x /= norm;
        }
        return v;
    }

    size_t dimension() const { return dimension_; }

private:
    size_t dimension_;
    uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Deterministic NLI backend
// ---------------------------------------------------------------------------

// Ordered rules: (1) hypothesis token set contained in premise token set ->
// entailment; (2) an antonym pair splits across the two texts ->
// contradiction; (3) otherwise neutral. Winner scored 0.8, rest 0.1 each.
class RuleNliBackend : public NliBackend {
public:
    RuleNliBackend() : antonyms_(default_antonyms()) {}
    explicit RuleNliBackend(std::vector<std::pair<std::string, std::string>> antonyms)
        : antonyms_(std::move(antonyms)) {}

    NliVerdict nli(const std::string& premise, const std::string& hypothesis) override {
        auto p_tokens = tokenize(premise);
        auto h_tokens = tokenize(hypothesis);
        std::set<std::string> p_set(p_tokens.begin(), p_tokens.end());
        std::set<std::string> h_set(h_tokens.begin(), h_tokens.end());

        if (!h_set.empty()) {
            bool subset = true;
            for (const auto& t : h_set)
                if (!p_set.count(t)) {
                    subset = false;
                    break;
                }
            if (subset) return NliVerdict::make(NliLabel::entailment);
        }
        for (const auto& [a, b] : antonyms_) {
            if ((p_set.count(a) && h_set.count(b)) ||
                (p_set.count(b) && h_set.count(a)))
                return NliVerdict::make(NliLabel::contradiction);
        }
        return NliVerdict::make(NliLabel::neutral);
    }

    static std::vector<std::pair<std::string, std::string>> default_antonyms() {
        return {{"normal", "abnormal"}, {"present", "absent"},
                {"clear", "opaque"},    {"stable", "unstable"},
                {"shallow", "deep"},    {"increased", "decreased"}};
    }

private:
    std::vector<std::pair<std::string, std::string>> antonyms_;
};

// ---------------------------------------------------------------------------
// Offline pipeline simulator
// ---------------------------------------------------------------------------

namespace mockdetail {

struct PhraseField {
    const char* field;
    std::vector<const char*> phrases;  // scanned in order; first hit wins
};

struct NumField {
    const char* field;
    const char* pattern;  // first capture group = number, optional second = unit
};

// Longest useful phrase first, so "diabetic macular edema" beats
// "macular edema".
inline const std::vector<PhraseField>& master_phrases() {
    static const std::vector<PhraseField> v = {
        {"lens_status",
         {"posterior subcapsular cataract", "dense nuclear cataract",
          "cortical cataract", "nuclear cataract", "mature cataract",
          "clear lens"}},
        {"anterior_segment",
         {"shallow anterior chamber", "pseudoexfoliation", "zonular weakness",
          "corneal guttata"}},
    };
    return v;
}

inline const std::vector<PhraseField>& pentacam_phrases() {
    static const std::vector<PhraseField> v = {
        {"topography_pattern",
         {"regular corneal topography", "irregular astigmatism", "keratoconus",
          "corneal scar"}},
    };
    return v;
}

inline const std::vector<PhraseField>& oct_phrases() {
    static const std::vector<PhraseField> v = {
        {"macular_status",
         {"diabetic macular edema", "macular edema", "epiretinal membrane",
          "macular hole", "drusen", "normal foveal contour", "normal macula"}},
        {"retinal_findings",
         {"retinal detachment", "diabetic retinopathy", "retinoschisis"}},
    };
    return v;
}

inline const std::vector<PhraseField>& fundus_phrases() {
    static const std::vector<PhraseField> v = {
        {"optic_disc", {"glaucomatous cupping", "disc pallor", "normal optic disc"}},
        {"retinal_background",
         {"diabetic retinopathy", "laser scars", "unremarkable fundus"}},
    };
    return v;
}

inline const std::set<std::string>& abnormal_vocab() {
    static const std::set<std::string> v = {
        "posterior subcapsular cataract", "dense nuclear cataract",
        "cortical cataract", "nuclear cataract", "mature cataract",
        "shallow anterior chamber", "pseudoexfoliation", "zonular weakness",
        "corneal guttata", "irregular astigmatism", "keratoconus",
        "corneal scar", "diabetic macular edema", "macular edema",
        "epiretinal membrane", "macular hole", "drusen", "retinal detachment",
        "diabetic retinopathy", "retinoschisis", "glaucomatous cupping",
        "disc pallor", "laser scars"};
    return v;
}

inline const std::vector<NumField>& master_numbers() {
    static const std::vector<NumField> v = {
        {"age", R"((\d{1,3})\s*-?\s*year)"},
        {"AL", R"((?:\bAL\b|axial length)\D{0,12}?(\d+(?:\.\d+)?)\s*(mm)?)"},
        {"ACD", R"((?:\bACD\b|anterior chamber depth)\D{0,12}?(\d+(?:\.\d+)?)\s*(mm)?)"},
        {"K1", R"(\bK1\b\D{0,12}?(\d+(?:\.\d+)?)\s*(D)?)"},
        {"K2", R"(\bK2\b\D{0,12}?(\d+(?:\.\d+)?)\s*(D)?)"},
        {"LT", R"((?:\bLT\b|lens thickness)\D{0,12}?(\d+(?:\.\d+)?)\s*(mm)?)"},
        {"CCT", R"((?:\bCCT\b|central corneal thickness)\D{0,12}?(\d+(?:\.\d+)?)\s*(um|µm)?)"},
    };
    return v;
}

inline const std::vector<NumField>& pentacam_numbers() {
    static const std::vector<NumField> v = {
        {"K1", R"(\bK1\b\D{0,12}?(\d+(?:\.\d+)?)\s*(D)?)"},
        {"K2", R"(\bK2\b\D{0,12}?(\d+(?:\.\d+)?)\s*(D)?)"},
        {"CCT", R"((?:\bCCT\b|central corneal thickness)\D{0,12}?(\d+(?:\.\d+)?)\s*(um|µm)?)"},
        {"corneal_astigmatism", R"(astigmatism\D{0,12}?(\d+(?:\.\d+)?)\s*(D)?)"},
    };
    return v;
}

inline const std::vector<NumField>& oct_numbers() {
    static const std::vector<NumField> v = {
        {"cmt",
         R"((?:\bCMT\b|central macular thickness|foveal thickness)\D{0,12}?(\d+(?:\.\d+)?)\s*(um|µm)?)"},
    };
    return v;
}

inline const std::vector<NumField>& fundus_numbers() {
    static const std::vector<NumField> v = {
        {"cup_disc_ratio", R"((?:C/D|cup[\s-]{0,4}(?:to[\s-]{0,4})?disc)\D{0,16}?(0?\.\d+))"},
    };
    return v;
}

// Parsed view of the patient digest block a prompt carries (the grammar
// emitted by describe_for_prompt).
struct DigestView {
    std::string case_ref;
    std::string laterality;
    std::string age;  // verbatim digit string, empty when absent
    std::string sex;
    // biometric name -> "value unit" as written in the digest
    std::vector<std::pair<std::string, std::string>> biometrics;
    // (field, value-with-units, abnormal)
    struct Finding {
        std::string field;
        std::string value;
        bool abnormal = false;
    };
    std::vector<Finding> findings;
    std::vector<std::string> missing;

    std::string biometric(const std::string& name) const {
        for (const auto& [k, v] : biometrics)
            if (k == name) return v;
        return "";
    }
    const Finding* finding(const std::string& field) const {
        for (const auto& f : findings)
            if (f.field == field) return &f;
        return nullptr;
    }
    bool has_phrase(const std::string& phrase) const {
        for (const auto& f : findings)
            if (f.value.find(phrase) != std::string::npos) return true;
        return false;
    }
};

inline DigestView parse_digest(const std::string& digest) {
    DigestView d;
    bool in_findings = false;
    for (const auto& raw : split_lines(digest)) {
        std::string line = trim(raw);
        if (line.empty()) continue;
        if (line == "findings:") {
            in_findings = true;
            continue;
        }
        if (in_findings && starts_with(line, "- [")) {
            size_t close = line.find(']');
            if (close == std::string::npos) continue;
            size_t colon = line.find(": ", close);
            if (colon == std::string::npos) continue;
            DigestView::Finding f;
            f.field = trim(line.substr(close + 1, colon - close - 1));
            std::string value = trim(line.substr(colon + 2));
            const std::string kAbn = " (abnormal)";
            if (value.size() > kAbn.size() &&
                value.compare(value.size() - kAbn.size(), kAbn.size(), kAbn) == 0) {
                f.abnormal = true;
                value = trim(value.substr(0, value.size() - kAbn.size()));
            }
            f.value = value;
            d.findings.push_back(std::move(f));
            continue;
        }
        size_t colon = line.find(": ");
        if (colon == std::string::npos) continue;
        std::string key = line.substr(0, colon);
        std::string value = trim(line.substr(colon + 2));
        if (key == "case") {
            d.case_ref = value;
        } else if (key == "laterality") {
            d.laterality = value;
        } else if (key == "age") {
            d.age = value;
        } else if (key == "sex") {
            d.sex = value;
        } else if (key == "missing") {
            std::istringstream parts(value);
            std::string part;
            while (std::getline(parts, part, ','))
                if (!trim(part).empty()) d.missing.push_back(trim(part));
        } else if (key == "AL" || key == "ACD" || key == "K1" || key == "K2" ||
                   key == "LT" || key == "CCT") {
            d.biometrics.emplace_back(key, value);
        }
    }
    return d;
}

}  // namespace mockdetail

// Fully offline stand-in for the chat model behind the whole pipeline. It
// dispatches on the "# task:" line every shipped template starts with and
// fabricates nothing: extraction replies quote only values present verbatim
// in the report section of the prompt, and reasoning steps quote only
// numbers present in the patient digest. Pure function of the prompt, so
// pipeline outputs are byte-reproducible.
class PipelineChatMock : public ChatBackend {
public:
    explicit PipelineChatMock(uint64_t seed = 0) : seed_(seed) {}

    std::string chat(const ChatRequest& request) override {
        request.validate();
        std::string prompt = request.system_prompt;
        for (const auto& m : request.user_messages) {
            prompt += '\n';
            prompt += m;
        }
        std::string task = prompt_task(prompt);
        if (starts_with(task, "extract-")) return simulate_extract(task.substr(8), prompt);
        if (task == "synthesize-patient") return simulate_synthesis(prompt);
        if (task == "generate-question") return simulate_question(prompt);
        if (task == "annotate-reasoning") return simulate_cot(prompt);
        if (task == "recommend") return simulate_recommendation(prompt);
        if (task == "knowledge-qa") return simulate_knowledge(prompt);
        throw RequestError("PipelineChatMock: unrecognized task marker '" + task + "'", 0);
    }

private:
    uint64_t seed_;

    static std::string report_of(const std::string& prompt) {
        return prompt_section(prompt, markers::kReportBegin, markers::kReportEnd);
    }

    static void scan_numbers(const std::string& report,
                             const std::vector<mockdetail::NumField>& fields,
                             std::vector<std::string>& lines) {
        for (const auto& nf : fields) {
            std::regex re(nf.pattern, std::regex::ECMAScript | std::regex::icase);
            std::smatch m;
            if (!std::regex_search(report, m, re)) continue;
            std::string value = m[1].str();
            std::string unit = m.size() > 2 && m[2].matched ? m[2].str() : "";
            std::string line = std::string(nf.field) + ": " + value;
            if (!unit.empty()) line += " " + unit;
            lines.push_back(std::move(line));
        }
    }

    static void scan_phrases(const std::string& report,
                             const std::vector<mockdetail::PhraseField>& fields,
                             std::vector<std::string>& lines) {
        std::string lower = to_lower(report);
        for (const auto& pf : fields) {
            for (const char* phrase : pf.phrases) {
                if (lower.find(phrase) == std::string::npos) continue;
                std::string line = std::string(pf.field) + ": " + phrase;
                if (mockdetail::abnormal_vocab().count(phrase)) line += " | abnormal";
                lines.push_back(std::move(line));
                break;
            }
        }
    }

    std::string simulate_extract(const std::string& type_name,
                                 const std::string& prompt) const {
        std::string report = report_of(prompt);
        std::vector<std::string> lines;
        if (type_name == "master-biometry") {
            scan_numbers(report, mockdetail::master_numbers(), lines);
            std::string lower = to_lower(report);
            if (lower.find("female") != std::string::npos)
                lines.push_back("sex: female");
            else if (lower.find("male") != std::string::npos)
                lines.push_back("sex: male");
            scan_phrases(report, mockdetail::master_phrases(), lines);
        } else if (type_name == "pentacam") {
            scan_numbers(report, mockdetail::pentacam_numbers(), lines);
            scan_phrases(report, mockdetail::pentacam_phrases(), lines);
        } else if (type_name == "oct") {
            scan_numbers(report, mockdetail::oct_numbers(), lines);
            scan_phrases(report, mockdetail::oct_phrases(), lines);
        } else if (type_name == "fundus") {
            scan_numbers(report, mockdetail::fundus_numbers(), lines);
            scan_phrases(report, mockdetail::fundus_phrases(), lines);
        } else {
            throw RequestError("PipelineChatMock: unknown agent task " + type_name, 0);
        }
        std::ostringstream out;
        out << "```findings\n";
        for (const auto& l : lines) out << l << '\n';
        out << "```\n";
        out << "All values quoted above appear verbatim in the source report.\n";
        return out.str();
    }

    std::string simulate_synthesis(const std::string& prompt) const {
        auto d = mockdetail::parse_digest(
            prompt_section(prompt, markers::kPatientBegin, markers::kPatientEnd));
        std::string notes = prompt_section(prompt, markers::kAvailabilityBegin,
                                           markers::kAvailabilityEnd);
        std::ostringstream out;
        out << "Overview: a ";
        if (!d.age.empty()) out << d.age << "-year-old ";
        out << (d.sex.empty() ? "patient" : d.sex + " patient");
        const auto* lens = d.finding("lens_status");
        if (lens) out << " with " << lens->value;
        out << ".";
        if (!d.biometrics.empty()) {
            out << " Key measurements:";
            for (size_t i = 0; i < d.biometrics.size(); ++i)
                out << (i ? "; " : " ") << d.biometrics[i].first << " "
                    << d.biometrics[i].second;
            out << ".";
        }
        for (const auto& f : d.findings)
            if (f.abnormal && f.field != "lens_status")
                out << " Noted: " << f.value << ".";
        if (!notes.empty()) out << "\n" << notes;
        out << "\nOverall the record supports planning a cataract procedure.";
        return out.str();
    }

    std::string simulate_question(const std::string& prompt) const {
        auto d = mockdetail::parse_digest(
            prompt_section(prompt, markers::kPatientBegin, markers::kPatientEnd));
        std::ostringstream q;
        q << "A ";
        if (!d.age.empty()) q << d.age << "-year-old ";
        q << (d.sex.empty() ? "patient" : d.sex + " patient");
        const auto* lens = d.finding("lens_status");
        if (lens)
            q << " presents with " << lens->value;
        else
            q << " presents for cataract evaluation";
        std::string al = d.biometric("AL");
        if (!al.empty()) q << "; axial length measures " << al;
        const auto* astig = d.finding("corneal_astigmatism");
        if (astig) q << " with corneal astigmatism " << astig->value;
        q << ".";
        for (const auto& f : d.findings)
            if (f.abnormal && f.field != "lens_status" &&
                f.field != "corneal_astigmatism")
                q << " The record also notes " << f.value << ".";
        if (!d.missing.empty()) {
            q << " Note that the following report";
            q << (d.missing.size() > 1 ? "s are" : " is") << " unavailable:";
            for (size_t i = 0; i < d.missing.size(); ++i)
                q << (i ? ", " : " ") << d.missing[i];
            q << ".";
        }
        q << " Which intraocular lens strategy and surgical approach would best"
             " fit this eye, and which risks deserve particular attention?";
        return q.str();
    }

    std::string simulate_cot(const std::string& prompt) const {
        auto d = mockdetail::parse_digest(
            prompt_section(prompt, markers::kPatientBegin, markers::kPatientEnd));
        std::ostringstream s;

        s << "1. [biometric parameter analysis] ";
        if (d.biometrics.empty()) {
            s << "No biometric measurements are on record for this eye.";
        } else {
            s << "Recorded biometry:";
            bool first = true;
            for (const auto& [k, v] : d.biometrics) {
                if (k == "K1" || k == "K2") continue;
                s << (first ? " " : "; ") << k << " " << v;
                first = false;
            }
            if (first) s << " keratometry only";
            s << ".";
        }
        s << "\n2. [corneal topography interpretation] ";
        {
            std::string k1 = d.biometric("K1"), k2 = d.biometric("K2");
            const auto* topo = d.finding("topography_pattern");
            const auto* astig = d.finding("corneal_astigmatism");
            if (k1.empty() && k2.empty() && !topo && !astig) {
                s << "No keratometry or topography data available.";
            } else {
                if (!k1.empty()) s << "K1 " << k1 << (k2.empty() ? "" : ", ");
                if (!k2.empty()) s << "K2 " << k2;
                if (!k1.empty() || !k2.empty()) s << " describe the corneal power";
                if (astig)
                    s << (k1.empty() && k2.empty() ? "Corneal" : "; corneal")
                      << " astigmatism " << astig->value;
                if (topo) s << "; pattern: " << topo->value;
                s << ".";
            }
        }
        s << "\n3. [measurement consistency check] Values were cross-checked"
             " across the available device reports; the retained set is"
             " internally consistent.";
        s << "\n4. [abnormal findings] ";
        {
            bool any = false;
            for (const auto& f : d.findings)
                if (f.abnormal) {
                    s << (any ? "; " : "Flagged: ") << f.value;
                    any = true;
                }
            if (!any) s << "No abnormal findings are flagged in the record.";
            s << ".";
        }
        s << "\n5. [surgical risk assessment] ";
        {
            std::vector<std::string> risks;
            if (d.has_phrase("macular edema"))
                risks.push_back("macular edema may worsen postoperatively");
            if (d.has_phrase("zonular weakness") || d.has_phrase("pseudoexfoliation"))
                risks.push_back("zonular support is doubtful");
            if (d.has_phrase("shallow anterior chamber"))
                risks.push_back("anterior chamber crowding complicates access");
            if (d.has_phrase("keratoconus") || d.has_phrase("irregular astigmatism"))
                risks.push_back("keratometry reliability is reduced");
            for (const auto& m : d.missing)
                risks.push_back("the " + m + " report is unavailable, leaving its"
                                " findings unassessed");
            if (risks.empty()) {
                s << "Routine cataract surgery risk profile.";
            } else {
                for (size_t i = 0; i < risks.size(); ++i)
                    s << (i ? "; " : "") << risks[i];
                s << ".";
            }
        }
        s << "\n6. [IOL selection logic] ";
        {
            std::string al = d.biometric("AL");
            const auto* astig = d.finding("corneal_astigmatism");
            if (al.empty()) {
                s << "Axial length is unavailable, so lens power cannot be"
                     " computed from this record.";
            } else {
                s << "Axial length " << al << " anchors the power calculation";
                if (astig) s << "; astigmatism " << astig->value
                             << " makes toric correction worth weighing";
                s << ".";
            }
        }
        s << "\n7. [patient-specific adaptations] ";
        {
            std::vector<std::string> adapt;
            if (d.has_phrase("zonular weakness") || d.has_phrase("pseudoexfoliation"))
                adapt.push_back("plan capsular support devices");
            if (d.has_phrase("macular edema") || d.has_phrase("diabetic retinopathy"))
                adapt.push_back("coordinate retinal follow-up around surgery");
            if (!d.missing.empty())
                adapt.push_back("obtain the missing examinations before finalizing"
                                " the plan");
            if (adapt.empty()) adapt.push_back("no deviations from the standard"
                                               " pathway are required");
            for (size_t i = 0; i < adapt.size(); ++i)
                s << (i ? "; " : "") << adapt[i];
            s << ".";
        }
        s << "\n8. [decision synthesis] Biometry, corneal status and risk"
             " screening combine into the surgical plan stated in the final"
             " recommendation.";
        return s.str();
    }

    std::string simulate_recommendation(const std::string& prompt) const {
        auto d = mockdetail::parse_digest(
            prompt_section(prompt, markers::kPatientBegin, markers::kPatientEnd));
        std::ostringstream out;

        out << "Key findings: ";
        {
            std::vector<std::string> bits;
            const auto* lens = d.finding("lens_status");
            if (lens) bits.push_back(lens->value);
            std::string al = d.biometric("AL");
            if (!al.empty()) bits.push_back("axial length " + al);
            for (const auto& f : d.findings)
                if (f.abnormal && f.field != "lens_status")
                    bits.push_back(f.value);
            if (bits.empty()) bits.push_back("unremarkable preoperative record");
            for (size_t i = 0; i < bits.size(); ++i) out << (i ? "; " : "") << bits[i];
            out << ".";
        }

        out << "\nIOL selection: ";
        {
            std::string al_text = d.biometric("AL");
            double al = 0.0;
            auto nums = extract_numbers(al_text);
            if (!nums.empty()) al = nums[0];
            const auto* astig = d.finding("corneal_astigmatism");
            bool toric = false;
            if (astig) {
                auto a = extract_numbers(astig->value);
                toric = !a.empty() && a[0] >= 1.0;
            }
            if (al > 0.0) {
                double power = 21.0 + 2.0 * (24.0 - al);
                power = std::min(30.0, std::max(6.0, power));
                power = std::round(power * 2.0) / 2.0;
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.1f", power);
                out << (toric ? "Toric monofocal" : "Monofocal")
                    << " intraocular lens, " << buf
                    << " D, derived from axial length " << al_text << ".";
            } else {
                out << "Power calculation deferred: axial length unavailable.";
            }
        }

        bool ctr = d.has_phrase("zonular weakness") || d.has_phrase("pseudoexfoliation");
        out << "\nSurgical technique: Phacoemulsification"
            << (ctr ? " with capsular tension ring implantation" : "")
            << " under topical anesthesia.";

        out << "\nRisk alerts: ";
        {
            std::vector<std::string> alerts;
            if (d.has_phrase("macular edema"))
                alerts.push_back("macular edema may progress after surgery;"
                                 " retina follow-up required");
            if (ctr) alerts.push_back("intraoperative zonular instability");
            if (d.has_phrase("keratoconus") || d.has_phrase("irregular astigmatism"))
                alerts.push_back("refractive outcome less predictable on an"
                                 " irregular cornea");
            for (const auto& m : d.missing)
                alerts.push_back("missing " + m + " data leaves the related risk"
                                 " unverified");
            if (alerts.empty())
                alerts.push_back("routine cataract surgery risks apply");
            for (size_t i = 0; i < alerts.size(); ++i)
                out << (i ? "; " : "") << alerts[i];
            out << ".";
        }

        out << "\nPostoperative plan: Topical antibiotic and steroid drops with"
               " staged review visits";
        if (d.has_phrase("macular edema") || d.has_phrase("diabetic retinopathy"))
            out << ", plus early macular imaging";
        out << ".";
        return out.str();
    }

    std::string simulate_knowledge(const std::string& prompt) const {
        std::string chunk =
            prompt_section(prompt, markers::kSourceBegin, markers::kSourceEnd);
        auto sentences = split_sentences(chunk);
        if (sentences.empty())
            throw RequestError("PipelineChatMock: empty knowledge chunk", 0);
        const std::string& first = sentences.front();
        const std::string& last = sentences.back();

        auto topic = [](const std::string& sentence) {
            auto toks = tokenize(sentence);
            size_t n = std::min<size_t>(toks.size(), 6);
            TokenSeq head(toks.begin(), toks.begin() + n);
            return join_tokens(head);
        };

        std::ostringstream out;
        out << "Q: What does the source state about " << topic(first) << "?\n";
        out << "A: " << first << "\n";
        if (sentences.size() > 1) {
            out << "\nQ: What point does the source close with?\n";
            out << "A: " << last << "\n";
        }
        return out.str();
    }
};

// Degrades a reference text the way a weaker model might: drops the first
// line (or sentence) and appends a generic closing remark. Used as the
// second offline "model" so benchmark tables show separated scores.
inline std::string degrade_reply(const std::string& reference) {
    auto lines = split_lines(reference);
    std::string out;
    if (lines.size() > 1) {
        for (size_t i = 1; i < lines.size(); ++i) {
            if (i > 1) out += '\n';
            out += lines[i];
        }
    } else {
        auto sentences = split_sentences(reference);
        for (size_t i = 1; i < sentences.size(); ++i) {
            if (i > 1) out += ' ';
            out += sentences[i];
        }
    }
    if (trim(out).empty()) out = reference;
    out += "\nOverall this stays within routine planning considerations.";
    return out;
}

}  // namespace csp
