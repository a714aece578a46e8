#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "csp/errors.hpp"
#include "csp/text.hpp"

namespace csp {

// Every prompt template begins with a "# task: <name>" line. Offline mock
// backends dispatch on it; live backends simply send it along as part of the
// instruction, where it doubles as a terse role statement.
namespace markers {
inline constexpr const char* kTaskPrefix = "# task: ";
inline constexpr const char* kReportBegin = "--- REPORT ---";
inline constexpr const char* kReportEnd = "--- END REPORT ---";
inline constexpr const char* kPatientBegin = "--- PATIENT ---";
inline constexpr const char* kPatientEnd = "--- END PATIENT ---";
inline constexpr const char* kQuestionBegin = "--- QUESTION ---";
inline constexpr const char* kQuestionEnd = "--- END QUESTION ---";
inline constexpr const char* kReasoningBegin = "--- REASONING ---";
inline constexpr const char* kReasoningEnd = "--- END REASONING ---";
inline constexpr const char* kAvailabilityBegin = "--- AVAILABILITY ---";
inline constexpr const char* kAvailabilityEnd = "--- END AVAILABILITY ---";
inline constexpr const char* kSourceBegin = "--- SOURCE ---";
inline constexpr const char* kSourceEnd = "--- END SOURCE ---";
inline constexpr const char* kViolationsBegin = "--- VIOLATIONS ---";
}  // namespace markers

// Extracts the task name from a prompt ("" when no marker line exists).
inline std::string prompt_task(const std::string& prompt) {
    for (const auto& line : split_lines(prompt)) {
        std::string t = trim(line);
        if (t.empty()) continue;
        if (starts_with(t, markers::kTaskPrefix))
            return trim(t.substr(std::string(markers::kTaskPrefix).size()));
        return "";
    }
    return "";
}

// Returns the text between the given begin/end marker lines (trimmed);
// empty string when the section is absent.
inline std::string prompt_section(const std::string& prompt, const char* begin,
                                  const char* end) {
    size_t b = prompt.find(begin);
    if (b == std::string::npos) return "";
    b += std::string(begin).size();
    size_t e = prompt.find(end, b);
    if (e == std::string::npos) return "";
    return trim(prompt.substr(b, e - b));
}

// "{name}" placeholder substitution. "{{" renders a literal brace. Unknown
// placeholders throw so a typo in a template file fails loudly instead of
// leaking braces into a live prompt.
inline std::string render_template(const std::string& tmpl,
                                   const std::map<std::string, std::string>& vars) {
    std::string out;
    out.reserve(tmpl.size());
    size_t i = 0;
    while (i < tmpl.size()) {
        char c = tmpl[i];
        if (c == '{') {
            if (i + 1 < tmpl.size() && tmpl[i + 1] == '{') {
                out += '{';
                i += 2;
                continue;
            }
            size_t close = tmpl.find('}', i + 1);
            if (close == std::string::npos)
                throw ConfigError("template: unterminated placeholder");
            std::string name = tmpl.substr(i + 1, close - i - 1);
            auto it = vars.find(name);
            if (it == vars.end())
                throw ConfigError("template: unresolved placeholder {" + name + "}");
            out += it->second;
            i = close + 1;
        } else {
            out += c;
            ++i;
        }
    }
    return out;
}

struct PromptSet {
    std::string question;
    std::string cot;
    std::string recommendation;
    std::string synthesis;
    std::string knowledge_qa;

    static PromptSet defaults() {
        PromptSet p;
        p.question =
            "# task: generate-question\n"
            "You are an ophthalmic surgery attending writing an exam-style case\n"
            "question. Using only the structured patient description below, write one\n"
            "diagnostic question (two to four sentences) asking which intraocular lens\n"
            "strategy and surgical approach best fit this patient. Reference concrete\n"
            "findings. Do not answer the question and do not word it as a treatment\n"
            "order.\n"
            "\n"
            "--- PATIENT ---\n"
            "{digest}\n"
            "--- END PATIENT ---\n";
        p.cot =
            "# task: annotate-reasoning\n"
            "Produce an eight-step clinical reasoning chain for the case below, one\n"
            "step per line, each formatted as \"N. [stage] text\". Quote numeric values\n"
            "only as they appear in the patient description.\n"
            "\n"
            "--- PATIENT ---\n"
            "{digest}\n"
            "--- END PATIENT ---\n"
            "--- QUESTION ---\n"
            "{question}\n"
            "--- END QUESTION ---\n";
        p.recommendation =
            "# task: recommend\n"
            "Write the final surgical plan for the case below with exactly these five\n"
            "sections, one per line, formatted \"Header: content\": Key findings, IOL\n"
            "selection, Surgical technique, Risk alerts, Postoperative plan.\n"
            "\n"
            "--- PATIENT ---\n"
            "{digest}\n"
            "--- END PATIENT ---\n"
            "--- QUESTION ---\n"
            "{question}\n"
            "--- END QUESTION ---\n"
            "--- REASONING ---\n"
            "{chain}\n"
            "--- END REASONING ---\n";
        p.synthesis =
            "# task: synthesize-patient\n"
            "Combine the specialist findings below into a short narrative overview of\n"
            "the patient. Explicitly mention any report types listed as unavailable.\n"
            "\n"
            "--- PATIENT ---\n"
            "{digest}\n"
            "--- END PATIENT ---\n"
            "--- AVAILABILITY ---\n"
            "{availability_notes}\n"
            "--- END AVAILABILITY ---\n";
        p.knowledge_qa =
            "# task: knowledge-qa\n"
            "Write question-answer pairs grounded strictly in the source text below.\n"
            "Format each pair as \"Q: ...\" then \"A: ...\", with a blank line between\n"
            "pairs. Do not introduce facts absent from the source.\n"
            "\n"
            "--- SOURCE ---\n"
            "{chunk}\n"
            "--- END SOURCE ---\n";
        return p;
    }

    // Loads <name>.txt files from a directory; any missing file falls back to
    // the built-in default so a partial override directory is fine.
    static PromptSet load_dir(const std::filesystem::path& dir) {
        PromptSet p = defaults();
        auto maybe = [&](const char* name, std::string& slot) {
            auto path = dir / (std::string(name) + ".txt");
            if (!std::filesystem::exists(path)) return;
            std::ifstream in(path, std::ios::binary);
            if (!in) throw ConfigError("cannot read prompt template: " + path.string());
            std::ostringstream ss;
            ss << in.rdbuf();
            slot = ss.str();
        };
        maybe("question", p.question);
        maybe("cot", p.cot);
        maybe("recommendation", p.recommendation);
        maybe("synthesis", p.synthesis);
        maybe("knowledge_qa", p.knowledge_qa);
        return p;
    }
};

}  // namespace csp
