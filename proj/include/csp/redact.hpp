#pragma once

#include <fstream>
#include <map>
#include <regex>
#include <string>
#include <utility>
#include <vector>

#include "csp/errors.hpp"
#include "csp/text.hpp"

namespace csp {

// One de-identification rule. When the pattern contains a capture group the
// replacement covers group 1 only (std::regex has no lookbehind, so context
// like "Patient " is matched but must survive); otherwise the whole match is
// replaced. The placeholder is the fixed bracketed category token.
struct RedactionRule {
    std::string category;
    std::string pattern;
    std::regex compiled;
    bool group_replace = false;

    RedactionRule(std::string cat, std::string pat)
        : category(std::move(cat)), pattern(std::move(pat)) {
        try {
            compiled = std::regex(pattern, std::regex::ECMAScript);
        } catch (const std::regex_error& e) {
            throw ConfigError("redaction rule " + category + ": bad pattern: " +
                              e.what());
        }
        group_replace = compiled.mark_count() >= 1;
    }

    std::string placeholder() const { return "[" + category + "]"; }
};

using RedactionLog = std::map<std::string, int>;  // category -> span count

class RedactionRuleset {
public:
    RedactionRuleset() = default;

    void add(const std::string& category, const std::string& pattern) {
        if (category.empty()) throw ConfigError("redaction rule without category");
        rules_.emplace_back(category, pattern);
    }

    bool empty() const { return rules_.empty(); }
    size_t size() const { return rules_.size(); }
    const std::vector<RedactionRule>& rules() const { return rules_; }

    // Rule file: one rule per line, "CATEGORY<TAB>pattern", '#' comments.
    static RedactionRuleset load(const std::filesystem::path& file) {
        std::ifstream in(file, std::ios::binary);
        if (!in) throw ConfigError("cannot read redaction rules: " + file.string());
        RedactionRuleset set;
        std::string line;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            size_t tab = t.find('\t');
            if (tab == std::string::npos)
                throw ConfigError("redaction rules " + file.string() + ":" +
                                  std::to_string(line_no) + ": expected CATEGORY<TAB>pattern");
            set.add(trim(t.substr(0, tab)), trim(t.substr(tab + 1)));
        }
        return set;
    }

    // Personal names (title-prefixed), national IDs, phone numbers, dates of
    // birth, record numbers.
    static RedactionRuleset defaults() {
        RedactionRuleset set;
        set.add("NAME", R"((?:Patient|Mr|Mrs|Ms|Dr)\.?\s+([A-Z][a-z]+))");
        set.add("ID", R"(\b\d{17}[0-9Xx]\b)");
        set.add("PHONE", R"(\b1[3-9]\d{9}\b)");
        set.add("DOB", R"((?:[Bb]orn|DOB|[Dd]ate of birth)[:\s]+(\d{4}[-/]\d{1,2}[-/]\d{1,2}))");
        set.add("RECORD", R"((?:[Rr]ecord|MRN|[Cc]hart)\s*(?:[Nn]o\.?|[Nn]umber|#)?[:\s]+([A-Z]{0,4}[-0-9]{4,}))");
        return set;
    }

private:
    std::vector<RedactionRule> rules_;
};

struct RedactionResult {
    std::string text;
    RedactionLog log;
};

// Applies every rule in order; each match's sensitive span becomes the
// rule's placeholder. Second application of the same ruleset yields zero
// redactions (placeholders never re-match).
inline RedactionResult deidentify(const std::string& content,
                                  const RedactionRuleset& ruleset) {
    if (ruleset.empty())
        throw PreconditionError("deidentify: ruleset must be non-empty");
    RedactionResult result;
    result.text = content;
    for (const auto& rule : ruleset.rules()) {
        std::string next;
        next.reserve(result.text.size());
        auto begin = std::sregex_iterator(result.text.begin(), result.text.end(),
                                          rule.compiled);
        auto end = std::sregex_iterator();
        size_t last = 0;
        int count = 0;
        for (auto it = begin; it != end; ++it) {
            const std::smatch& m = *it;
            bool use_group = rule.group_replace && m.size() > 1 && m[1].matched;
            size_t span_pos =
                static_cast<size_t>(use_group ? m.position(1) : m.position(0));
            size_t span_len =
                static_cast<size_t>(use_group ? m.length(1) : m.length(0));
            next.append(result.text, last, span_pos - last);
            next += rule.placeholder();
            last = span_pos + span_len;
            ++count;
        }
        if (count > 0) {
            next.append(result.text, last, std::string::npos);
            result.text = std::move(next);
            result.log[rule.category] += count;
        }
    }
    return result;
}

}  // namespace csp
