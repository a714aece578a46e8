#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "csp/errors.hpp"
#include "csp/text.hpp"

namespace csp {

// Normalized multi-word medical term vocabulary. Terms are matched with a
// longest-match scan over canonically tokenized text, so "intraocular lens"
// suppresses a bare "lens" hit inside it.
class TermLexicon {
public:
    TermLexicon() = default;

    explicit TermLexicon(const std::vector<std::string>& terms,
                         std::string version = "inline")
        : version_(std::move(version)) {
        for (const auto& t : terms) add(t);
    }

    static TermLexicon load(const std::filesystem::path& file) {
        std::ifstream in(file);
        if (!in) throw ConfigError("lexicon file not readable: " + file.string());
        TermLexicon lex;
        lex.version_ = file.filename().string();
        std::string line;
        while (std::getline(in, line)) {
            auto t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            lex.add(t);
        }
        return lex;
    }

    void add(const std::string& term) {
        TokenSeq toks = tokenize(term);
        if (toks.empty()) return;
        auto& bucket = index_[toks[0]];
        for (const auto& e : bucket) {
            if (e.tokens == toks) return;  // duplicate
        }
        std::string canonical = to_lower(trim(term));
        bucket.push_back({toks, canonical});
        // longest candidates first, so the scan's first hit is the match
        std::stable_sort(bucket.begin(), bucket.end(),
                         [](const Entry& a, const Entry& b) {
                             return a.tokens.size() > b.tokens.size();
                         });
        terms_.insert(std::move(canonical));
    }

    bool empty() const { return terms_.empty(); }
    size_t size() const { return terms_.size(); }
    const std::set<std::string>& terms() const { return terms_; }
    const std::string& version() const { return version_; }

    // Longest-match extraction; overlapping shorter matches suppressed;
    // returns a deduplicated set of canonical term strings.
    std::set<std::string> extract(std::string_view text) const {
        std::set<std::string> found;
        TokenSeq toks = tokenize(text);
        size_t i = 0;
        while (i < toks.size()) {
            const Entry* hit = nullptr;
            auto bucket = index_.find(toks[i]);
            if (bucket != index_.end()) {
                for (const auto& e : bucket->second) {
                    if (i + e.tokens.size() > toks.size()) continue;
                    if (std::equal(e.tokens.begin(), e.tokens.end(),
                                   toks.begin() + i)) {
                        hit = &e;
                        break;
                    }
                }
            }
            if (hit) {
                found.insert(hit->canonical);
                i += hit->tokens.size();
            } else {
                ++i;
            }
        }
        return found;
    }

private:
    struct Entry {
        TokenSeq tokens;
        std::string canonical;
    };

    std::map<std::string, std::vector<Entry>> index_;  // first token -> entries
    std::set<std::string> terms_;
    std::string version_ = "empty";
};

inline std::set<std::string> extract_keyterms(std::string_view text,
                                              const TermLexicon& lexicon) {
    if (lexicon.empty()) throw PreconditionError("extract_keyterms: empty lexicon");
    return lexicon.extract(text);
}

}  // namespace csp
