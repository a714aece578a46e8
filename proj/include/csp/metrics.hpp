#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "csp/gateway.hpp"
#include "csp/lexicon.hpp"
#include "csp/text.hpp"

namespace csp {

struct ScoreTriple {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;

    static ScoreTriple from_pr(double p, double r) {
        ScoreTriple t;
        t.precision = p;
        t.recall = r;
        t.f1 = (p + r > 0.0) ? 2.0 * p * r / (p + r) : 0.0;
        return t;
    }
};

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

enum class BleuSmoothing { none, add_epsilon };

// Geometric mean of clipped n-gram precisions (n = 1..max_n) times the
// brevity penalty exp(min(0, 1 - |ref|/|hyp|)). With BleuSmoothing::none any
// zero n-gram precision collapses the score to 0; add_epsilon substitutes
// 1e-9 for zero counts, which matters on short clinical texts where 4-grams
// rarely match.
inline double bleu(const TokenSeq& hypothesis, const TokenSeq& reference,
                   int max_n = 4, BleuSmoothing smoothing = BleuSmoothing::none) {
    if (reference.empty()) throw PreconditionError("bleu: reference must be non-empty");
    if (hypothesis.empty()) return 0.0;
    if (max_n < 1) throw PreconditionError("bleu: max_n must be >= 1");

    auto ngram_counts = [](const TokenSeq& seq, int n) {
        std::map<std::string, int> counts;
        if (static_cast<int>(seq.size()) >= n) {
            for (size_t i = 0; i + n <= seq.size(); ++i) {
                std::string key;
                for (int k = 0; k < n; ++k) {
                    if (k) key += '\x1f';
                    key += seq[i + k];
                }
                ++counts[key];
            }
        }
        return counts;
    };

    double log_sum = 0.0;
    for (int n = 1; n <= max_n; ++n) {
        auto hyp_counts = ngram_counts(hypothesis, n);
        auto ref_counts = ngram_counts(reference, n);
        long total = 0;
        long matched = 0;
        for (const auto& [gram, count] : hyp_counts) {
            total += count;
            auto it = ref_counts.find(gram);
            if (it != ref_counts.end()) matched += std::min(count, it->second);
        }
        double precision;
        if (smoothing == BleuSmoothing::none) {
            if (total == 0 || matched == 0) return 0.0;
            precision = static_cast<double>(matched) / static_cast<double>(total);
        } else {
            double num = matched > 0 ? static_cast<double>(matched) : 1e-9;
            double den = total > 0 ? static_cast<double>(total) : 1.0;
            precision = num / den;
        }
        log_sum += std::log(precision);
    }

    double brevity = std::exp(std::min(
        0.0, 1.0 - static_cast<double>(reference.size()) /
                       static_cast<double>(hypothesis.size())));
    return std::exp(log_sum / max_n) * brevity;
}

// ---------------------------------------------------------------------------
// ROUGE-L
// ---------------------------------------------------------------------------

inline size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<size_t> prev(b.size() + 1, 0), curr(b.size() + 1, 0);
    for (size_t i = 1; i <= a.size(); ++i) {
        for (size_t j = 1; j <= b.size(); ++j) {
            if (a[i - 1] == b[j - 1])
                curr[j] = prev[j - 1] + 1;
            else
                curr[j] = std::max(prev[j], curr[j - 1]);
        }
        std::swap(prev, curr);
    }
    return prev[b.size()];
}

inline ScoreTriple rouge_l(const TokenSeq& hypothesis, const TokenSeq& reference) {
    if (hypothesis.empty() || reference.empty()) return {};
    double l = static_cast<double>(lcs_length(hypothesis, reference));
    double p = l / static_cast<double>(hypothesis.size());
    double r = l / static_cast<double>(reference.size());
    return ScoreTriple::from_pr(p, r);
}

// ---------------------------------------------------------------------------
// BERTScore (greedy matching over unit-normalized token vectors)
// ---------------------------------------------------------------------------

struct BertScoreOptions {
    // Both off by default: IDF weights need a reference corpus and rescaling
    // needs a fitted baseline, and neither ships with the toolkit.
    const std::map<std::string, double>* idf_weights = nullptr;
    std::optional<double> rescale_baseline;
};

inline ScoreTriple bertscore(const std::string& hypothesis, const std::string& reference,
                             EmbedBackend& backend, const BertScoreOptions& options = {}) {
    if (trim(hypothesis).empty() || trim(reference).empty())
        throw PreconditionError("bertscore: both texts must be non-empty");

    auto hyp_vecs = backend.embed_tokens(hypothesis);
    auto ref_vecs = backend.embed_tokens(reference);
    if (hyp_vecs.empty() || ref_vecs.empty())
        throw Error("bertscore: backend returned no vectors");

    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (size_t i = 0; i < a.size() && i < b.size(); ++i) s += a[i] * b[i];
        return s;
    };

    auto weight_for = [&](const TokenSeq& toks, size_t i) {
        if (!options.idf_weights) return 1.0;
        if (i >= toks.size()) return 1.0;
        auto it = options.idf_weights->find(toks[i]);
        return it != options.idf_weights->end() ? it->second : 1.0;
    };

    TokenSeq hyp_toks = options.idf_weights ? tokenize(hypothesis) : TokenSeq{};
    TokenSeq ref_toks = options.idf_weights ? tokenize(reference) : TokenSeq{};

    auto greedy = [&](const std::vector<std::vector<double>>& from,
                      const std::vector<std::vector<double>>& to,
                      const TokenSeq& from_toks) {
        double num = 0.0, den = 0.0;
        for (size_t i = 0; i < from.size(); ++i) {
            double best = 0.0;
            for (const auto& v : to) best = std::max(best, dot(from[i], v));
            double w = weight_for(from_toks, i);
            num += w * best;
            den += w;
        }
        return den > 0.0 ? num / den : 0.0;
    };

    double p = greedy(hyp_vecs, ref_vecs, hyp_toks);
    double r = greedy(ref_vecs, hyp_vecs, ref_toks);
    if (options.rescale_baseline) {
        double b = *options.rescale_baseline;
        if (b < 1.0) {
            p = (p - b) / (1.0 - b);
            r = (r - b) / (1.0 - b);
        }
    }
    return ScoreTriple::from_pr(p, r);
}

// ---------------------------------------------------------------------------
// Keypoint (k-P/R/F1) metrics over lexicon terms
// ---------------------------------------------------------------------------

inline ScoreTriple keypoint_scores(const std::string& hypothesis,
                                   const std::string& reference,
                                   const TermLexicon& lexicon) {
    auto hyp_terms = extract_keyterms(hypothesis, lexicon);
    auto ref_terms = extract_keyterms(reference, lexicon);
    std::vector<std::string> common;
    std::set_intersection(hyp_terms.begin(), hyp_terms.end(), ref_terms.begin(),
                          ref_terms.end(), std::back_inserter(common));
    double p = hyp_terms.empty()
                   ? 0.0
                   : static_cast<double>(common.size()) / static_cast<double>(hyp_terms.size());
    double r = ref_terms.empty()
                   ? 0.0
                   : static_cast<double>(common.size()) / static_cast<double>(ref_terms.size());
    return ScoreTriple::from_pr(p, r);
}

// ---------------------------------------------------------------------------
// Reasoning-step segmentation
// ---------------------------------------------------------------------------

namespace detail {

// Recognizes line-initial step markers: "1." / "2)" / "Step 3:" / "①" /
// "第1步". Returns the marker's byte length and parsed index, or 0.
inline size_t match_step_marker(std::string_view line, int& index_out) {
    size_t i = 0;
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    size_t start = i;

    auto read_digits = [&](size_t& pos, int& value) {
        size_t d = pos;
        value = 0;
        while (d < line.size() && std::isdigit(static_cast<unsigned char>(line[d])) &&
               d - pos < 4) {
            value = value * 10 + (line[d] - '0');
            ++d;
        }
        if (d == pos) return false;
        pos = d;
        return true;
    };

    // circled digits U+2460..U+2473 ("①".."⑳")
    if (i < line.size()) {
        char32_t cp = 0;
        size_t len = utf8_decode(line, i, cp);
        if (cp >= 0x2460 && cp <= 0x2473) {
            index_out = static_cast<int>(cp - 0x2460) + 1;
            i += len;
            if (i < line.size() && (line[i] == '.' || line[i] == ':')) ++i;
            while (i < line.size() && line[i] == ' ') ++i;
            return i;
        }
    }

    // "第N步"
    if (line.substr(i).size() >= 3 && line.substr(i, 3) == "\xE7\xAC\xAC") {
        size_t pos = i + 3;
        int idx = 0;
        if (read_digits(pos, idx) && line.substr(pos, 3) == "\xE6\xAD\xA5") {
            pos += 3;
            if (pos < line.size() && (line[pos] == ':' || line[pos] == '.')) ++pos;
            // fullwidth colon
            if (line.substr(pos, 3) == "\xEF\xBC\x9A") pos += 3;
            while (pos < line.size() && line[pos] == ' ') ++pos;
            index_out = idx;
            return pos;
        }
    }

    // "Step N" (case-insensitive)
    if (line.size() - i >= 5 && to_lower(std::string(line.substr(i, 4))) == "step") {
        size_t pos = i + 4;
        while (pos < line.size() && line[pos] == ' ') ++pos;
        int idx = 0;
        if (read_digits(pos, idx)) {
            if (pos < line.size() && (line[pos] == ':' || line[pos] == '.')) ++pos;
            while (pos < line.size() && line[pos] == ' ') ++pos;
            index_out = idx;
            return pos;
        }
    }

    // "N." / "N)" / "N、" — but not a decimal number like "23.5"
    {
        size_t pos = start;
        int idx = 0;
        if (read_digits(pos, idx)) {
            bool punct = false;
            if (pos < line.size()) {
                char c = line[pos];
                if (c == '.' || c == ')') {
                    bool decimal = (c == '.') && pos + 1 < line.size() &&
                                   std::isdigit(static_cast<unsigned char>(line[pos + 1]));
                    if (!decimal) {
                        ++pos;
                        punct = true;
                    }
                } else if (line.substr(pos, 3) == "\xE3\x80\x81" ||   // 、
                           line.substr(pos, 3) == "\xEF\xBC\x89" ||   // ）
                           line.substr(pos, 3) == "\xEF\xBC\x8E") {   // ．
                    pos += 3;
                    punct = true;
                }
            }
            if (punct) {
                while (pos < line.size() && line[pos] == ' ') ++pos;
                index_out = idx;
                return pos;
            }
        }
    }
    return 0;
}

}  // namespace detail

struct IndexedStep {
    std::optional<int> marker_index;  // as written, when a marker was present
    std::string text;
};

// Primary: split on line-initial step markers; fallback: blank-line
// paragraphs; final fallback: the whole text as one step. Markers stripped.
inline std::vector<IndexedStep> segment_steps_indexed(const std::string& cot) {
    std::vector<IndexedStep> steps;
    auto lines = split_lines(cot);
    bool any_marker = false;
    std::string current;
    std::optional<int> current_index;
    bool in_step = false;

    auto flush = [&] {
        if (in_step && !trim(current).empty())
            steps.push_back({current_index, trim(current)});
        current.clear();
        current_index.reset();
    };

    for (const auto& line : lines) {
        int idx = 0;
        size_t consumed = detail::match_step_marker(line, idx);
        if (consumed > 0) {
            any_marker = true;
            flush();
            in_step = true;
            current = line.substr(consumed);
            current_index = idx;
        } else if (in_step) {
            current += '\n';
            current += line;
        }
    }
    flush();

    if (any_marker && !steps.empty()) return steps;

    steps.clear();
    auto paras = split_paragraphs(cot);
    if (paras.size() >= 2) {
        for (auto& p : paras) steps.push_back({std::nullopt, std::move(p)});
        return steps;
    }
    if (!trim(cot).empty()) steps.push_back({std::nullopt, trim(cot)});
    return steps;
}

inline std::vector<std::string> segment_steps(const std::string& cot) {
    std::vector<std::string> out;
    for (auto& s : segment_steps_indexed(cot)) out.push_back(std::move(s.text));
    return out;
}

// ---------------------------------------------------------------------------
// Stepwise entity metrics
// ---------------------------------------------------------------------------

// Steps aligned by index; micro-averaged P/R/F1 over per-step entity sets.
// Trailing hypothesis steps count against precision only, trailing reference
// steps against recall only.
inline ScoreTriple entity_step_scores(const std::string& hyp_cot,
                                      const std::string& ref_cot,
                                      const TermLexicon& lexicon) {
    if (lexicon.empty()) throw PreconditionError("entity_step_scores: empty lexicon");
    auto hyp_steps = segment_steps(hyp_cot);
    auto ref_steps = segment_steps(ref_cot);

    size_t matched = 0, hyp_total = 0, ref_total = 0;
    size_t aligned = std::min(hyp_steps.size(), ref_steps.size());
    for (size_t i = 0; i < aligned; ++i) {
        auto h = lexicon.extract(hyp_steps[i]);
        auto r = lexicon.extract(ref_steps[i]);
        std::vector<std::string> common;
        std::set_intersection(h.begin(), h.end(), r.begin(), r.end(),
                              std::back_inserter(common));
        matched += common.size();
        hyp_total += h.size();
        ref_total += r.size();
    }
    for (size_t i = aligned; i < hyp_steps.size(); ++i)
        hyp_total += lexicon.extract(hyp_steps[i]).size();
    for (size_t i = aligned; i < ref_steps.size(); ++i)
        ref_total += lexicon.extract(ref_steps[i]).size();

    double p = hyp_total > 0 ? static_cast<double>(matched) / hyp_total : 0.0;
    double r = ref_total > 0 ? static_cast<double>(matched) / ref_total : 0.0;
    return ScoreTriple::from_pr(p, r);
}

// ---------------------------------------------------------------------------
// NLI chain consistency
// ---------------------------------------------------------------------------

// Proportion of consecutive step pairs judged "entailment", forward
// direction (premise = earlier step). Chains with fewer than two steps are
// undefined and must be excluded from aggregation (coverage still counted).
inline std::optional<double> nli_consistency(const std::string& cot, NliBackend& backend) {
    auto steps = segment_steps(cot);
    if (steps.size() < 2) return std::nullopt;
    int entailed = 0;
    for (size_t i = 0; i + 1 < steps.size(); ++i) {
        NliVerdict v = backend.nli(steps[i], steps[i + 1]);
        if (v.label == NliLabel::entailment) ++entailed;
    }
    return static_cast<double>(entailed) / static_cast<double>(steps.size() - 1);
}

}  // namespace csp
