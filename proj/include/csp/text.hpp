#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace csp {

// Ordered token list produced by tokenize(). All n-gram/LCS/keypoint metrics
// share this substrate so bilingual (zh/en) texts score consistently.
using TokenSeq = std::vector<std::string>;

inline std::string trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return out;
}

inline bool starts_with(std::string_view s, std::string_view prefix) {
    return s.size() >= prefix.size() && s.substr(0, prefix.size()) == prefix;
}

inline std::vector<std::string> split_lines(std::string_view text) {
    std::vector<std::string> lines;
    size_t start = 0;
    while (start <= text.size()) {
        size_t nl = text.find('\n', start);
        if (nl == std::string_view::npos) {
            lines.emplace_back(text.substr(start));
            break;
        }
        std::string line(text.substr(start, nl - start));
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
        start = nl + 1;
    }
    return lines;
}

// Splits on blank lines. Leading/trailing whitespace of each paragraph trimmed.
inline std::vector<std::string> split_paragraphs(std::string_view text) {
    std::vector<std::string> paras;
    std::string current;
    for (const auto& line : split_lines(text)) {
        if (trim(line).empty()) {
            if (!trim(current).empty()) paras.push_back(trim(current));
            current.clear();
        } else {
            if (!current.empty()) current += '\n';
            current += line;
        }
    }
    if (!trim(current).empty()) paras.push_back(trim(current));
    return paras;
}

// Decodes one UTF-8 code point starting at byte i; returns its byte length.
// Malformed bytes are consumed one at a time and yielded verbatim.
inline size_t utf8_decode(std::string_view s, size_t i, char32_t& cp) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    if (b0 < 0x80) {
        cp = b0;
        return 1;
    }
    auto cont = [&](size_t k) {
        return i + k < s.size() &&
               (static_cast<unsigned char>(s[i + k]) & 0xC0) == 0x80;
    };
    if ((b0 & 0xE0) == 0xC0 && cont(1)) {
        cp = ((b0 & 0x1Fu) << 6) | (static_cast<unsigned char>(s[i + 1]) & 0x3Fu);
        return 2;
    }
    if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2)) {
        cp = ((b0 & 0x0Fu) << 12) |
             ((static_cast<unsigned char>(s[i + 1]) & 0x3Fu) << 6) |
             (static_cast<unsigned char>(s[i + 2]) & 0x3Fu);
        return 3;
    }
    if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3)) {
        cp = ((b0 & 0x07u) << 18) |
             ((static_cast<unsigned char>(s[i + 1]) & 0x3Fu) << 12) |
             ((static_cast<unsigned char>(s[i + 2]) & 0x3Fu) << 6) |
             (static_cast<unsigned char>(s[i + 3]) & 0x3Fu);
        return 4;
    }
    cp = b0;
    return 1;
}

// CJK ideographs plus kana; each such code point becomes its own token.
inline bool is_cjk(char32_t cp) {
    return (cp >= 0x4E00 && cp <= 0x9FFF) ||    // CJK Unified Ideographs
           (cp >= 0x3400 && cp <= 0x4DBF) ||    // Extension A
           (cp >= 0xF900 && cp <= 0xFAFF) ||    // Compatibility Ideographs
           (cp >= 0x3040 && cp <= 0x30FF) ||    // Hiragana + Katakana
           (cp >= 0x20000 && cp <= 0x2A6DF);    // Extension B
}

// Non-CJK letters that join into word tokens. ASCII letters are lowercased;
// other scripts pass through unchanged.
inline bool is_word_letter(char32_t cp) {
    if ((cp >= 'A' && cp <= 'Z') || (cp >= 'a' && cp <= 'z')) return true;
    if (cp == 0x00B5) return true;                  // micro sign (µm)
    if (cp >= 0x00C0 && cp <= 0x024F) return true;  // Latin-1 Supplement / Extended
    if (cp >= 0x0370 && cp <= 0x03FF) return true;  // Greek
    if (cp >= 0x0400 && cp <= 0x04FF) return true;  // Cyrillic
    return false;
}

// Canonical tokenizer shared by BLEU / ROUGE-L / keypoint extraction.
// Rules: lowercase; a token starting with a letter runs over letters and
// digits ("K1" -> "k1"); CJK runs split per character; a token starting with
// a digit is a number and keeps one embedded decimal point ("21.5D" ->
// "21.5", "d").
inline TokenSeq tokenize(std::string_view text) {
    TokenSeq tokens;
    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
        char32_t cp = 0;
        size_t len = utf8_decode(text, i, cp);
        if (cp < 0x80 && std::isdigit(static_cast<int>(cp))) {
            size_t j = i;
            while (j < n && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
            if (j + 1 < n && text[j] == '.' &&
                std::isdigit(static_cast<unsigned char>(text[j + 1]))) {
                ++j;
                while (j < n && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
            }
            tokens.emplace_back(text.substr(i, j - i));
            i = j;
        } else if (is_cjk(cp)) {
            tokens.emplace_back(text.substr(i, len));
            i += len;
        } else if (is_word_letter(cp)) {
            size_t j = i;
            std::string word;
            while (j < n) {
                char32_t wcp = 0;
                size_t wlen = utf8_decode(text, j, wcp);
                bool digit = wcp < 0x80 && std::isdigit(static_cast<int>(wcp));
                if ((!is_word_letter(wcp) && !digit) || is_cjk(wcp)) break;
                if (wcp < 0x80) {
                    word += static_cast<char>(
                        std::tolower(static_cast<unsigned char>(text[j])));
                } else {
                    word.append(text.substr(j, wlen));
                }
                j += wlen;
            }
            tokens.push_back(std::move(word));
            i = j;
        } else {
            i += len;
        }
    }
    return tokens;
}

inline std::string join_tokens(const TokenSeq& tokens, std::string_view sep = " ") {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += sep;
        out += tokens[i];
    }
    return out;
}

// All decimal numbers appearing in the text, using the tokenizer's number
// rule. Used by the fabrication and traceability audits.
inline std::vector<double> extract_numbers(std::string_view text) {
    std::vector<double> out;
    for (const auto& tok : tokenize(text)) {
        if (!tok.empty() && std::isdigit(static_cast<unsigned char>(tok[0]))) {
            out.push_back(std::stod(tok));
        }
    }
    return out;
}

// Number of Unicode code points (what "characters" means in the length
// statistics, so CJK text is not counted in UTF-8 bytes).
inline size_t codepoint_count(std::string_view text) {
    size_t count = 0;
    size_t i = 0;
    while (i < text.size()) {
        char32_t cp = 0;
        i += utf8_decode(text, i, cp);
        ++count;
    }
    return count;
}

// Splits text into sentences on ".", "!", "?" and their fullwidth/CJK
// counterparts, keeping the terminator attached. A "." inside a number
// ("23.5 mm") does not end a sentence.
inline std::vector<std::string> split_sentences(std::string_view text) {
    std::vector<std::string> out;
    std::string current;
    size_t i = 0;
    while (i < text.size()) {
        char32_t cp = 0;
        size_t len = utf8_decode(text, i, cp);
        current.append(text.substr(i, len));
        bool terminal = false;
        if (cp == '!' || cp == '?') {
            terminal = true;
        } else if (cp == '.') {
            bool prev_digit = current.size() >= 2 &&
                              std::isdigit(static_cast<unsigned char>(
                                  current[current.size() - 2]));
            bool next_digit = i + len < text.size() &&
                              std::isdigit(static_cast<unsigned char>(text[i + len]));
            terminal = !(prev_digit && next_digit);
        } else if (cp == 0x3002 || cp == 0xFF01 || cp == 0xFF1F) {  // 。！？
            terminal = true;
        }
        if (terminal) {
            std::string s = trim(current);
            if (!s.empty()) out.push_back(std::move(s));
            current.clear();
        }
        i += len;
    }
    std::string tail = trim(current);
    if (!tail.empty()) out.push_back(std::move(tail));
    return out;
}

// Word count where a "word" is a Latin-script run or a single CJK character.
// Drives the ~5000-word knowledge chunker on bilingual documents.
inline size_t word_count(std::string_view text) {
    size_t count = 0;
    size_t i = 0;
    bool in_run = false;
    while (i < text.size()) {
        char32_t cp = 0;
        size_t len = utf8_decode(text, i, cp);
        if (is_cjk(cp)) {
            ++count;
            in_run = false;
        } else if (cp < 0x80 && std::isspace(static_cast<int>(cp))) {
            in_run = false;
        } else {
            if (!in_run) ++count;
            in_run = true;
        }
        i += len;
    }
    return count;
}

}  // namespace csp
