#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "csp/text.hpp"

using namespace csp;

TEST_CASE("tokenize lowercases Latin words and splits units from numbers") {
    TokenSeq expected{"iol", "power", "21.5", "d"};
    CHECK(tokenize("IOL power 21.5D") == expected);
}

TEST_CASE("tokenize keeps one embedded decimal point per number") {
    CHECK(tokenize("AL 23.52mm") == TokenSeq{"al", "23.52", "mm"});
    CHECK(tokenize("1.2.3") == TokenSeq{"1.2", "3"});
    CHECK(tokenize("3.") == TokenSeq{"3"});
    CHECK(tokenize(".5") == TokenSeq{"5"});
}

TEST_CASE("letter-led alphanumeric runs stay one token") {
    CHECK(tokenize("K1 and K2") == TokenSeq{"k1", "and", "k2"});
    CHECK(tokenize("IOLMaster700") == TokenSeq{"iolmaster700"});
}

TEST_CASE("tokenize emits CJK characters as single tokens") {
    CHECK(tokenize("白内障") == TokenSeq{"白", "内", "障"});
    CHECK(tokenize("AL值23.5毫米") == TokenSeq{"al", "值", "23.5", "毫", "米"});
}

TEST_CASE("tokenize strips punctuation and hyphens") {
    CHECK(tokenize("67-year-old, female.") == TokenSeq{"67", "year", "old", "female"});
    CHECK(tokenize("(K1: 43.50 D)") == TokenSeq{"k1", "43.50", "d"});
}

TEST_CASE("tokenize handles the micro sign as a word character") {
    CHECK(tokenize("CCT 541 µm") == TokenSeq{"cct", "541", "µm"});
}

TEST_CASE("tokenize of empty and whitespace-only input is empty") {
    CHECK(tokenize("").empty());
    CHECK(tokenize("  \t\n ").empty());
}

TEST_CASE("tokenization is idempotent through its canonical join") {
    std::mt19937 rng(20240817);
    const std::string alphabet = "abcXYZ 019.,-()白内障 µ";
    // Collect code points once so multi-byte alphabet entries stay intact.
    std::vector<std::string> pieces;
    {
        size_t i = 0;
        while (i < alphabet.size()) {
            char32_t cp = 0;
            size_t len = utf8_decode(alphabet, i, cp);
            pieces.push_back(alphabet.substr(i, len));
            i += len;
        }
    }
    for (int iter = 0; iter < 500; ++iter) {
        std::string s;
        size_t n = rng() % 24;
        for (size_t k = 0; k < n; ++k) s += pieces[rng() % pieces.size()];
        auto once = tokenize(s);
        auto twice = tokenize(join_tokens(once));
        CHECK(once == twice);
    }
}

TEST_CASE("extract_numbers finds every numeric token") {
    auto nums = extract_numbers("AL 23.52 mm, CCT 541 um and 0.75 ratio");
    REQUIRE(nums.size() == 3);
    CHECK(nums[0] == Catch::Approx(23.52));
    CHECK(nums[1] == Catch::Approx(541));
    CHECK(nums[2] == Catch::Approx(0.75));
}

TEST_CASE("split_lines and split_paragraphs") {
    auto lines = split_lines("a\nb\r\nc");
    REQUIRE(lines.size() == 3);
    CHECK(lines[1] == "b");

    auto paras = split_paragraphs("first block\nstill first\n\nsecond block\n\n\nthird");
    REQUIRE(paras.size() == 3);
    CHECK(paras[0] == "first block\nstill first");
    CHECK(paras[2] == "third");
}

TEST_CASE("split_sentences keeps decimals intact") {
    auto s = split_sentences("Hello world. AL measures 23.5 mm today. Done!");
    REQUIRE(s.size() == 3);
    CHECK(s[0] == "Hello world.");
    CHECK(s[1] == "AL measures 23.5 mm today.");
    CHECK(s[2] == "Done!");
}

TEST_CASE("split_sentences understands CJK terminators") {
    auto s = split_sentences("白内障手术。视力下降？");
    REQUIRE(s.size() == 2);
}

TEST_CASE("word_count counts Latin runs and CJK characters") {
    CHECK(word_count("axial length") == 2);
    CHECK(word_count("白内障") == 3);
    CHECK(word_count("axial length 白内障") == 5);
    CHECK(word_count("") == 0);
}

TEST_CASE("trim removes surrounding whitespace only") {
    CHECK(trim("  a b \t\n") == "a b");
    CHECK(trim("") == "");
}

TEST_CASE("starts_with and to_lower behave as expected") {
    CHECK(starts_with("Station", "Sta"));
    CHECK_FALSE(starts_with("St", "Sta"));
    CHECK(to_lower("AL 23 µm") == "al 23 µm");
}
