#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "csp/metrics.hpp"
#include "csp/mocks.hpp"
#include "support/oracles.hpp"

using namespace csp;

namespace {

TokenSeq random_seq(std::mt19937& rng, size_t max_len, int alphabet = 3) {
    static const char* symbols[] = {"alpha", "beta", "gamma", "delta", "epsilon"};
    TokenSeq seq;
    size_t n = rng() % (max_len + 1);
    for (size_t i = 0; i < n; ++i) seq.push_back(symbols[rng() % alphabet]);
    return seq;
}

}  // namespace

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

TEST_CASE("bleu of identical sequences is exactly one") {
    TokenSeq x{"al", "23.52", "mm", "measured", "today"};
    CHECK(bleu(x, x) == 1.0);
    CHECK(bleu(x, x, 2) == 1.0);
    CHECK(bleu(x, x, 1, BleuSmoothing::add_epsilon) == 1.0);
}

TEST_CASE("bleu brevity penalty on the frozen short-hypothesis fixture") {
    // hyp [a b c d] vs ref [a b c d e], max_n=2, no smoothing:
    // p1 = 4/4, p2 = 3/3, BP = exp(1 - 5/4) -> exp(-0.25).
    TokenSeq hyp{"a", "b", "c", "d"};
    TokenSeq ref{"a", "b", "c", "d", "e"};
    CHECK(bleu(hyp, ref, 2) == Catch::Approx(std::exp(-0.25)).epsilon(1e-12));
    CHECK(bleu(hyp, ref, 2) == Catch::Approx(0.7788007831).epsilon(1e-9));
}

TEST_CASE("bleu without smoothing collapses to zero on any zero n-gram count") {
    TokenSeq hyp{"a", "x"};
    TokenSeq ref{"a", "b"};
    CHECK(bleu(hyp, ref, 2) == 0.0);
}

TEST_CASE("bleu epsilon smoothing keeps a tiny positive score instead") {
    TokenSeq hyp{"a", "x"};
    TokenSeq ref{"a", "b"};
    double s = bleu(hyp, ref, 2, BleuSmoothing::add_epsilon);
    CHECK(s > 0.0);
    CHECK(s == Catch::Approx(std::sqrt(0.5 * 1e-9)).epsilon(1e-9));
}

TEST_CASE("bleu of a hypothesis shorter than max_n") {
    TokenSeq hyp{"a"};
    TokenSeq ref{"a", "b"};
    CHECK(bleu(hyp, ref, 2) == 0.0);  // no bigram slots at all
    CHECK(bleu(hyp, ref, 2, BleuSmoothing::add_epsilon) > 0.0);
}

TEST_CASE("bleu preconditions") {
    TokenSeq x{"a"};
    CHECK(bleu({}, x) == 0.0);
    CHECK_THROWS_AS(bleu(x, {}), PreconditionError);
    CHECK_THROWS_AS(bleu(x, x, 0), PreconditionError);
}

TEST_CASE("bleu agrees with the quadratic-scan oracle on random sequences") {
    std::mt19937 rng(7031);
    for (int iter = 0; iter < 400; ++iter) {
        TokenSeq hyp = random_seq(rng, 8);
        TokenSeq ref = random_seq(rng, 8);
        if (ref.empty()) continue;
        int max_n = 1 + static_cast<int>(rng() % 4);
        for (bool eps : {false, true}) {
            double got = bleu(hyp, ref, max_n,
                              eps ? BleuSmoothing::add_epsilon : BleuSmoothing::none);
            double want = oracles::bleu_bruteforce(hyp, ref, max_n, eps);
            CHECK(got == Catch::Approx(want).margin(1e-12));
            CHECK(got >= 0.0);
            CHECK(got <= 1.0 + 1e-12);
        }
    }
}

// ---------------------------------------------------------------------------
// ROUGE-L
// ---------------------------------------------------------------------------

TEST_CASE("rouge_l on the frozen cat fixture") {
    // hyp [the cat], ref [the cat sat]: LCS 2 -> P=1, R=2/3, F1=0.8.
    auto t = rouge_l({"the", "cat"}, {"the", "cat", "sat"});
    CHECK(t.precision == Catch::Approx(1.0));
    CHECK(t.recall == Catch::Approx(2.0 / 3.0));
    CHECK(t.f1 == Catch::Approx(0.8).margin(1e-12));
}

TEST_CASE("rouge_l is zero on empty input and one on identity") {
    auto z = rouge_l({}, {"a"});
    CHECK(z.f1 == 0.0);
    TokenSeq x{"a", "b", "c"};
    auto id = rouge_l(x, x);
    CHECK(id.f1 == Catch::Approx(1.0));
}

TEST_CASE("lcs_length matches the exhaustive subsequence oracle") {
    std::mt19937 rng(40923);
    for (int iter = 0; iter < 600; ++iter) {
        TokenSeq a = random_seq(rng, 7);
        TokenSeq b = random_seq(rng, 7);
        CHECK(lcs_length(a, b) == oracles::lcs_bruteforce(a, b));
        CHECK(lcs_length(a, b) == lcs_length(b, a));
    }
}

TEST_CASE("rouge_l precision and recall swap when arguments swap") {
    std::mt19937 rng(5150);
    for (int iter = 0; iter < 200; ++iter) {
        TokenSeq a = random_seq(rng, 7);
        TokenSeq b = random_seq(rng, 7);
        if (a.empty() || b.empty()) continue;
        auto ab = rouge_l(a, b);
        auto ba = rouge_l(b, a);
        CHECK(ab.precision == Catch::Approx(ba.recall));
        CHECK(ab.recall == Catch::Approx(ba.precision));
        CHECK(ab.f1 == Catch::Approx(ba.f1));
    }
}

// ---------------------------------------------------------------------------
// BERTScore
// ---------------------------------------------------------------------------

TEST_CASE("bertscore of identical text is one under the hash embedder") {
    HashEmbedBackend embed(64, 0);
    auto t = bertscore("axial length 23.5 mm with clear lens",
                       "axial length 23.5 mm with clear lens", embed);
    CHECK(t.precision == Catch::Approx(1.0).margin(1e-9));
    CHECK(t.recall == Catch::Approx(1.0).margin(1e-9));
    CHECK(t.f1 == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("bertscore rewards partial token overlap") {
    HashEmbedBackend embed(64, 0);
    auto same = bertscore("macular edema present", "macular edema present", embed);
    auto part = bertscore("macular edema present", "macular edema absent", embed);
    auto far = bertscore("macular edema present", "totally unrelated words", embed);
    CHECK(same.f1 > part.f1);
    CHECK(part.f1 > far.f1);
}

TEST_CASE("bertscore swap symmetry and bounds") {
    HashEmbedBackend embed(32, 9);
    auto ab = bertscore("alpha beta gamma", "beta delta", embed);
    auto ba = bertscore("beta delta", "alpha beta gamma", embed);
    CHECK(ab.precision == Catch::Approx(ba.recall));
    CHECK(ab.recall == Catch::Approx(ba.precision));
    CHECK(ab.precision <= 1.0 + 1e-9);
    CHECK(ab.recall <= 1.0 + 1e-9);
}

TEST_CASE("bertscore rejects empty sides") {
    HashEmbedBackend embed(16, 0);
    CHECK_THROWS_AS(bertscore("", "text", embed), PreconditionError);
    CHECK_THROWS_AS(bertscore("text", "  ", embed), PreconditionError);
}

TEST_CASE("bertscore idf weighting shifts weight toward rare tokens") {
    HashEmbedBackend embed(64, 0);
    std::map<std::string, double> idf{{"the", 0.01}, {"keratoconus", 5.0}};
    BertScoreOptions opts;
    opts.idf_weights = &idf;
    // Hypothesis matches only the stopword; weighting should pull P down
    // relative to the unweighted score.
    auto plain = bertscore("the keratoconus", "the cornea", embed);
    auto weighted = bertscore("the keratoconus", "the cornea", embed, opts);
    CHECK(weighted.precision < plain.precision);
}

TEST_CASE("bertscore baseline rescaling is affine") {
    HashEmbedBackend embed(64, 0);
    BertScoreOptions opts;
    opts.rescale_baseline = 0.5;
    auto plain = bertscore("macular edema", "macular hole", embed);
    auto scaled = bertscore("macular edema", "macular hole", embed, opts);
    CHECK(scaled.precision ==
          Catch::Approx((plain.precision - 0.5) / 0.5).margin(1e-12));
    CHECK(scaled.recall == Catch::Approx((plain.recall - 0.5) / 0.5).margin(1e-12));
}

// ---------------------------------------------------------------------------
// Keypoint scores
// ---------------------------------------------------------------------------

TEST_CASE("keypoint triple on the frozen half-overlap fixture") {
    TermLexicon lex({"alpha beta", "gamma delta", "epsilon"});
    auto t = keypoint_scores("alpha beta and epsilon", "gamma delta plus epsilon", lex);
    CHECK(t.precision == Catch::Approx(0.5));
    CHECK(t.recall == Catch::Approx(0.5));
    CHECK(t.f1 == Catch::Approx(0.5));
}

TEST_CASE("keypoint scores degrade to zero without shared terms") {
    TermLexicon lex({"alpha", "beta"});
    auto t = keypoint_scores("alpha", "beta", lex);
    CHECK(t.precision == 0.0);
    CHECK(t.recall == 0.0);
    CHECK(t.f1 == 0.0);
}

TEST_CASE("keypoint scores with empty term sets define zero not NaN") {
    TermLexicon lex({"keratoconus"});
    auto t = keypoint_scores("nothing here", "nothing there", lex);
    CHECK(t.precision == 0.0);
    CHECK(t.recall == 0.0);
    CHECK(std::isfinite(t.f1));
}

TEST_CASE("keypoint recall never drops when the hypothesis gains a reference term") {
    TermLexicon lex({"alpha beta", "gamma delta", "epsilon", "zeta"});
    std::string ref = "alpha beta with gamma delta and epsilon";
    std::mt19937 rng(811);
    const std::vector<std::string> pool{"alpha beta", "gamma delta", "epsilon", "zeta"};
    for (int iter = 0; iter < 100; ++iter) {
        std::string hyp = "report mentions";
        double last = 0.0;
        for (int step = 0; step < 4; ++step) {
            hyp += " " + pool[rng() % pool.size()];
            double r = keypoint_scores(hyp, ref, lex).recall;
            CHECK(r >= last - 1e-12);
            last = r;
        }
    }
}

TEST_CASE("keypoint scoring requires a non-empty lexicon") {
    TermLexicon empty;
    CHECK_THROWS_AS(keypoint_scores("a", "b", empty), PreconditionError);
}

// ---------------------------------------------------------------------------
// Step segmentation
// ---------------------------------------------------------------------------

TEST_CASE("segment_steps understands the four marker families") {
    auto a = segment_steps("1. first point\n2. second point");
    REQUIRE(a.size() == 2);
    CHECK(a[0] == "first point");

    auto b = segment_steps("Step 1: alpha\nstep 2. beta");
    REQUIRE(b.size() == 2);
    CHECK(b[1] == "beta");

    auto c = segment_steps("① 首先\n② 其次");
    REQUIRE(c.size() == 2);
    CHECK(c[0] == "首先");

    auto d = segment_steps("第1步：检查\n第2步：评估");
    REQUIRE(d.size() == 2);
    CHECK(d[1] == "评估");
}

TEST_CASE("decimal numbers at line start are not step markers") {
    auto steps = segment_steps("23.5 mm axial length\n44.0 D keratometry");
    // no markers and no blank line: whole text is one step
    REQUIRE(steps.size() == 1);
}

TEST_CASE("continuation lines attach to the preceding step") {
    auto steps = segment_steps("1. first line\nwraps here\n2. second");
    REQUIRE(steps.size() == 2);
    CHECK(steps[0] == "first line\nwraps here");
}

TEST_CASE("segment_steps falls back to paragraphs then whole text") {
    auto paras = segment_steps("first thought\n\nsecond thought");
    REQUIRE(paras.size() == 2);

    auto whole = segment_steps("just one unstructured remark");
    REQUIRE(whole.size() == 1);
    CHECK(whole[0] == "just one unstructured remark");

    CHECK(segment_steps("   \n\n  ").empty());
}

TEST_CASE("segment_steps_indexed preserves written indices") {
    auto steps = segment_steps_indexed("3. gamma\n5. epsilon");
    REQUIRE(steps.size() == 2);
    CHECK(steps[0].marker_index == 3);
    CHECK(steps[1].marker_index == 5);

    auto paras = segment_steps_indexed("alpha\n\nbeta");
    REQUIRE(paras.size() == 2);
    CHECK_FALSE(paras[0].marker_index.has_value());
}

TEST_CASE("segmenting a rendered chain returns the original step texts") {
    std::vector<std::string> texts{"[stage one] review the data",
                                   "[stage two] check 23.5 mm value",
                                   "[stage three] conclude"};
    std::string rendered;
    for (size_t i = 0; i < texts.size(); ++i)
        rendered += std::to_string(i + 1) + ". " + texts[i] + "\n";
    auto steps = segment_steps(rendered);
    REQUIRE(steps.size() == texts.size());
    for (size_t i = 0; i < texts.size(); ++i) CHECK(steps[i] == texts[i]);
}

// ---------------------------------------------------------------------------
// Stepwise entity scores
// ---------------------------------------------------------------------------

TEST_CASE("entity_step_scores micro-average over aligned steps") {
    TermLexicon lex({"macular edema", "axial length", "keratoconus"});
    std::string hyp = "1. macular edema present\n2. axial length long";
    std::string ref = "1. macular edema noted\n2. keratoconus suspected";
    auto t = entity_step_scores(hyp, ref, lex);
    CHECK(t.precision == Catch::Approx(0.5));
    CHECK(t.recall == Catch::Approx(0.5));
    CHECK(t.f1 == Catch::Approx(0.5));
}

TEST_CASE("trailing hypothesis steps count against precision only") {
    TermLexicon lex({"macular edema", "axial length", "keratoconus"});
    std::string hyp =
        "1. macular edema present\n2. axial length long\n3. keratoconus extra";
    std::string ref = "1. macular edema noted\n2. keratoconus suspected";
    auto t = entity_step_scores(hyp, ref, lex);
    CHECK(t.precision == Catch::Approx(1.0 / 3.0));
    CHECK(t.recall == Catch::Approx(0.5));
}

TEST_CASE("trailing reference steps count against recall only") {
    TermLexicon lex({"macular edema", "axial length"});
    std::string hyp = "1. macular edema present";
    std::string ref = "1. macular edema noted\n2. axial length check";
    auto t = entity_step_scores(hyp, ref, lex);
    CHECK(t.precision == Catch::Approx(1.0));
    CHECK(t.recall == Catch::Approx(0.5));
}

TEST_CASE("entity scores on entity-free chains are zero and finite") {
    TermLexicon lex({"keratoconus"});
    auto t = entity_step_scores("1. nothing\n2. still nothing",
                                "1. nada\n2. more nada", lex);
    CHECK(t.precision == 0.0);
    CHECK(t.recall == 0.0);
    CHECK(std::isfinite(t.f1));
}

TEST_CASE("misordered entities are penalized by step alignment") {
    TermLexicon lex({"macular edema", "axial length"});
    std::string ref = "1. macular edema\n2. axial length";
    std::string swapped = "1. axial length\n2. macular edema";
    auto t = entity_step_scores(swapped, ref, lex);
    CHECK(t.f1 == 0.0);  // same entities, wrong steps
}

// ---------------------------------------------------------------------------
// NLI chain consistency
// ---------------------------------------------------------------------------

TEST_CASE("nli_consistency over an entailment-friendly chain") {
    RuleNliBackend nli;
    // Each step's tokens are a subset of its predecessor's.
    std::string cot = "1. the lens is opaque today\n2. the lens is opaque\n3. lens opaque";
    auto c = nli_consistency(cot, nli);
    REQUIRE(c.has_value());
    CHECK(*c == Catch::Approx(1.0));
}

TEST_CASE("nli_consistency counts only entailed consecutive pairs") {
    RuleNliBackend nli;
    std::string cot = "1. the lens is opaque\n2. lens opaque\n3. retina attached fine";
    auto c = nli_consistency(cot, nli);
    REQUIRE(c.has_value());
    CHECK(*c == Catch::Approx(0.5));
}

TEST_CASE("nli_consistency is undefined below two steps") {
    RuleNliBackend nli;
    CHECK_FALSE(nli_consistency("1. only step", nli).has_value());
    CHECK_FALSE(nli_consistency("", nli).has_value());
}

TEST_CASE("contradictory neighbours score zero consistency") {
    RuleNliBackend nli;
    std::string cot = "1. the chamber is deep\n2. the chamber is shallow";
    auto c = nli_consistency(cot, nli);
    REQUIRE(c.has_value());
    CHECK(*c == 0.0);
}

// ---------------------------------------------------------------------------
// ScoreTriple
// ---------------------------------------------------------------------------

TEST_CASE("from_pr computes the harmonic mean and guards zero division") {
    auto t = ScoreTriple::from_pr(0.5, 0.5);
    CHECK(t.f1 == Catch::Approx(0.5));
    auto z = ScoreTriple::from_pr(0.0, 0.0);
    CHECK(z.f1 == 0.0);
    auto skew = ScoreTriple::from_pr(1.0, 1.0 / 3.0);
    CHECK(skew.f1 == Catch::Approx(0.5));
}

TEST_CASE("f1 lies between min and max of precision and recall") {
    std::mt19937 rng(99);
    for (int iter = 0; iter < 300; ++iter) {
        double p = static_cast<double>(rng() % 1000) / 999.0;
        double r = static_cast<double>(rng() % 1000) / 999.0;
        auto t = ScoreTriple::from_pr(p, r);
        CHECK(t.f1 >= 0.0);
        CHECK(t.f1 <= std::max(p, r) + 1e-12);
        if (p > 0 && r > 0) CHECK(t.f1 >= std::min(p, r) - 1e-12);
    }
}
