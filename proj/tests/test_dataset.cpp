#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "csp/dataset.hpp"
#include "csp/mocks.hpp"

using namespace csp;
namespace fs = std::filesystem;

namespace {

StructuredFinding text_finding(const std::string& name, const std::string& value,
                               bool abnormal, const std::string& agent) {
    StructuredFinding f;
    f.field_name = name;
    f.value_text = value;
    f.abnormal = abnormal;
    f.provenance = {agent + "_report", agent};
    return f;
}

StructuredFinding num_finding(const std::string& name, double v,
                              const std::string& value_text,
                              const std::string& units,
                              const std::string& agent) {
    StructuredFinding f;
    f.field_name = name;
    f.value_text = value_text;
    f.number = v;
    f.units = units;
    f.provenance = {agent + "_report", agent};
    return f;
}

PatientDescription make_description() {
    PatientDescription d;
    d.case_id = "P001-OD";
    d.patient_ref = "P001";
    d.laterality = Laterality::OD;
    d.demographics.age = 67;
    d.demographics.sex = "female";
    d.biometrics.AL = 23.52;
    d.biometrics.ACD = 3.12;
    d.biometrics.K1 = 43.25;
    d.biometrics.K2 = 44.75;
    d.biometrics.LT = 4.41;
    d.biometrics.CCT = 541.0;
    d.findings = {
        text_finding("lens_status", "dense nuclear cataract", true,
                     "master_biometry"),
        num_finding("corneal_astigmatism", 1.5, "1.50", "D", "pentacam"),
        text_finding("topography_pattern", "regular corneal topography", false,
                     "pentacam"),
    };
    d.missing_reports = {ReportType::oct, ReportType::fundus};
    d.abnormality_status = "abnormal";
    d.narrative = "Overview.";
    return d;
}

std::string words(int n, const std::string& stem = "word") {
    std::ostringstream out;
    for (int i = 0; i < n; ++i) {
        if (i) out << ' ';
        out << stem << i;
    }
    return out.str();
}

fs::path temp_file(const std::string& name) {
    static int counter = 0;
    return fs::temp_directory_path() /
           ("csp_dataset_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++) + "_" + name);
}

}  // namespace

// ---------------------------------------------------------------------------
// Stage catalogue
// ---------------------------------------------------------------------------

TEST_CASE("the default stage catalogue has eight stages, six mandatory") {
    auto c = StageCatalogue::defaults();
    CHECK_NOTHROW(c.validate());
    CHECK(c.stages.size() == 8);
    CHECK(c.mandatory.size() == 6);
    CHECK(c.chain_length() == 8);
    for (const auto& m : c.mandatory) CHECK(c.allows(m));
    CHECK(c.allows("measurement consistency check"));
    CHECK(c.allows("decision synthesis"));
    CHECK_FALSE(c.allows("telemetry"));
}

TEST_CASE("stage catalogue validation rejects bad configurations") {
    auto c = StageCatalogue::defaults();
    c.stages.push_back(c.stages.front());
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = StageCatalogue::defaults();
    c.mandatory.push_back("unlisted stage");
    CHECK_THROWS_AS(c.validate(), ConfigError);

    StageCatalogue empty;
    CHECK_THROWS_AS(empty.validate(), ConfigError);
}

// ---------------------------------------------------------------------------
// Questions
// ---------------------------------------------------------------------------

TEST_CASE("question validation enforces the interrogative contract") {
    CHECK(validate_question_text(
              "A 67-year-old female presents with dense nuclear cataract;"
              " which lens strategy and approach fit best?")
              .empty());

    CHECK_FALSE(validate_question_text("").empty());
    CHECK_FALSE(validate_question_text(
                    "A long and detailed statement about the patient case "
                    "that simply never asks anything.")
                    .empty());
    CHECK_FALSE(validate_question_text("Why?").empty());  // too short

    auto banned =
        validate_question_text("Should we implant a toric IOL in this eye now?");
    REQUIRE_FALSE(banned.empty());
    CHECK(banned[0].find("banned treatment verb") != std::string::npos);

    // Stems catch inflections.
    CHECK_FALSE(validate_question_text(
                    "Given these findings, is scheduling the operation for "
                    "next week with prescribed drops appropriate?")
                    .empty());
}

TEST_CASE("highlighted findings map prose mentions to field names") {
    auto d = make_description();
    auto fields = highlighted_fields(
        "The axial length measures 23.52 mm and the record shows dense"
        " nuclear cataract with corneal astigmatism 1.50 D. The CCT value"
        " is unremarkable. What next?",
        d);
    std::set<std::string> set(fields.begin(), fields.end());
    CHECK(set.count("AL"));
    CHECK(set.count("lens_status"));
    CHECK(set.count("corneal_astigmatism"));
    CHECK(set.count("CCT"));
    CHECK_FALSE(set.count("cmt"));  // not part of this description

    // Mentions of fields the description lacks do not count.
    PatientDescription bare;
    bare.case_id = "X";
    CHECK(highlighted_fields("axial length?", bare).empty());
}

TEST_CASE("generate_question produces a valid highlighted question offline") {
    auto d = make_description();
    PipelineChatMock chat;
    DiagnosticQuestion q =
        generate_question(d, chat, PromptSet::defaults());
    CHECK(q.case_id == "P001-OD");
    CHECK(validate_question_text(q.text).empty());
    CHECK(q.text.find("axial length") != std::string::npos);
    std::set<std::string> set(q.highlighted_findings.begin(),
                              q.highlighted_findings.end());
    CHECK(set.count("AL"));
    CHECK(set.count("lens_status"));
}

TEST_CASE("invalid questions are retried with feedback, then fail") {
    auto d = make_description();
    ScriptedChat chat({"Should we implant a toric IOL in this eye today?",
                       "A 67-year-old female presents with dense nuclear"
                       " cataract; which lens strategy fits best?"});
    DiagnosticQuestion q = generate_question(d, chat, PromptSet::defaults());
    CHECK(chat.prompts().size() == 2);
    CHECK(chat.prompts()[1].find(markers::kViolationsBegin) != std::string::npos);
    CHECK(chat.prompts()[1].find("banned treatment verb") != std::string::npos);
    CHECK(validate_question_text(q.text).empty());

    ScriptedChat hopeless({"not a question at all, ever"});
    try {
        generate_question(d, hopeless, PromptSet::defaults(), {}, 1);
        FAIL("expected GenerationError");
    } catch (const GenerationError& e) {
        CHECK_FALSE(e.problems.empty());
        CHECK(hopeless.prompts().size() == 2);  // budget = retries + 1
    }
}

// ---------------------------------------------------------------------------
// Reasoning chains
// ---------------------------------------------------------------------------

TEST_CASE("reasoning chains round-trip through serialize and parse") {
    ReasoningChain chain;
    chain.case_id = "P001-OD";
    chain.steps = {{1, "biometric parameter analysis", "AL 23.52 mm on record."},
                   {2, "decision synthesis", "Plan follows."}};
    std::string text = chain.serialize();
    CHECK(text ==
          "1. [biometric parameter analysis] AL 23.52 mm on record.\n"
          "2. [decision synthesis] Plan follows.");
    ReasoningChain back = ReasoningChain::parse(text);
    REQUIRE(back.steps.size() == 2);
    CHECK(back.steps[0].index == 1);
    CHECK(back.steps[0].stage == "biometric parameter analysis");
    CHECK(back.steps[0].text == "AL 23.52 mm on record.");
    CHECK(back.serialize() == text);
}

TEST_CASE("malformed chain lines are reported, not silently dropped") {
    std::vector<std::string> problems;
    auto chain = ReasoningChain::parse(
        "1. [abnormal findings] Something.\nno numbering here\n", &problems);
    CHECK(chain.steps.size() == 1);
    REQUIRE(problems.size() == 1);
    CHECK(problems[0].find("malformed step line") != std::string::npos);
}

TEST_CASE("chain validation enforces length, order, tags, and coverage") {
    auto d = make_description();
    auto catalogue = StageCatalogue::defaults();

    ReasoningChain chain;
    chain.case_id = d.case_id;
    for (size_t i = 0; i < catalogue.stages.size(); ++i)
        chain.steps.push_back({static_cast<int>(i) + 1, catalogue.stages[i],
                               "Step body without numbers."});
    CHECK(validate_chain(chain, catalogue, d).empty());

    SECTION("seven steps is a length and coverage problem") {
        chain.steps.pop_back();
        chain.steps[4] = {5, "decision synthesis", "Replaced."};
        auto problems = validate_chain(chain, catalogue, d);
        bool length = false, missing = false;
        for (const auto& p : problems) {
            if (p.find("expected 8 steps") != std::string::npos) length = true;
            if (p.find("missing mandatory stage 'surgical risk assessment'") !=
                std::string::npos)
                missing = true;
        }
        CHECK(length);
        CHECK(missing);
    }
    SECTION("indices must run consecutively from 1") {
        chain.steps[3].index = 7;
        auto problems = validate_chain(chain, catalogue, d);
        REQUIRE_FALSE(problems.empty());
        CHECK(problems[0].find("carries index 7") != std::string::npos);
    }
    SECTION("stage tags outside the catalogue are rejected") {
        chain.steps[2].stage = "vibe check";
        auto problems = validate_chain(chain, catalogue, d);
        REQUIRE_FALSE(problems.empty());
        CHECK(problems[0].find("unknown stage tag") != std::string::npos);
    }
    SECTION("empty step text is rejected") {
        chain.steps[5].text = "  ";
        CHECK_FALSE(validate_chain(chain, catalogue, d).empty());
    }
}

TEST_CASE("numeric traceability catches values foreign to the description") {
    auto d = make_description();
    auto catalogue = StageCatalogue::defaults();
    ReasoningChain chain;
    chain.case_id = d.case_id;
    for (size_t i = 0; i < catalogue.stages.size(); ++i)
        chain.steps.push_back(
            {static_cast<int>(i) + 1, catalogue.stages[i], "No numbers."});

    chain.steps[0].text = "AL 23.52 mm, age 67, astigmatism 1.50 D.";
    CHECK(validate_chain(chain, catalogue, d).empty());

    chain.steps[0].text = "AL = 26.0 mm drives the plan.";
    auto problems = validate_chain(chain, catalogue, d);
    REQUIRE(problems.size() == 1);
    CHECK(problems[0].find("quotes 26") != std::string::npos);
    CHECK(problems[0].find("matches no finding") != std::string::npos);
}

TEST_CASE("annotate_cot yields a valid eight-step chain offline") {
    auto d = make_description();
    PipelineChatMock chat;
    auto prompts = PromptSet::defaults();
    DiagnosticQuestion q = generate_question(d, chat, prompts);
    ReasoningChain chain = annotate_cot(q, d, chat, prompts);
    CHECK(chain.case_id == "P001-OD");
    CHECK(chain.steps.size() == 8);
    CHECK(validate_chain(chain, StageCatalogue::defaults(), d).empty());

    DiagnosticQuestion foreign = q;
    foreign.case_id = "P999";
    CHECK_THROWS_AS(annotate_cot(foreign, d, chat, prompts), PreconditionError);
}

TEST_CASE("persistently invalid chains exhaust the retry budget") {
    auto d = make_description();
    DiagnosticQuestion q;
    q.case_id = d.case_id;
    q.text = "Which lens strategy and surgical approach fit this eye best?";
    ScriptedChat chat({"1. [biometric parameter analysis] Only one step."});
    try {
        annotate_cot(q, d, chat, PromptSet::defaults(),
                     StageCatalogue::defaults(), {}, 1);
        FAIL("expected GenerationError");
    } catch (const GenerationError& e) {
        CHECK(chat.prompts().size() == 2);
        bool mentions_length = false;
        for (const auto& p : e.problems)
            if (p.find("expected 8 steps") != std::string::npos)
                mentions_length = true;
        CHECK(mentions_length);
    }
    // The retry prompt carries the problem list.
    CHECK(chat.prompts()[1].find(markers::kViolationsBegin) != std::string::npos);
}

// ---------------------------------------------------------------------------
// Recommendations
// ---------------------------------------------------------------------------

TEST_CASE("recommendations parse into the five mandated sections") {
    const std::string text =
        "Key findings: dense nuclear cataract; axial length 23.52 mm.\n"
        "IOL selection: Toric monofocal intraocular lens, 22.0 D, derived"
        " from axial length 23.52 mm.\n"
        "Surgical technique: Phacoemulsification under topical anesthesia.\n"
        "Risk alerts: routine cataract surgery risks apply; corneal edema"
        " possible.\n"
        "Postoperative plan: Topical antibiotic and steroid drops.";
    std::vector<std::string> problems;
    Recommendation rec = parse_recommendation(text, &problems);
    CHECK(problems.empty());
    CHECK(rec.key_findings.find("dense nuclear cataract") != std::string::npos);
    CHECK(rec.iol_type == "Toric monofocal intraocular lens");
    REQUIRE(rec.iol_power_d.has_value());
    CHECK(*rec.iol_power_d == Catch::Approx(22.0));
    CHECK(rec.surgical_technique ==
          "Phacoemulsification under topical anesthesia.");
    REQUIRE(rec.risk_alerts.size() == 2);
    CHECK(rec.risk_alerts[1] == "corneal edema possible.");
    CHECK(rec.postoperative_plan == "Topical antibiotic and steroid drops.");

    // Serialization regenerates the same five lines.
    std::vector<std::string> again;
    Recommendation back = parse_recommendation(rec.serialize(), &again);
    CHECK(again.empty());
    CHECK(back.serialize() == rec.serialize());
}

TEST_CASE("missing sections and out-of-range powers are reported") {
    std::vector<std::string> problems;
    parse_recommendation("Key findings: cataract.\nIOL selection: 22.0 D lens.",
                         &problems);
    CHECK(problems.size() == 3);  // technique, risks, postoperative plan

    problems.clear();
    parse_recommendation(
        "Key findings: x.\nIOL selection: lens, 45.0 D.\nSurgical technique:"
        " phaco.\nRisk alerts: none noted.\nPostoperative plan: drops.",
        &problems);
    REQUIRE(problems.size() == 1);
    CHECK(problems[0].find("45.0 D outside 0-40 D") != std::string::npos);

    // A deferred power (no numeric value) is valid.
    problems.clear();
    Recommendation rec = parse_recommendation(
        "Key findings: x.\nIOL selection: Power calculation deferred: axial"
        " length unavailable.\nSurgical technique: phaco.\nRisk alerts: n.\n"
        "Postoperative plan: drops.",
        &problems);
    CHECK(problems.empty());
    CHECK_FALSE(rec.iol_power_d.has_value());
}

TEST_CASE("surgical methods classify into the four categories") {
    CHECK(classify_surgical_method("Phacoemulsification under topical"
                                   " anesthesia.") == "phacoemulsification");
    CHECK(classify_surgical_method(
              "Phacoemulsification with capsular tension ring implantation.") ==
          "ctr_implantation");
    CHECK(classify_surgical_method("Extracapsular extraction.") == "other");
    CHECK(classify_surgical_method("  ") == "unspecified");
}

TEST_CASE("recommendation synthesis checks physician alignment verbatim") {
    auto d = make_description();
    PipelineChatMock chat;
    auto prompts = PromptSet::defaults();
    DiagnosticQuestion q = generate_question(d, chat, prompts);
    ReasoningChain chain = annotate_cot(q, d, chat, prompts);

    Recommendation aligned = synthesize_recommendation(
        q, chain, d, chat, prompts, "Phacoemulsification");
    CHECK(aligned.case_id == "P001-OD");
    CHECK(aligned.physician_aligned);
    CHECK(aligned.physician_decision == "Phacoemulsification");
    REQUIRE(aligned.iol_power_d.has_value());
    CHECK(*aligned.iol_power_d == Catch::Approx(22.0));  // 21 + 2*(24-23.52)
    CHECK(aligned.iol_type.find("Toric") != std::string::npos);  // astig 1.50

    Recommendation misaligned = synthesize_recommendation(
        q, chain, d, chat, prompts, "Extracapsular cataract extraction");
    CHECK_FALSE(misaligned.physician_aligned);  // flagged...
    CHECK(misaligned.surgical_technique.find("Phacoemulsification") !=
          std::string::npos);  // ...but kept intact

    Recommendation unchecked =
        synthesize_recommendation(q, chain, d, chat, prompts);
    CHECK(unchecked.physician_aligned);  // no reference decision given
}

TEST_CASE("persistent missing sections exhaust the synthesis budget") {
    auto d = make_description();
    DiagnosticQuestion q;
    q.case_id = d.case_id;
    q.text = "Which lens strategy fits best for this cataract case?";
    ReasoningChain chain;
    chain.case_id = d.case_id;
    auto catalogue = StageCatalogue::defaults();
    for (size_t i = 0; i < catalogue.stages.size(); ++i)
        chain.steps.push_back(
            {static_cast<int>(i) + 1, catalogue.stages[i], "Body."});

    ScriptedChat chat({"Key findings: cataract.\nIOL selection: lens."});
    try {
        synthesize_recommendation(q, chain, d, chat, PromptSet::defaults(), "",
                                  {}, 1);
        FAIL("expected GenerationError");
    } catch (const GenerationError& e) {
        CHECK(chat.prompts().size() == 2);
        bool missing_plan = false;
        for (const auto& p : e.problems)
            if (p.find("Postoperative plan") != std::string::npos)
                missing_plan = true;
        CHECK(missing_plan);
    }
}

// ---------------------------------------------------------------------------
// Case records
// ---------------------------------------------------------------------------

TEST_CASE("build_case_record runs all three stages and serializes cleanly") {
    auto d = make_description();
    PipelineChatMock chat;
    CaseRecord record = build_case_record(d, chat, PromptSet::defaults());
    CHECK(record.case_id == "P001-OD");
    CHECK(validate_question_text(record.question.text).empty());
    CHECK(record.chain.steps.size() == 8);
    CHECK_FALSE(record.recommendation.surgical_technique.empty());

    nlohmann::json j = record.to_json();
    CHECK(j.at("case_id") == "P001-OD");
    CHECK(j.at("meta").at("age") == 67);
    CHECK(j.at("meta").at("sex") == "female");
    CHECK(j.at("meta").at("abnormality") == "abnormal");
    CHECK(j.at("meta").at("surgical_method") == "phacoemulsification");
    for (const char* part : {"question", "cot", "response"}) {
        CHECK(j.at("meta").at("text_lengths").at(part).at("tokens").get<int>() > 0);
        CHECK(j.at("meta").at("text_lengths").at(part).at("chars").get<int>() > 0);
    }
    // The stored CoT text parses back into the same chain.
    ReasoningChain parsed =
        ReasoningChain::parse(j.at("complex_cot").get<std::string>());
    CHECK(parsed.serialize() == record.chain.serialize());
}

TEST_CASE("case record stores round-trip through JSONL sorted by case id") {
    auto d = make_description();
    PipelineChatMock chat;
    CaseRecord r1 = build_case_record(d, chat, PromptSet::defaults());

    auto d2 = make_description();
    d2.case_id = "P000-OS";
    CaseRecord r2 = build_case_record(d2, chat, PromptSet::defaults());

    fs::path path = temp_file("records.jsonl");
    CHECK(write_case_records({r1, r2}, path) == 2);

    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    std::string content = ss.str();
    REQUIRE_FALSE(content.empty());
    CHECK(content.back() == '\n');

    auto records = read_case_records(path);
    REQUIRE(records.size() == 2);
    CHECK(records[0].case_id == "P000-OS");  // sorted
    CHECK(records[1].case_id == "P001-OD");
    CHECK(records[1].question.text == r1.question.text);
    CHECK(records[1].chain.serialize() == r1.chain.serialize());
    CHECK(records[1].recommendation.serialize() ==
          r1.recommendation.serialize());
    CHECK(records[1].description.demographics.sex == "female");
    fs::remove(path);

    CaseRecord dup = r1;
    CHECK_THROWS_AS(write_case_records({r1, dup}, temp_file("dup.jsonl")),
                    IntegrityError);
}

// ---------------------------------------------------------------------------
// SFT emission
// ---------------------------------------------------------------------------

TEST_CASE("instruction preambles exist per pairing and language") {
    std::set<std::string> seen;
    for (auto pairing : {SftPairing::question_cot, SftPairing::question_response})
        for (const std::string lang : {"en", "zh"}) {
            std::string text = sft_instruction(pairing, lang);
            CHECK_FALSE(text.empty());
            seen.insert(text);
        }
    CHECK(seen.size() == 4);  // all four variants distinct
    CHECK_FALSE(knowledge_instruction("en").empty());
    CHECK_FALSE(knowledge_instruction("zh").empty());
    CHECK_THROWS_AS(sft_instruction(SftPairing::question_cot, "fr"), ConfigError);
    CHECK_THROWS_AS(knowledge_instruction("de"), ConfigError);
}

TEST_CASE("emit_sft writes a byte-stable Alpaca array that round-trips") {
    auto d = make_description();
    PipelineChatMock chat;
    CaseRecord r1 = build_case_record(d, chat, PromptSet::defaults());
    auto d2 = make_description();
    d2.case_id = "P000-OS";
    CaseRecord r2 = build_case_record(d2, chat, PromptSet::defaults());

    fs::path path = temp_file("sft_cot.json");
    EmitResult res = emit_sft({r1, r2}, SftPairing::question_cot, path, "en");
    CHECK(res.written == 2);
    CHECK(res.skipped.empty());

    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    std::string bytes = ss.str();
    CHECK(bytes.front() == '[');
    CHECK(bytes.back() == '\n');

    auto samples = parse_sft_json(bytes);
    REQUIRE(samples.size() == 2);
    CHECK(samples[0].instruction == sft_instruction(SftPairing::question_cot, "en"));
    CHECK(samples[0].input == r2.question.text);  // sorted: P000 first
    CHECK(samples[0].output == r2.complex_cot());
    CHECK(samples[1].input == r1.question.text);
    CHECK(samples[1].output == r1.complex_cot());

    // Round trip: parse -> re-render is byte-identical.
    CHECK(render_sft_json(samples) == bytes);

    // Emitting again is byte-identical too.
    fs::path path2 = temp_file("sft_cot_again.json");
    emit_sft({r1, r2}, SftPairing::question_cot, path2, "en");
    std::ifstream in2(path2, std::ios::binary);
    std::stringstream ss2;
    ss2 << in2.rdbuf();
    CHECK(ss2.str() == bytes);

    // Every emitted CoT output parses back into a chain satisfying the
    // invariants.
    for (const auto& s : samples) {
        ReasoningChain chain = ReasoningChain::parse(s.output);
        chain.case_id = "x";
        PatientDescription loose = d;  // traceability vs the source case
        loose.case_id = "x";
        CHECK(validate_chain(chain, StageCatalogue::defaults(), loose).empty());
    }
    fs::remove(path);
    fs::remove(path2);
}

TEST_CASE("emit_sft skips records missing the target and reports them") {
    auto d = make_description();
    PipelineChatMock chat;
    CaseRecord full = build_case_record(d, chat, PromptSet::defaults());
    CaseRecord hollow = full;
    hollow.case_id = "P777-OD";
    hollow.recommendation = Recommendation{};  // no response text sections

    fs::path path = temp_file("sft_resp.json");
    EmitResult res =
        emit_sft({full, hollow}, SftPairing::question_response, path, "en");
    CHECK(res.written == 2);  // serialize() emits headers even when empty
    fs::remove(path);

    // A record with no question text is genuinely skipped.
    CaseRecord no_question = full;
    no_question.case_id = "P888-OD";
    no_question.question.text = "";
    fs::path path2 = temp_file("sft_resp2.json");
    EmitResult res2 =
        emit_sft({full, no_question}, SftPairing::question_response, path2, "en");
    CHECK(res2.written == 1);
    REQUIRE(res2.skipped.size() == 1);
    CHECK(res2.skipped[0] == "P888-OD");
    fs::remove(path2);

    CHECK_THROWS_AS(
        emit_sft({no_question}, SftPairing::question_response,
                 temp_file("sft_none.json"), "en"),
        Error);
}

TEST_CASE("sft parsing rejects arrays with wrong shapes") {
    CHECK_THROWS_AS(parse_sft_json("{}"), Error);
    CHECK_THROWS_AS(parse_sft_json("not json"), Error);
    CHECK_THROWS_AS(
        parse_sft_json(R"([{"instruction":"i","input":"q"}])"), Error);
    CHECK_THROWS_AS(
        parse_sft_json(
            R"([{"instruction":"i","input":"q","output":"o","extra":1}])"),
        Error);
    CHECK_THROWS_AS(
        parse_sft_json(R"([{"instruction":"","input":"q","output":"o"}])"),
        PreconditionError);
    CHECK(parse_sft_json(R"([{"instruction":"i","input":"","output":"o"}])")
              .size() == 1);  // empty input is allowed
}

// ---------------------------------------------------------------------------
// Knowledge QA
// ---------------------------------------------------------------------------

TEST_CASE("a 12000-word document chunks into the 4000-6000 word band") {
    std::ostringstream doc;
    for (int p = 0; p < 30; ++p) doc << words(400, "w" + std::to_string(p)) << "\n\n";
    ChunkResult result = chunk_document(doc.str(), 5000);
    CHECK(result.warnings.empty());
    REQUIRE(result.chunks.size() >= 2);
    REQUIRE(result.chunks.size() <= 3);
    for (const auto& chunk : result.chunks) {
        size_t w = datasetdetail::word_count(chunk);
        CHECK(w >= 4000);
        CHECK(w <= 6000);
    }
}

TEST_CASE("a single 15000-word paragraph hard-splits into three chunks") {
    ChunkResult result = chunk_document(words(15000), 5000);
    REQUIRE(result.chunks.size() == 3);
    REQUIRE_FALSE(result.warnings.empty());
    CHECK(result.warnings[0].find("hard-split") != std::string::npos);
    for (const auto& chunk : result.chunks)
        CHECK(datasetdetail::word_count(chunk) == 5000);
}

TEST_CASE("small documents yield one chunk; empty documents throw") {
    ChunkResult result = chunk_document("One modest paragraph of text.", 5000);
    CHECK(result.chunks.size() == 1);
    CHECK(result.warnings.empty());
    CHECK_THROWS_AS(chunk_document("   \n\n  ", 5000), PreconditionError);
    CHECK_THROWS_AS(chunk_document("text", 0), PreconditionError);
}

TEST_CASE("chunking preserves paragraph text and order") {
    std::string doc = words(3000, "a") + "\n\n" + words(3000, "b") + "\n\n" +
                      words(3000, "c") + "\n\n" + words(3000, "d");
    ChunkResult result = chunk_document(doc, 5000);
    std::string joined;
    for (size_t i = 0; i < result.chunks.size(); ++i) {
        if (i) joined += "\n\n";
        joined += result.chunks[i];
    }
    CHECK(joined == doc);
}

TEST_CASE("qa pair parsing handles continuations and incomplete pairs") {
    auto pairs = parse_qa_pairs(
        "Q: What is phacoemulsification?\n"
        "A: An ultrasound-based lens removal\n"
        "technique used in cataract surgery.\n"
        "\n"
        "Q: When is a capsular tension ring\n"
        "indicated?\n"
        "A: With zonular weakness.\n"
        "\n"
        "Q: Dangling question without an answer?\n");
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0].first == "What is phacoemulsification?");
    CHECK(pairs[0].second ==
          "An ultrasound-based lens removal technique used in cataract"
          " surgery.");
    CHECK(pairs[1].first == "When is a capsular tension ring indicated?");
}

TEST_CASE("build_knowledge_qa emits grounded samples in document order") {
    std::ostringstream doc;
    doc << "Phacoemulsification fragments the crystalline lens with"
           " ultrasound energy. The fragments are aspirated through a small"
           " incision.\n\n";
    doc << "Capsular tension rings stabilize the capsular bag when zonular"
           " support is weak. They are placed before lens implantation in"
           " selected cases.\n";
    PipelineChatMock chat;
    KnowledgeQaResult result =
        build_knowledge_qa(doc.str(), chat, PromptSet::defaults(), 5000, "en");
    CHECK(result.chunks_failed == 0);
    REQUIRE(result.samples.size() == 2);  // one chunk, two QA pairs
    for (const auto& s : result.samples) {
        CHECK(s.instruction == knowledge_instruction("en"));
        CHECK_FALSE(s.input.empty());
        CHECK_FALSE(s.output.empty());
    }
    // Answers quote the source verbatim (first and last sentences).
    CHECK(result.samples[0].output.find("Phacoemulsification fragments") !=
          std::string::npos);
    CHECK(result.samples[1].output.find("selected cases") != std::string::npos);
}

TEST_CASE("the enrichment hook appends supplemental text per answer") {
    std::string doc =
        "Toric lenses correct corneal astigmatism. Alignment accuracy"
        " determines the refractive outcome.";
    PipelineChatMock chat;
    int calls = 0;
    EnrichHook hook = [&](const std::string& q, const std::string& a) {
        ++calls;
        CHECK_FALSE(q.empty());
        CHECK_FALSE(a.empty());
        return std::string("Reference: toric alignment notes.");
    };
    KnowledgeQaResult result = build_knowledge_qa(
        doc, chat, PromptSet::defaults(), 5000, "en", {}, hook);
    REQUIRE(result.samples.size() == 2);
    CHECK(calls == 2);
    for (const auto& s : result.samples) {
        CHECK(s.output.find("Reference: toric alignment notes.") !=
              std::string::npos);
    }
}

TEST_CASE("chunks whose generation fails are skipped with a report") {
    std::string doc = "A single factual sentence about cataract grading.";
    ScriptedChat chat({"nothing that looks like a pair"});
    KnowledgeQaResult result =
        build_knowledge_qa(doc, chat, PromptSet::defaults(), 5000, "en");
    CHECK(result.samples.empty());
    CHECK(result.chunks_failed == 1);
    REQUIRE_FALSE(result.warnings.empty());
    CHECK(result.warnings[0].find("no Q/A pairs") != std::string::npos);
}
