#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "csp/ingest.hpp"

using namespace csp;
namespace fs = std::filesystem;

namespace {

struct TempCorpus {
    fs::path root;
    TempCorpus() {
        root = fs::temp_directory_path() /
               ("csp_corpus_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(root);
    }
    ~TempCorpus() { fs::remove_all(root); }
    void add(const std::string& name, const std::string& body) {
        std::ofstream out(root / name, std::ios::binary);
        out << body;
    }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

RawReport make_report(const std::string& patient, ReportType type,
                      Laterality lat = Laterality::OD,
                      const std::string& content = "content") {
    RawReport r;
    r.report_id = patient + "_" + to_string(type) + "_" + to_string(lat);
    r.patient_ref = patient;
    r.report_type = type;
    r.laterality = lat;
    r.content = content;
    return r;
}

AgentRegistry full_registry() {
    return {{ReportType::master_biometry, "agent_master"},
            {ReportType::pentacam, "agent_pentacam"},
            {ReportType::oct, "agent_oct"},
            {ReportType::fundus, "agent_fundus"}};
}

}  // namespace

TEST_CASE("load_reports parses patient refs from the filename convention") {
    TempCorpus corpus;
    corpus.add("P001_oct.txt", "optical coherence tomography\n");
    corpus.add("P001_pentacam.txt", "Pentacam scan\n");
    auto result = load_reports(corpus.root);
    REQUIRE(result.reports.size() == 2);
    CHECK(result.errors.empty());
    CHECK(result.reports[0].patient_ref == "P001");
    CHECK(result.reports[1].patient_ref == "P001");
    CHECK(result.reports[0].report_type == ReportType::unknown);  // pre-classification
    CHECK(result.reports[0].report_id == "P001_oct");
}

TEST_CASE("load_reports is deterministic and skips non-text files") {
    TempCorpus corpus;
    corpus.add("B_master.txt", "IOLMaster biometry\n");
    corpus.add("A_oct.txt", "OCT scan\n");
    corpus.add("ignore.dat", "binary-ish\n");
    auto result = load_reports(corpus.root);
    REQUIRE(result.reports.size() == 2);
    CHECK(result.reports[0].report_id == "A_oct");  // sorted by path
    CHECK(result.reports[1].report_id == "B_master");
}

TEST_CASE("whitespace-only files are rejected per-file while loading continues") {
    TempCorpus corpus;
    corpus.add("P001_oct.txt", "   \n\t  \n");
    corpus.add("P002_oct.txt", "real OCT content\n");
    auto result = load_reports(corpus.root);
    REQUIRE(result.reports.size() == 1);
    CHECK(result.reports[0].patient_ref == "P002");
    REQUIRE(result.errors.size() == 1);
    CHECK(result.errors[0].find("P001_oct") != std::string::npos);
}

TEST_CASE("an empty directory is an empty-corpus error") {
    TempCorpus corpus;
    CHECK_THROWS_AS(load_reports(corpus.root), Error);
    CHECK_THROWS_AS(load_reports(corpus.root / "missing"), ConfigError);
}

TEST_CASE("classification follows the ordered keyword table") {
    CHECK(classify_report("Pentacam examination with corneal topography maps") ==
          ReportType::pentacam);
    CHECK(classify_report("optical coherence tomography of the macula") ==
          ReportType::oct);
    CHECK(classify_report("OCT: central macular thickness 310 um") == ReportType::oct);
    CHECK(classify_report("Fundus photograph, cup to disc ratio 0.4") ==
          ReportType::fundus);
    CHECK(classify_report("IOLMaster 700: axial length 23.52 mm") ==
          ReportType::master_biometry);
    CHECK(classify_report("lorem ipsum dolor sit amet") == ReportType::unknown);
}

TEST_CASE("single-word keywords require whole-token matches") {
    CHECK(classify_report("the doctor was satisfied") == ReportType::unknown);
    CHECK(classify_report("OCT follow-up") == ReportType::oct);
}

TEST_CASE("classification is a pure function of content") {
    std::string text = "Scheimpflug imaging session";
    CHECK(classify_report(text) == classify_report(text));
    CHECK(classify_report(text) == ReportType::pentacam);
    CHECK_THROWS_AS(classify_report("   "), PreconditionError);
}

TEST_CASE("laterality detection reads markers and resists conflicts") {
    CHECK(detect_laterality("OD measurements follow") == Laterality::OD);
    CHECK(detect_laterality("left eye, stable") == Laterality::OS);
    CHECK(detect_laterality("both OD and OS examined") == Laterality::unspecified);
    CHECK(detect_laterality("no eye named") == Laterality::unspecified);
    CHECK(detect_laterality("右眼检查") == Laterality::OD);
    CHECK(detect_laterality("左眼白内障") == Laterality::OS);
}

TEST_CASE("bundles reject foreign reports and duplicate type-laterality pairs") {
    ReportBundle bundle;
    bundle.patient_ref = "P001";
    bundle.reports = {make_report("P001", ReportType::oct, Laterality::OD),
                      make_report("P001", ReportType::oct, Laterality::OS)};
    CHECK_NOTHROW(bundle.validate());  // same type, different eye: allowed

    bundle.reports.push_back(make_report("P001", ReportType::oct, Laterality::OD));
    CHECK_THROWS_AS(bundle.validate(), IntegrityError);

    bundle.reports.pop_back();
    bundle.reports.push_back(make_report("P999", ReportType::fundus));
    CHECK_THROWS_AS(bundle.validate(), IntegrityError);
}

TEST_CASE("missing_types is the set difference against the four key types") {
    ReportBundle bundle;
    bundle.patient_ref = "P001";
    bundle.reports = {make_report("P001", ReportType::oct),
                      make_report("P001", ReportType::fundus)};
    auto missing = bundle.missing_types();
    CHECK(missing ==
          std::set<ReportType>{ReportType::master_biometry, ReportType::pentacam});
}

TEST_CASE("routing a complete bundle fills the map and empties the missing set") {
    ReportBundle bundle;
    bundle.patient_ref = "P001";
    for (ReportType t : known_report_types())
        bundle.reports.push_back(make_report("P001", t));
    auto result = route(bundle, full_registry());
    CHECK(result.routed.size() == 4);
    CHECK(result.unknown.empty());
    CHECK(result.missing_types.empty());
    CHECK(result.routed.at(ReportType::oct).second == "agent_oct");
}

TEST_CASE("unknown reports go to the side list; totality holds") {
    ReportBundle bundle;
    bundle.patient_ref = "P001";
    bundle.reports = {make_report("P001", ReportType::oct),
                      make_report("P001", ReportType::unknown, Laterality::OD),
                      make_report("P001", ReportType::unknown, Laterality::OS)};
    auto result = route(bundle, full_registry());
    CHECK(result.routed.size() == 1);
    CHECK(result.unknown.size() == 2);
    CHECK(result.routed.size() + result.unknown.size() == bundle.reports.size());
    CHECK(result.missing_types ==
          std::set<ReportType>{ReportType::master_biometry, ReportType::pentacam,
                               ReportType::fundus});
}

TEST_CASE("two same-type reports for one eye cannot be routed") {
    ReportBundle bundle;
    bundle.patient_ref = "P001";
    bundle.reports = {make_report("P001", ReportType::oct, Laterality::OD),
                      make_report("P001", ReportType::oct, Laterality::OS)};
    // valid as a bundle, but a single routed map cannot hold both
    CHECK_THROWS_AS(route(bundle, full_registry()), IntegrityError);
}

TEST_CASE("an incomplete registry is a configuration error") {
    ReportBundle bundle;
    bundle.patient_ref = "P001";
    bundle.reports = {make_report("P001", ReportType::oct)};
    AgentRegistry partial{{ReportType::oct, "agent_oct"}};
    CHECK_THROWS_AS(route(bundle, partial), ConfigError);
}

TEST_CASE("make_bundles groups by patient and sorts deterministically") {
    std::vector<RawReport> reports = {make_report("P002", ReportType::oct),
                                      make_report("P001", ReportType::fundus),
                                      make_report("P001", ReportType::oct)};
    auto bundles = make_bundles(reports);
    REQUIRE(bundles.size() == 2);
    CHECK(bundles[0].patient_ref == "P001");
    CHECK(bundles[0].reports.size() == 2);
    CHECK(bundles[1].patient_ref == "P002");
}

TEST_CASE("per-eye splitting attaches unspecified reports to every eye") {
    ReportBundle bundle;
    bundle.patient_ref = "P001";
    bundle.reports = {
        make_report("P001", ReportType::master_biometry, Laterality::OD),
        make_report("P001", ReportType::oct, Laterality::OS),
        make_report("P001", ReportType::fundus, Laterality::unspecified)};
    auto eyes = split_bundle_by_eye(bundle);
    REQUIRE(eyes.size() == 2);
    CHECK(eyes[0].reports.size() == 2);  // OD: master + fundus
    CHECK(eyes[1].reports.size() == 2);  // OS: oct + fundus
    CHECK(case_id_for(eyes[0]) == "P001-OD");
    CHECK(case_id_for(eyes[1]) == "P001-OS");
}

TEST_CASE("bundles without eye markers stay whole") {
    ReportBundle bundle;
    bundle.patient_ref = "P001";
    bundle.reports = {
        make_report("P001", ReportType::oct, Laterality::unspecified)};
    auto eyes = split_bundle_by_eye(bundle);
    REQUIRE(eyes.size() == 1);
    CHECK(case_id_for(eyes[0]) == "P001");
}

TEST_CASE("report type and laterality names round trip") {
    for (ReportType t : known_report_types())
        CHECK(report_type_from_string(to_string(t)) == t);
    CHECK(report_type_from_string("unknown") == ReportType::unknown);
    CHECK_THROWS_AS(report_type_from_string("nope"), Error);
    for (Laterality l : {Laterality::OD, Laterality::OS, Laterality::unspecified})
        CHECK(laterality_from_string(to_string(l)) == l);
}
