#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "csp/report.hpp"

namespace csp {

struct LoadResult {
    std::vector<RawReport> reports;
    std::vector<std::string> errors;  // per-file problems; load continues
};

// Loads every *.txt file under root (recursively). Filename convention
// `<patient_ref>_<typehint>.txt`; the hint is advisory only — authoritative
// classification happens on content. Deterministic: paths sorted before use.
inline LoadResult load_reports(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    if (!fs::exists(root) || !fs::is_directory(root))
        throw ConfigError("report directory does not exist: " + root.string());

    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(root))
        if (entry.is_regular_file() && entry.path().extension() == ".txt")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());

    LoadResult result;
    for (const auto& path : files) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            result.errors.push_back("unreadable file: " + path.string());
            continue;
        }
        std::ostringstream ss;
        ss << in.rdbuf();
        RawReport report;
        report.content = ss.str();
        if (trim(report.content).empty()) {
            result.errors.push_back("empty report skipped: " + path.string());
            continue;
        }
        std::string stem = path.stem().string();
        size_t underscore = stem.rfind('_');
        report.patient_ref =
            underscore == std::string::npos ? stem : stem.substr(0, underscore);
        report.report_id = stem;
        report.report_type = ReportType::unknown;
        report.source_path = path.string();
        result.reports.push_back(std::move(report));
    }
    if (result.reports.empty())
        throw Error("empty corpus: no usable report files under " + root.string());
    return result;
}

// Ordered keyword-rule table; first firing rule decides. Single-word
// keywords must match a whole token ("doctor" does not trigger "oct");
// multi-word keywords match as contiguous token runs.
inline ReportType classify_report(const std::string& content) {
    if (trim(content).empty())
        throw PreconditionError("classify_report: empty content");

    static const std::vector<std::pair<const char*, ReportType>> kRules = {
        {"pentacam", ReportType::pentacam},
        {"scheimpflug", ReportType::pentacam},
        {"corneal topography", ReportType::pentacam},
        {"optical coherence tomography", ReportType::oct},
        {"oct", ReportType::oct},
        {"central macular thickness", ReportType::oct},
        {"fundus", ReportType::fundus},
        {"optic disc photograph", ReportType::fundus},
        {"cup to disc", ReportType::fundus},
        {"iolmaster", ReportType::master_biometry},
        {"iol master", ReportType::master_biometry},
        {"biometry", ReportType::master_biometry},
        {"axial length", ReportType::master_biometry},
        {"keratometry", ReportType::master_biometry},
    };

    TokenSeq tokens = tokenize(content);
    auto contains_run = [&](const TokenSeq& needle) {
        if (needle.empty() || needle.size() > tokens.size()) return false;
        for (size_t i = 0; i + needle.size() <= tokens.size(); ++i) {
            bool all = true;
            for (size_t k = 0; k < needle.size(); ++k)
                if (tokens[i + k] != needle[k]) {
                    all = false;
                    break;
                }
            if (all) return true;
        }
        return false;
    };

    for (const auto& [keyword, type] : kRules)
        if (contains_run(tokenize(keyword))) return type;
    return ReportType::unknown;
}

// OD/OS markers, English phrasing, or the CJK eye terms. Conflicting markers
// (both eyes named) yield unspecified rather than a guess.
inline Laterality detect_laterality(const std::string& content) {
    TokenSeq tokens = tokenize(content);
    bool od = false, os = false;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] == "od") od = true;
        if (tokens[i] == "os") os = true;
        if (i + 1 < tokens.size() && tokens[i + 1] == "eye") {
            if (tokens[i] == "right") od = true;
            if (tokens[i] == "left") os = true;
        }
    }
    if (content.find("右眼") != std::string::npos) od = true;
    if (content.find("左眼") != std::string::npos) os = true;
    if (od == os) return Laterality::unspecified;
    return od ? Laterality::OD : Laterality::OS;
}

// report_type -> agent_id; exactly one agent per supported type.
using AgentRegistry = std::map<ReportType, std::string>;

struct RouteResult {
    std::map<ReportType, std::pair<RawReport, std::string>> routed;
    std::vector<RawReport> unknown;         // classified as no supported type
    std::set<ReportType> missing_types;     // availability flags downstream
};

// Maps every classified report of a (single-eye) bundle to its agent.
// Unknown-type reports land in the side list; a second report of the same
// type is a bundle-integrity error.
inline RouteResult route(const ReportBundle& bundle, const AgentRegistry& registry) {
    bundle.validate();
    for (ReportType t : known_report_types())
        if (!registry.count(t))
            throw ConfigError("agent registry missing an agent for " + to_string(t));

    RouteResult result;
    for (const auto& report : bundle.reports) {
        if (report.report_type == ReportType::unknown) {
            result.unknown.push_back(report);
            continue;
        }
        auto agent = registry.at(report.report_type);
        auto [it, inserted] =
            result.routed.emplace(report.report_type, std::make_pair(report, agent));
        if (!inserted)
            throw IntegrityError("bundle " + bundle.patient_ref + ": two " +
                                 to_string(report.report_type) +
                                 " reports routed for one eye");
    }
    result.missing_types = bundle.missing_types();
    return result;
}

}  // namespace csp
