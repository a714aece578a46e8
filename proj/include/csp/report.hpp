#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "csp/errors.hpp"
#include "csp/text.hpp"

namespace csp {

enum class ReportType { master_biometry, pentacam, oct, fundus, unknown };

inline const std::vector<ReportType>& known_report_types() {
    static const std::vector<ReportType> types = {
        ReportType::master_biometry, ReportType::pentacam, ReportType::oct,
        ReportType::fundus};
    return types;
}

inline std::string to_string(ReportType t) {
    switch (t) {
        case ReportType::master_biometry: return "master_biometry";
        case ReportType::pentacam: return "pentacam";
        case ReportType::oct: return "oct";
        case ReportType::fundus: return "fundus";
        case ReportType::unknown: return "unknown";
    }
    return "unknown";
}

inline ReportType report_type_from_string(const std::string& s) {
    for (ReportType t : known_report_types())
        if (to_string(t) == s) return t;
    if (s == "unknown") return ReportType::unknown;
    throw Error("unknown report type name: " + s);
}

enum class Laterality { OD, OS, unspecified };

inline std::string to_string(Laterality l) {
    switch (l) {
        case Laterality::OD: return "OD";
        case Laterality::OS: return "OS";
        case Laterality::unspecified: return "unspecified";
    }
    return "unspecified";
}

inline Laterality laterality_from_string(const std::string& s) {
    if (s == "OD") return Laterality::OD;
    if (s == "OS") return Laterality::OS;
    if (s == "unspecified") return Laterality::unspecified;
    throw Error("unknown laterality name: " + s);
}

struct RawReport {
    std::string report_id;
    std::string patient_ref;
    ReportType report_type = ReportType::unknown;
    Laterality laterality = Laterality::unspecified;
    std::string content;
    std::optional<std::string> acquired_at;  // ISO calendar date when known
    std::optional<std::string> source_path;

    void validate() const {
        if (report_id.empty()) throw PreconditionError("RawReport: empty report_id");
        if (patient_ref.empty())
            throw PreconditionError("RawReport: empty patient_ref");
        if (trim(content).empty())
            throw PreconditionError("RawReport: content empty after trimming (" +
                                    report_id + ")");
    }
};

struct ReportBundle {
    std::string patient_ref;
    std::vector<RawReport> reports;

    void validate() const {
        if (patient_ref.empty())
            throw PreconditionError("ReportBundle: empty patient_ref");
        std::set<std::pair<ReportType, Laterality>> seen;
        for (const auto& r : reports) {
            r.validate();
            if (r.patient_ref != patient_ref)
                throw IntegrityError("ReportBundle " + patient_ref +
                                     ": foreign report " + r.report_id + " (" +
                                     r.patient_ref + ")");
            if (r.report_type == ReportType::unknown) continue;
            auto key = std::make_pair(r.report_type, r.laterality);
            if (!seen.insert(key).second)
                throw IntegrityError("ReportBundle " + patient_ref +
                                     ": duplicate " + to_string(r.report_type) +
                                     "/" + to_string(r.laterality) + " report");
        }
    }

    // The four agent-backed report types with no report in this bundle.
    std::set<ReportType> missing_types() const {
        std::set<ReportType> present;
        for (const auto& r : reports)
            if (r.report_type != ReportType::unknown) present.insert(r.report_type);
        std::set<ReportType> missing;
        for (ReportType t : known_report_types())
            if (!present.count(t)) missing.insert(t);
        return missing;
    }
};

// Groups loaded reports into one bundle per patient_ref, sorted by patient
// for deterministic downstream order.
inline std::vector<ReportBundle> make_bundles(const std::vector<RawReport>& reports) {
    std::map<std::string, ReportBundle> by_patient;
    for (const auto& r : reports) {
        auto& bundle = by_patient[r.patient_ref];
        bundle.patient_ref = r.patient_ref;
        bundle.reports.push_back(r);
    }
    std::vector<ReportBundle> out;
    out.reserve(by_patient.size());
    for (auto& [ref, bundle] : by_patient) out.push_back(std::move(bundle));
    return out;
}

// One downstream case covers one eye. Laterality-specific reports split into
// per-eye bundles; unspecified reports (and bundles with no eye markers at
// all) attach to every eye seen, or form a single unspecified bundle.
inline std::vector<ReportBundle> split_bundle_by_eye(const ReportBundle& bundle) {
    std::set<Laterality> eyes;
    for (const auto& r : bundle.reports)
        if (r.laterality != Laterality::unspecified) eyes.insert(r.laterality);
    if (eyes.empty()) return {bundle};

    std::vector<ReportBundle> out;
    for (Laterality eye : {Laterality::OD, Laterality::OS}) {
        if (!eyes.count(eye)) continue;
        ReportBundle per_eye;
        per_eye.patient_ref = bundle.patient_ref;
        for (const auto& r : bundle.reports)
            if (r.laterality == eye || r.laterality == Laterality::unspecified)
                per_eye.reports.push_back(r);
        out.push_back(std::move(per_eye));
    }
    return out;
}

// Case identifier for a per-eye bundle: "<patient_ref>-<eye>" when the eye is
// known, else the bare patient_ref.
inline std::string case_id_for(const ReportBundle& bundle) {
    for (const auto& r : bundle.reports)
        if (r.laterality != Laterality::unspecified)
            return bundle.patient_ref + "-" + to_string(r.laterality);
    return bundle.patient_ref;
}

}  // namespace csp
