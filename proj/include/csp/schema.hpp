#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "csp/errors.hpp"
#include "csp/text.hpp"

namespace csp {

enum class FieldKind { number, text };

struct FieldSpec {
    std::string name;
    FieldKind kind = FieldKind::text;
    bool required = false;
    std::string units;          // declared units; empty means unitless
    std::optional<double> min;  // plausibility bounds, when the catalogue
    std::optional<double> max;  // declares them
};

struct FieldCatalogue {
    std::vector<FieldSpec> fields;  // declaration order is prompt order

    void validate() const {
        if (fields.empty())
            throw PreconditionError("FieldCatalogue: schema must be non-empty");
        std::set<std::string> names;
        for (const auto& f : fields) {
            if (f.name.empty())
                throw PreconditionError("FieldCatalogue: field without a name");
            if (!names.insert(f.name).second)
                throw PreconditionError("FieldCatalogue: duplicate field " + f.name);
        }
    }

    const FieldSpec* find(const std::string& name) const {
        for (const auto& f : fields)
            if (f.name == name) return &f;
        return nullptr;
    }
};

enum class ViolationKind {
    unparseable,
    missing_required,
    unknown_field,
    type_mismatch,
    unit_mismatch,
    out_of_range,
    fabricated_value,
    speculative_content,
};

inline std::string to_string(ViolationKind k) {
    switch (k) {
        case ViolationKind::unparseable: return "unparseable";
        case ViolationKind::missing_required: return "missing_required";
        case ViolationKind::unknown_field: return "unknown_field";
        case ViolationKind::type_mismatch: return "type_mismatch";
        case ViolationKind::unit_mismatch: return "unit_mismatch";
        case ViolationKind::out_of_range: return "out_of_range";
        case ViolationKind::fabricated_value: return "fabricated_value";
        case ViolationKind::speculative_content: return "speculative_content";
    }
    return "unparseable";
}

struct Violation {
    ViolationKind kind = ViolationKind::unparseable;
    std::string field;  // empty when not field-specific
    std::string detail;

    std::string describe() const {
        std::string s = to_string(kind);
        if (!field.empty()) s += " [" + field + "]";
        if (!detail.empty()) s += ": " + detail;
        return s;
    }
};

struct ParsedField {
    std::string name;
    std::string value_text;        // value exactly as written (units stripped)
    std::optional<double> number;  // set for number-kind fields
    std::string units;             // as written, or filled from the schema
    bool abnormal = false;
};

struct ParsedReply {
    std::vector<ParsedField> fields;
    std::string narrative;  // prose after the fenced block, may be empty
};

namespace detail {

// Lowercase, micro sign and Greek mu folded to "u", trailing dot dropped:
// "µm", "μm", "Um." all canonicalize to "um".
inline std::string canonical_unit(std::string_view unit) {
    std::string out;
    size_t i = 0;
    while (i < unit.size()) {
        char32_t cp = 0;
        size_t len = utf8_decode(unit, i, cp);
        if (cp == 0x00B5 || cp == 0x03BC) {
            out += 'u';
        } else if (cp < 0x80) {
            char c = static_cast<char>(std::tolower(static_cast<unsigned char>(cp)));
            if (c != '.') out += c;
        } else {
            out.append(unit.substr(i, len));
        }
        i += len;
    }
    return out;
}

// "23.52 mm" -> (23.52, "mm"); "0.6" -> (0.6, ""). Fails when the value does
// not start with a number or has trailing junk beyond one unit token.
inline bool parse_number_with_unit(const std::string& value, double& number,
                                   std::string& unit) {
    std::istringstream in(value);
    if (!(in >> number)) return false;
    std::string rest, extra;
    in >> rest;
    if (in >> extra) return false;  // more than one trailing token
    unit = rest;
    return true;
}

}  // namespace detail

// Locates the fenced machine-readable block: a line starting with ```
// (optionally tagged, e.g. ```findings) up to the closing ``` line.
inline std::optional<std::string> fenced_block(const std::string& raw) {
    auto lines = split_lines(raw);
    std::string body;
    bool in_fence = false, found = false;
    for (const auto& line : lines) {
        std::string t = trim(line);
        if (!in_fence && starts_with(t, "```")) {
            in_fence = true;
            continue;
        }
        if (in_fence) {
            if (starts_with(t, "```")) {
                found = true;
                break;
            }
            body += line;
            body += '\n';
        }
    }
    if (!found) return std::nullopt;
    return body;
}

// Text after the closing fence (the agent's optional narrative).
inline std::string after_fence(const std::string& raw) {
    size_t first = raw.find("```");
    if (first == std::string::npos) return "";
    size_t open_end = raw.find('\n', first);
    if (open_end == std::string::npos) return "";
    size_t close = raw.find("```", open_end);
    if (close == std::string::npos) return "";
    size_t close_end = raw.find('\n', close);
    if (close_end == std::string::npos) return "";
    return trim(raw.substr(close_end + 1));
}

// Parses and validates an agent reply against the output schema in one pass.
// Violations: unparseable reply/lines, unknown or duplicate fields, number
// fields that do not parse, unit conflicts with the declared unit, declared
// plausibility bounds, and missing required fields. When the declared unit
// is absent from the reply it is filled in, not flagged.
inline std::vector<Violation> validate_schema(const std::string& raw_output,
                                              const FieldCatalogue& schema,
                                              ParsedReply* parsed_out = nullptr) {
    schema.validate();
    std::vector<Violation> violations;
    ParsedReply parsed;

    auto block = fenced_block(raw_output);
    if (!block) {
        violations.push_back({ViolationKind::unparseable, "",
                              "no fenced key-value block found"});
        if (parsed_out) *parsed_out = std::move(parsed);
        return violations;
    }
    parsed.narrative = after_fence(raw_output);

    std::set<std::string> seen;
    for (const auto& line : split_lines(*block)) {
        std::string t = trim(line);
        if (t.empty()) continue;
        size_t colon = t.find(':');
        if (colon == std::string::npos || colon == 0) {
            violations.push_back({ViolationKind::unparseable, "",
                                  "line without 'name: value': " + t});
            continue;
        }
        ParsedField field;
        field.name = trim(t.substr(0, colon));
        std::string value = trim(t.substr(colon + 1));

        size_t bar = value.rfind('|');
        if (bar != std::string::npos) {
            std::string flag = trim(value.substr(bar + 1));
            if (flag == "abnormal") {
                field.abnormal = true;
                value = trim(value.substr(0, bar));
            }
        }

        const FieldSpec* spec = schema.find(field.name);
        if (!spec) {
            violations.push_back({ViolationKind::unknown_field, field.name,
                                  "not part of the output schema"});
            continue;
        }
        if (!seen.insert(field.name).second) {
            violations.push_back({ViolationKind::unparseable, field.name,
                                  "field emitted twice"});
            continue;
        }
        if (value.empty()) {
            violations.push_back({ViolationKind::type_mismatch, field.name,
                                  "empty value"});
            continue;
        }

        if (spec->kind == FieldKind::number) {
            double number = 0.0;
            std::string unit;
            if (!detail::parse_number_with_unit(value, number, unit)) {
                violations.push_back({ViolationKind::type_mismatch, field.name,
                                      "expected a number, got '" + value + "'"});
                continue;
            }
            field.number = number;
            if (unit.empty()) {
                field.units = spec->units;  // declared unit filled in
            } else if (!spec->units.empty() &&
                       detail::canonical_unit(unit) !=
                           detail::canonical_unit(spec->units)) {
                violations.push_back({ViolationKind::unit_mismatch, field.name,
                                      "'" + unit + "' where the schema declares '" +
                                          spec->units + "'"});
                continue;
            } else {
                field.units = unit;
            }
            size_t unit_pos = value.find_last_of(" \t");
            field.value_text =
                unit.empty() ? value : trim(value.substr(0, unit_pos));
            if ((spec->min && number < *spec->min) ||
                (spec->max && number > *spec->max)) {
                violations.push_back({ViolationKind::out_of_range, field.name,
                                      value + " outside plausible range"});
                continue;
            }
        } else {
            field.value_text = value;
            field.units.clear();
        }
        parsed.fields.push_back(std::move(field));
    }

    for (const auto& spec : schema.fields)
        if (spec.required && !seen.count(spec.name))
            violations.push_back({ViolationKind::missing_required, spec.name,
                                  "required field absent from reply"});

    if (parsed_out) *parsed_out = std::move(parsed);
    return violations;
}

}  // namespace csp
