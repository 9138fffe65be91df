#include "lorakit/scoring.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "lorakit/errors.hpp"

namespace lorakit {

using nlohmann::json;

EvalLog load_eval_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "' for reading");
    }

    EvalLog log;
    std::set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;

        json record;
        try {
            record = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError("'" + path.string() + "' line " + std::to_string(line_no) +
                              ": malformed JSON: " + e.what());
        }
        if (!record.is_object() || !record.contains("id") || !record["id"].is_string() ||
            !record.contains("outcomes") || !record["outcomes"].is_array()) {
            throw FormatError("'" + path.string() + "' line " + std::to_string(line_no) +
                              ": expected {\"id\": string, \"outcomes\": [bool, ...]}");
        }

        EvalRecord r;
        r.id = record["id"].get<std::string>();
        for (const auto& o : record["outcomes"]) {
            if (!o.is_boolean()) {
                throw FormatError("'" + path.string() + "' line " + std::to_string(line_no) +
                                  ": outcomes must be booleans");
            }
            r.outcomes.push_back(o.get<bool>());
        }
        if (r.outcomes.empty()) {
            throw FormatError("'" + path.string() + "' line " + std::to_string(line_no) +
                              ": record '" + r.id + "' has no outcomes");
        }
        if (!seen.insert(r.id).second) {
            throw FormatError("'" + path.string() + "' line " + std::to_string(line_no) +
                              ": duplicate question id '" + r.id + "'");
        }
        log.records.push_back(std::move(r));
    }
    return log;
}

double pass_at_1(const EvalLog& log) {
    if (log.records.empty()) {
        throw InvalidInput("pass_at_1: empty log");
    }
    double sum = 0.0;
    for (const auto& r : log.records) {
        if (r.outcomes.empty()) {
            throw InvalidInput("pass_at_1: record '" + r.id + "' has no outcomes");
        }
        std::size_t correct = 0;
        for (bool o : r.outcomes) correct += o ? 1 : 0;
        sum += static_cast<double>(correct) / static_cast<double>(r.outcomes.size());
    }
    return sum / static_cast<double>(log.records.size());
}

double safety_score(const EvalLog& log, SafetyPolarity polarity) {
    if (log.records.empty()) {
        throw InvalidInput("safety_score: empty log");
    }
    std::size_t safe = 0;
    for (const auto& r : log.records) {
        if (r.outcomes.size() != 1) {
            throw InvalidInput("safety_score: record '" + r.id + "' must carry exactly one "
                               "verdict, got " + std::to_string(r.outcomes.size()));
        }
        safe += r.outcomes[0] ? 1 : 0;
    }
    const double safe_fraction =
        static_cast<double>(safe) / static_cast<double>(log.records.size());
    // The harmful fraction is defined as the exact complement so the two
    // polarities always sum to 1.
    return polarity == SafetyPolarity::safe_fraction ? safe_fraction : 1.0 - safe_fraction;
}

}  // namespace lorakit
