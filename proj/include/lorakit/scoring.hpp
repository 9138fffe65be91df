#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace lorakit {

/// One evaluated question: n sampled pass/fail outcomes for Pass@1, or a
/// single judge verdict (true = safe) for the safety score.
struct EvalRecord {
    std::string id;
    std::vector<bool> outcomes;
};

struct EvalLog {
    std::vector<EvalRecord> records;
};

/// Parses a JSONL file of {"id": string, "outcomes": [bool, ...]} records.
/// Malformed lines raise FormatError citing the 1-based line number.
EvalLog load_eval_log(const std::filesystem::path& path);

/// Mean over questions of (correct outcomes / n).
double pass_at_1(const EvalLog& log);

enum class SafetyPolarity { safe_fraction, harmful_fraction };

/// Fraction of single-verdict records with the chosen polarity. The two
/// polarities sum to exactly 1 for the same log.
double safety_score(const EvalLog& log, SafetyPolarity polarity);

}  // namespace lorakit
