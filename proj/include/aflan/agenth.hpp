#pragma once

// Agent-H: hallucination benchmark construction and scoring.

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aflan/trajectory.hpp"
#include "aflan/util.hpp"

namespace aflan {

enum class TruthKind { RawResponse, FunctionCall };

std::string_view truth_kind_name(TruthKind k);
TruthKind parse_truth_kind(std::string_view s);

enum class MatchPolicy {
    LineAnchoredCaseSensitive,  // keyword starts a line (after leading blanks)
    LineAnchoredCaseInsensitive,
    SubstringCaseSensitive,
    SubstringCaseInsensitive,
};

std::string_view match_policy_name(MatchPolicy p);
MatchPolicy parse_match_policy(std::string_view s);

struct DetectorConfig {
    std::vector<std::string> react_keywords{"Thought:", "Action:"};
    MatchPolicy react_policy = MatchPolicy::LineAnchoredCaseSensitive;
    std::vector<std::string> general_phrases{"I will use", "I need to call"};
    MatchPolicy general_policy = MatchPolicy::SubstringCaseInsensitive;

    std::vector<std::string> validate() const;
    // Keys: react_keywords, react_policy, general_phrases, general_policy
    // (optionally under a prefix such as "detector.").
    static DetectorConfig from_config(const KeyValueConfig& cfg, const std::string& prefix = "");
    void to_config(KeyValueConfig& cfg, const std::string& prefix = "") const;
};

bool matches_any(std::string_view text, const std::vector<std::string>& needles, MatchPolicy policy);

struct HallucinationFlags {
    bool react = false;
    bool general = false;

    bool any() const { return react || general; }
    bool operator==(const HallucinationFlags&) const = default;
};

// Flags are only ever raised when the ground truth is a raw response.
HallucinationFlags detect_hallucination(std::string_view response, TruthKind truth, const DetectorConfig& config = {});

// True when the text holds a JSON object with a string "name" and an
// "arguments" or "parameters" member, anywhere in the text.
bool contains_call_object(std::string_view text);

// Ground-truth classification: a structured call object or any ReAct keyword
// makes a reference a FunctionCall.
TruthKind classify_reference(std::string_view reference, const DetectorConfig& config = {});

struct BenchmarkItem {
    std::string id;
    std::string system_prompt;
    std::vector<ToolSchema> system_tools;
    std::string query;
    TruthKind ground_truth_kind = TruthKind::RawResponse;
    std::string reference;

    bool operator==(const BenchmarkItem&) const = default;
};

struct BenchmarkBuild {
    std::vector<BenchmarkItem> items;
    std::size_t raw_count = 0;
    std::size_t call_count = 0;
    std::vector<std::string> log;  // ambiguous references and skipped records
};

// Corpus records carry system tools, a user query and a reference reply
// (the first assistant turn after the query, or a `reference` field).
BenchmarkBuild build_benchmark(std::span<const ordered_json> corpus, const DetectorConfig& config = {});

ordered_json benchmark_item_to_json(const BenchmarkItem& item);
BenchmarkItem benchmark_item_from_json(const ordered_json& j);

struct ItemAudit {
    std::string id;
    TruthKind truth = TruthKind::RawResponse;
    HallucinationFlags flags;
};

struct HallucinationReport {
    std::size_t n_raw = 0;
    std::size_t n_react_halluc = 0;
    std::size_t n_general_halluc = 0;
    // Fractions in [0, 1]; zero when there are no raw-response items.
    double h_react = 0.0;
    double h_general = 0.0;
    double h_score = 1.0;  // 0.5 * ((1 - h_react) + (1 - h_general))
    std::vector<ItemAudit> items;

    // Percent display scale: 100 * h.
    double h_react_pct() const { return 100.0 * h_react; }
    double h_general_pct() const { return 100.0 * h_general; }
    double h_score_pct() const { return 100.0 * h_score; }

    ordered_json summary_json() const;
    std::string audit_jsonl() const;
};

double h_score_from_rates(double h_react, double h_general);

// Throws Error listing every benchmark id without a prediction.
HallucinationReport score(const std::map<std::string, std::string>& predictions,
                          std::span<const BenchmarkItem> benchmark, const DetectorConfig& config = {});

// Predictions file: records with `id` and either `response` or a
// conversation whose last assistant turn is the response.
std::map<std::string, std::string> predictions_from_json(std::span<const ordered_json> records);

}  // namespace aflan
