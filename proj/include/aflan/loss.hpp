#pragma once

// Loss-log aggregation into smoothed per-label convergence curves.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aflan/util.hpp"

namespace aflan {

// Capability labels plus the Format / Content split of ReAct turns.
inline constexpr std::string_view kLossLabels[] = {"Reasoning", "Retrieval", "Understanding",
                                                   "InstructionFollowing", "Format", "Content"};

// Canonical label name; accepts snake_case and any letter case. Throws Error
// for unknown labels.
std::string canonical_loss_label(std::string_view label);
std::size_t loss_label_rank(std::string_view canonical);

struct LossRecord {
    std::size_t step = 0;
    std::string label;
    double loss = 0.0;
};

// Newline-delimited {step, label, loss} records. Errors name the record index.
std::vector<LossRecord> parse_loss_log(std::string_view text, std::string_view origin = "<memory>");

struct CurvePoint {
    std::size_t step = 0;
    double value = 0.0;
};

struct LossCurve {
    std::string label;
    std::vector<CurvePoint> points;  // smoothed
    std::vector<CurvePoint> means;   // per-step means before smoothing
    std::size_t window = 1;
};

inline constexpr std::size_t kDefaultLossWindow = 50;

// One curve per label in canonical label order. Each point is the centered
// moving average of the label's per-step means over `window` consecutive
// steps (window/2 after, (window-1)/2 before), truncated at the ends.
// Throws Error naming the record index on non-finite or negative losses and
// on steps that go backwards.
std::vector<LossCurve> aggregate_curves(std::span<const LossRecord> log, std::size_t window = kDefaultLossWindow);

// Centered moving average used by aggregate_curves.
std::vector<double> centered_moving_average(std::span<const double> values, std::size_t window);

struct GapReport {
    double format_final = 0.0;
    double content_final = 0.0;
    double ratio = 0.0;  // larger over smaller
    bool flagged = false;
};

// Compares the mean of the last `window` per-step means of the Format and
// Content curves. nullopt when either curve is missing.
std::optional<GapReport> format_content_gap(std::span<const LossCurve> curves, double min_ratio = 5.0);

struct ConvergenceEntry {
    std::string label;
    std::optional<std::size_t> first_step_below;  // nullopt: unreached
};

// Labels ordered by the first step their smoothed curve drops below the
// threshold; ties keep curve order; unreached labels come last.
std::vector<ConvergenceEntry> convergence_summary(std::span<const LossCurve> curves, double threshold);

// `step,label,smoothed,mean` rows preceded by a comment line naming the
// smoothing.
std::string curves_to_csv(std::span<const LossCurve> curves);
ordered_json convergence_to_json(std::span<const ConvergenceEntry> ranking, double threshold,
                                 const std::optional<GapReport>& gap, std::size_t window);

}  // namespace aflan
