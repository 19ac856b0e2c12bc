#include "aflan/loss.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>

namespace aflan {

namespace {

std::string squash(std::string_view s) {
    std::string out;
    for (unsigned char c : s) {
        if (c != '_' && c != '-' && c != ' ') out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

std::string canonical_loss_label(std::string_view label) {
    std::string key = squash(label);
    for (auto l : kLossLabels) {
        if (squash(l) == key) return std::string(l);
    }
    throw Error("unknown loss label '" + std::string(label) + "'");
}

std::size_t loss_label_rank(std::string_view canonical) {
    for (std::size_t i = 0; i < std::size(kLossLabels); ++i) {
        if (kLossLabels[i] == canonical) return i;
    }
    return std::size(kLossLabels);
}

std::vector<LossRecord> parse_loss_log(std::string_view text, std::string_view origin) {
    auto records = parse_jsonl(text, origin);
    std::vector<LossRecord> out;
    out.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        auto where = std::string(origin) + ": record " + std::to_string(i);
        if (!r.is_object() || !r.contains("step") || !r.contains("label") || !r.contains("loss")) {
            throw Error(where + ": expected {step, label, loss}");
        }
        if (!r["step"].is_number_integer() || r["step"].get<long long>() < 0) {
            throw Error(where + ": step must be a non-negative integer");
        }
        if (!r["loss"].is_number()) throw Error(where + ": loss must be a number");
        if (!r["label"].is_string()) throw Error(where + ": label must be a string");
        LossRecord rec;
        rec.step = r["step"].get<std::size_t>();
        try {
            rec.label = canonical_loss_label(r["label"].get<std::string>());
        } catch (const Error& e) {
            throw Error(where + ": " + e.what());
        }
        rec.loss = r["loss"].get<double>();
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<double> centered_moving_average(std::span<const double> values, std::size_t window) {
    if (window == 0) throw Error("window must be at least 1");
    std::size_t before = (window - 1) / 2;
    std::size_t after = window / 2;
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::size_t lo = i >= before ? i - before : 0;
        std::size_t hi = std::min(values.size(), i + after + 1);
        if (window == 1) {
            out[i] = values[i];
        } else {
            // summed per window; prefix-sum differences cancel badly on decayed tails
            double sum = 0.0;
            for (std::size_t k = lo; k < hi; ++k) sum += values[k];
            out[i] = sum / static_cast<double>(hi - lo);
        }
    }
    return out;
}

std::vector<LossCurve> aggregate_curves(std::span<const LossRecord> log, std::size_t window) {
    if (window == 0) throw Error("window must be at least 1");
    std::map<std::string, std::map<std::size_t, std::pair<double, std::size_t>>> per_label;
    for (std::size_t i = 0; i < log.size(); ++i) {
        const auto& r = log[i];
        if (!std::isfinite(r.loss)) throw Error("loss record " + std::to_string(i) + ": loss is not finite");
        if (r.loss < 0.0) throw Error("loss record " + std::to_string(i) + ": loss is negative");
        if (i > 0 && r.step < log[i - 1].step) {
            throw Error("loss record " + std::to_string(i) + ": step " + std::to_string(r.step) +
                        " goes back from " + std::to_string(log[i - 1].step));
        }
        auto& cell = per_label[canonical_loss_label(r.label)][r.step];
        cell.first += r.loss;
        ++cell.second;
    }

    std::vector<LossCurve> curves;
    for (auto& [label, steps] : per_label) {
        LossCurve c;
        c.label = label;
        c.window = window;
        std::vector<double> means;
        for (const auto& [step, cell] : steps) {
            double m = cell.first / static_cast<double>(cell.second);
            c.means.push_back({step, m});
            means.push_back(m);
        }
        auto smooth = centered_moving_average(means, window);
        for (std::size_t i = 0; i < smooth.size(); ++i) c.points.push_back({c.means[i].step, smooth[i]});
        curves.push_back(std::move(c));
    }
    std::stable_sort(curves.begin(), curves.end(), [](const LossCurve& a, const LossCurve& b) {
        return loss_label_rank(a.label) < loss_label_rank(b.label);
    });
    return curves;
}

std::optional<GapReport> format_content_gap(std::span<const LossCurve> curves, double min_ratio) {
    const LossCurve* format = nullptr;
    const LossCurve* content = nullptr;
    for (const auto& c : curves) {
        if (c.label == "Format") format = &c;
        if (c.label == "Content") content = &c;
    }
    if (!format || !content || format->means.empty() || content->means.empty()) return std::nullopt;
    auto final_mean = [](const LossCurve& c) {
        std::size_t n = std::min(c.window, c.means.size());
        double sum = 0.0;
        for (std::size_t i = c.means.size() - n; i < c.means.size(); ++i) sum += c.means[i].value;
        return sum / static_cast<double>(n);
    };
    GapReport g;
    g.format_final = final_mean(*format);
    g.content_final = final_mean(*content);
    double hi = std::max(g.format_final, g.content_final);
    double lo = std::min(g.format_final, g.content_final);
    g.ratio = lo > 0.0 ? hi / lo : (hi > 0.0 ? INFINITY : 1.0);
    g.flagged = g.ratio >= min_ratio;
    return g;
}

std::vector<ConvergenceEntry> convergence_summary(std::span<const LossCurve> curves, double threshold) {
    std::vector<ConvergenceEntry> out;
    for (const auto& c : curves) {
        ConvergenceEntry e{c.label, std::nullopt};
        for (const auto& p : c.points) {
            if (p.value < threshold) {
                e.first_step_below = p.step;
                break;
            }
        }
        out.push_back(std::move(e));
    }
    std::stable_sort(out.begin(), out.end(), [](const ConvergenceEntry& a, const ConvergenceEntry& b) {
        if (a.first_step_below.has_value() != b.first_step_below.has_value()) return a.first_step_below.has_value();
        if (!a.first_step_below) return false;
        return *a.first_step_below < *b.first_step_below;
    });
    return out;
}

std::string curves_to_csv(std::span<const LossCurve> curves) {
    std::string out;
    std::size_t window = curves.empty() ? kDefaultLossWindow : curves.front().window;
    out += "# smoothing: centered moving average, window " + std::to_string(window) + " steps\n";
    out += "step,label,smoothed,mean\n";
    for (const auto& c : curves) {
        for (std::size_t i = 0; i < c.points.size(); ++i) {
            out += std::to_string(c.points[i].step) + "," + c.label + "," + format_double(c.points[i].value) + "," +
                   format_double(c.means[i].value) + "\n";
        }
    }
    return out;
}

ordered_json convergence_to_json(std::span<const ConvergenceEntry> ranking, double threshold,
                                 const std::optional<GapReport>& gap, std::size_t window) {
    ordered_json j;
    j["smoothing"] = "centered moving average";
    j["window"] = window;
    j["threshold"] = threshold;
    ordered_json rank = ordered_json::array();
    for (const auto& e : ranking) {
        ordered_json r{{"label", e.label}};
        if (e.first_step_below) r["first_step_below"] = *e.first_step_below;
        else r["first_step_below"] = "unreached";
        rank.push_back(std::move(r));
    }
    j["ranking"] = std::move(rank);
    if (gap) {
        j["format_content_gap"] = {{"format_final", gap->format_final},
                                   {"content_final", gap->content_final},
                                   {"ratio", std::isfinite(gap->ratio) ? ordered_json(gap->ratio) : ordered_json("inf")},
                                   {"flagged", gap->flagged}};
    }
    return j;
}

}  // namespace aflan
