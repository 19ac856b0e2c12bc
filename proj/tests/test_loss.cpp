#include "doctest.h"

#include <cmath>
#include <limits>

#include "aflan/loss.hpp"

using namespace aflan;

namespace {

std::vector<LossRecord> exp_log(const std::vector<std::pair<std::string, double>>& labels, std::size_t steps,
                                double scale = 2.0) {
    std::vector<LossRecord> log;
    for (std::size_t s = 0; s < steps; ++s) {
        for (const auto& [label, tau] : labels) log.push_back({s, label, scale * std::exp(-static_cast<double>(s) / tau)});
    }
    return log;
}

// Mean of scale*exp(-k/tau) over k in [lo, hi], summed as a geometric series.
double window_mean(double scale, double tau, std::size_t lo, std::size_t hi) {
    double r = std::exp(-1.0 / tau);
    double m = static_cast<double>(hi - lo + 1);
    return scale * std::exp(-static_cast<double>(lo) / tau) * (1 - std::pow(r, m)) / (1 - r) / m;
}

const LossCurve& curve(const std::vector<LossCurve>& cs, const std::string& label) {
    for (const auto& c : cs) {
        if (c.label == label) return c;
    }
    throw std::runtime_error("no curve " + label);
}

}  // namespace

TEST_CASE("labels are canonicalized") {
    CHECK(canonical_loss_label("instruction_following") == "InstructionFollowing");
    CHECK(canonical_loss_label("REASONING") == "Reasoning");
    CHECK(canonical_loss_label("format") == "Format");
    CHECK_THROWS_AS(canonical_loss_label("planning"), Error);
}

TEST_CASE("constant loss gives a flat curve") {
    std::vector<LossRecord> log;
    for (std::size_t s = 0; s < 300; ++s) log.push_back({s, "Reasoning", 1.0});
    auto cs = aggregate_curves(log, 50);
    REQUIRE(cs.size() == 1);
    for (const auto& p : cs[0].points) CHECK(p.value == doctest::Approx(1.0));
    CHECK(aggregate_curves({}, 50).empty());
}

TEST_CASE("smoothed exponential decay matches the closed-form window mean") {
    auto cs = aggregate_curves(exp_log({{"Retrieval", 100.0}, {"Reasoning", 400.0}}, 1500), 50);
    for (const auto& [label, tau] : std::vector<std::pair<std::string, double>>{{"Retrieval", 100.0}, {"Reasoning", 400.0}}) {
        const auto& c = curve(cs, label);
        REQUIRE(c.points.size() == 1500);
        for (std::size_t i = 0; i < c.points.size(); ++i) {
            std::size_t lo = i >= 24 ? i - 24 : 0;
            std::size_t hi = std::min<std::size_t>(1499, i + 25);
            double expect = window_mean(2.0, tau, lo, hi);
            CHECK(std::fabs(c.points[i].value - expect) <= 0.01 * expect);
        }
    }
    // A below B once past the start
    const auto& a = curve(cs, "Retrieval");
    const auto& b = curve(cs, "Reasoning");
    for (std::size_t i = 1; i < 1500; ++i) CHECK(a.points[i].value < b.points[i].value);
}

TEST_CASE("faster decay reaches the threshold first") {
    auto cs = aggregate_curves(exp_log({{"Reasoning", 400.0}, {"Retrieval", 100.0}}, 2000), 50);
    auto rank = convergence_summary(cs, 0.5);
    REQUIRE(rank.size() == 2);
    CHECK(rank[0].label == "Retrieval");
    CHECK(rank[1].label == "Reasoning");
    // analytic crossing of 2exp(-s/tau) = 0.5 is tau*ln4; smoothing shifts it by a few steps
    CHECK(std::fabs(static_cast<double>(*rank[0].first_step_below) - 100.0 * std::log(4.0)) < 5.0);
    CHECK(std::fabs(static_cast<double>(*rank[1].first_step_below) - 400.0 * std::log(4.0)) < 5.0);
}

TEST_CASE("flat curve above the threshold is unreached and sorts last") {
    std::vector<LossRecord> log;
    for (std::size_t s = 0; s < 100; ++s) {
        log.push_back({s, "Format", 1.0});
        log.push_back({s, "Content", 0.1});
    }
    auto rank = convergence_summary(aggregate_curves(log, 5), 0.5);
    CHECK(rank[0].label == "Content");
    CHECK(rank[1].label == "Format");
    CHECK_FALSE(rank[1].first_step_below.has_value());
    auto j = convergence_to_json(rank, 0.5, std::nullopt, 5);
    CHECK(j["ranking"][1]["first_step_below"] == "unreached");
}

TEST_CASE("identical curves tie in label order") {
    auto cs = aggregate_curves(exp_log({{"Understanding", 100.0}, {"Retrieval", 100.0}}, 500), 10);
    auto rank = convergence_summary(cs, 0.5);
    CHECK(rank[0].label == "Retrieval");
    CHECK(rank[1].label == "Understanding");
    CHECK(rank[0].first_step_below == rank[1].first_step_below);
}

TEST_CASE("aggregation is linear in the losses") {
    auto log = exp_log({{"Reasoning", 80.0}, {"Format", 30.0}}, 400);
    // add noise-like duplicates at some steps
    for (std::size_t s = 0; s < 400; s += 7) log.push_back({s, "Format", 0.3});
    std::stable_sort(log.begin(), log.end(), [](const auto& a, const auto& b) { return a.step < b.step; });
    auto base = aggregate_curves(log, 9);
    for (double c : {0.5, 3.0, 17.0}) {
        auto scaled = log;
        for (auto& r : scaled) r.loss *= c;
        auto cs = aggregate_curves(scaled, 9);
        REQUIRE(cs.size() == base.size());
        for (std::size_t k = 0; k < cs.size(); ++k) {
            for (std::size_t i = 0; i < cs[k].points.size(); ++i) {
                CHECK(cs[k].points[i].value == doctest::Approx(c * base[k].points[i].value).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("window 1 reproduces the per-step means exactly") {
    std::vector<LossRecord> log{{0, "Reasoning", 1.0}, {0, "Reasoning", 3.0}, {1, "Reasoning", 0.7},
                                {3, "Reasoning", 0.2}, {3, "Reasoning", 0.4}, {3, "Reasoning", 0.9}};
    auto cs = aggregate_curves(log, 1);
    REQUIRE(cs.size() == 1);
    REQUIRE(cs[0].points.size() == 3);
    CHECK(cs[0].points[0].value == 2.0);
    CHECK(cs[0].points[1].value == 0.7);
    CHECK(cs[0].points[2].value == (0.2 + 0.4 + 0.9) / 3.0);
    CHECK(cs[0].points[2].step == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(cs[0].points[i].value == cs[0].means[i].value);
}

TEST_CASE("moving average against a direct loop") {
    std::vector<double> v;
    Rng rng(8);
    for (int i = 0; i < 97; ++i) v.push_back(rng.unit());
    for (std::size_t w : {1u, 2u, 5u, 10u, 50u, 200u}) {
        auto got = centered_moving_average(v, w);
        for (std::size_t i = 0; i < v.size(); ++i) {
            long lo = static_cast<long>(i) - static_cast<long>((w - 1) / 2);
            long hi = static_cast<long>(i) + static_cast<long>(w / 2);
            double sum = 0;
            int n = 0;
            for (long k = std::max(0L, lo); k <= std::min<long>(hi, 96); ++k, ++n) sum += v[k];
            CHECK(got[i] == doctest::Approx(sum / n).epsilon(1e-12));
        }
    }
    CHECK_THROWS_AS(centered_moving_average(v, 0), Error);
}

TEST_CASE("ranking is unchanged by uniform scaling") {
    auto log = exp_log({{"Reasoning", 400.0}, {"Retrieval", 100.0}, {"Understanding", 200.0}}, 1500);
    for (double c : {0.25, 4.0}) {
        auto scaled = log;
        for (auto& r : scaled) r.loss *= c;
        auto a = convergence_summary(aggregate_curves(log, 50), 0.5);
        auto b = convergence_summary(aggregate_curves(scaled, 50), 0.5 * c);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].label == b[i].label);
            CHECK(a[i].first_step_below == b[i].first_step_below);
        }
    }
}

TEST_CASE("format/content gap") {
    std::vector<LossRecord> log;
    for (std::size_t s = 0; s < 200; ++s) {
        log.push_back({s, "Format", 0.04});
        log.push_back({s, "Content", 0.54});
    }
    auto g = format_content_gap(aggregate_curves(log, 50));
    REQUIRE(g);
    CHECK(g->ratio == doctest::Approx(13.5));
    CHECK(g->flagged);
    log.clear();
    for (std::size_t s = 0; s < 200; ++s) {
        log.push_back({s, "Format", 0.2});
        log.push_back({s, "Content", 0.5});
    }
    CHECK_FALSE(format_content_gap(aggregate_curves(log, 50))->flagged);
    std::vector<LossRecord> only{{0, "Format", 1.0}};
    CHECK_FALSE(format_content_gap(aggregate_curves(only, 1)).has_value());
}

TEST_CASE("bad records are rejected with their index") {
    std::vector<LossRecord> nan{{0, "Reasoning", 1.0}, {1, "Reasoning", std::numeric_limits<double>::quiet_NaN()}};
    CHECK_THROWS_WITH_AS(aggregate_curves(nan, 3), doctest::Contains("record 1"), Error);
    std::vector<LossRecord> neg{{0, "Reasoning", -1.0}};
    CHECK_THROWS_WITH_AS(aggregate_curves(neg, 3), doctest::Contains("record 0"), Error);
    std::vector<LossRecord> back{{5, "Reasoning", 1.0}, {6, "Reasoning", 1.0}, {2, "Reasoning", 1.0}};
    CHECK_THROWS_WITH_AS(aggregate_curves(back, 3), doctest::Contains("record 2"), Error);
    CHECK_THROWS_WITH_AS(parse_loss_log("{\"step\": 0, \"label\": \"Reasoning\", \"loss\": 1}\n{\"step\": 1}\n"),
                         doctest::Contains("record 1"), Error);
    CHECK_THROWS_WITH_AS(parse_loss_log("{\"step\": 0, \"label\": \"Planning\", \"loss\": 1}\n"),
                         doctest::Contains("record 0"), Error);
}

TEST_CASE("curve table names its smoothing") {
    auto log = parse_loss_log("{\"step\": 0, \"label\": \"format\", \"loss\": 0.5}\n{\"step\": 1, \"label\": \"Format\", \"loss\": 0.25}\n");
    auto csv = curves_to_csv(aggregate_curves(log, 2));
    auto lines = split_lines(csv);
    if (!lines.empty() && lines.back().empty()) lines.pop_back();
    REQUIRE(lines.size() == 4);
    CHECK(lines[0] == "# smoothing: centered moving average, window 2 steps");
    CHECK(lines[1] == "step,label,smoothed,mean");
    CHECK(lines[2] == "0,Format,0.375,0.5");
    CHECK(lines[3] == "1,Format,0.25,0.25");
}
