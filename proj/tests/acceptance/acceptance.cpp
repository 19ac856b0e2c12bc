// One PASS/FAIL line per acceptance criterion. Exit status is non-zero when
// any criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <set>
#include <sstream>

#include "aflan/loss.hpp"
#include "aflan/pipeline.hpp"

using namespace aflan;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kHScoreTol = 0.1;         // percent points
constexpr double kHScoreSeconds = 1.0;
constexpr double kRoundTripSeconds = 5.0;
constexpr std::size_t kMixDraws = 1000;
constexpr double kMixCountTol = 1.0;       // samples
constexpr double kMixSeconds = 30.0;
constexpr std::size_t kNegatives = 500;
constexpr double kLossRelTol = 0.01;

fs::path fixture(const std::string& name) { return fs::path(AFLAN_SOURCE_DIR) / "tests" / "fixtures" / name; }

struct Outcome {
    bool pass = true;
    std::string detail;
};

// Collects the first few failure messages.
struct Failures {
    std::size_t count = 0;
    std::ostringstream first;
    void add(const std::string& msg) {
        if (count++ < 3) first << (count > 1 ? "; " : "") << msg;
    }
};

std::map<std::string, std::string> load_labels(const std::string& name) {
    std::map<std::string, std::string> out;
    for (const auto& r : read_jsonl(fixture(name))) out[r["id"].get<std::string>()] = r["expected"].get<std::string>();
    return out;
}

// --- 1 -------------------------------------------------------------------

Outcome h_score_reproduction() {
    struct Row {
        double react, general, expected;
    };
    const Row rows[] = {{21.7, 21.0, 78.7}, {18.1, 14.0, 83.9}, {9.9, 11.9, 89.1}};
    Outcome o;
    std::ostringstream d;
    for (const auto& row : rows) {
        // 1000 raw items give 0.1-point resolution; 200 call items must not count.
        std::vector<BenchmarkItem> items;
        std::map<std::string, std::string> preds;
        auto n_react = static_cast<std::size_t>(std::llround(row.react * 10));
        auto n_general = static_cast<std::size_t>(std::llround(row.general * 10));
        for (std::size_t i = 0; i < 1200; ++i) {
            BenchmarkItem it;
            it.id = "h-" + std::to_string(i);
            it.query = "q";
            it.ground_truth_kind = i < 1000 ? TruthKind::RawResponse : TruthKind::FunctionCall;
            items.push_back(it);
            std::string resp = "Here is a plain answer.";
            if (i >= 1000) resp = "Thought: I will use the tool";
            else if (i < n_react) resp = "Thought: I should look this up.";
            else if (i < n_react + n_general) resp = "I will use the search tool.";
            preds[it.id] = resp;
        }
        auto r = score(preds, items);
        bool ok = std::fabs(r.h_react_pct() - row.react) < 1e-9 && std::fabs(r.h_general_pct() - row.general) < 1e-9 &&
                  std::fabs(r.h_score_pct() - row.expected) <= kHScoreTol + 1e-9;
        o.pass = o.pass && ok;
        char buf[96];
        std::snprintf(buf, sizeof buf, "(%.1f,%.1f)->%.2f vs %.1f", r.h_react_pct(), r.h_general_pct(), r.h_score_pct(),
                      row.expected);
        d << (d.tellp() > 0 ? ", " : "") << buf;
    }
    o.detail = d.str();
    return o;
}

// --- 2 -------------------------------------------------------------------

Outcome round_trip() {
    auto records = read_jsonl(fixture("roundtrip_200.jsonl"));
    std::size_t pass = 0;
    Failures f;
    for (const auto& rec : records) {
        auto p = parse_react(rec);
        auto* t = std::get_if<ReactTrajectory>(&p);
        if (!t) {
            f.add(rec["id"].get<std::string>() + " did not parse");
            continue;
        }
        bool ok = true;
        try {
            auto chat = conversation_from_json(ordered_json::parse(conversation_to_json(align_to_chat(*t)).dump()));
            ok = invert_alignment(chat) == *t;
        } catch (const std::exception& e) {
            ok = false;
        }
        auto back = parse_react(conversation_to_json(render_react(*t)));
        auto* u = std::get_if<ReactTrajectory>(&back);
        ok = ok && u && *u == *t;
        if (ok) ++pass;
        else f.add(t->raw_id);
    }
    Outcome o;
    o.pass = records.size() == 200 && pass == records.size();
    o.detail = std::to_string(pass) + "/" + std::to_string(records.size()) + " records" +
               (f.count ? " failed: " + f.first.str() : "");
    return o;
}

// --- 3 -------------------------------------------------------------------

std::vector<ordered_json> synthetic_records(const std::string& name, std::size_t n) {
    std::vector<ordered_json> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back({{"id", name + "-" + std::to_string(i)}});
    return out;
}

// Hamilton apportionment written out directly; ties to the lower index.
std::vector<std::size_t> oracle_hamilton(const std::vector<double>& w, std::size_t total) {
    long double sum = 0;
    for (double x : w) sum += x;
    std::vector<std::size_t> seats(w.size(), 0);
    if (total == 0 || sum <= 0) return seats;
    std::vector<std::pair<long double, std::size_t>> rem;
    std::size_t given = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        long double q = w[i] / sum * total;
        seats[i] = static_cast<std::size_t>(std::floor(q));
        given += seats[i];
        rem.push_back({q - std::floor(q), i});
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first + 1e-9L; });
    for (std::size_t k = 0; given < total; ++k, ++given) ++seats[rem[k % rem.size()].second];
    return seats;
}

Outcome mixture_apportionment() {
    Rng rng(20240701);
    Failures f;
    std::size_t checks = 0;
    double worst = 0.0;
    const char* caps[] = {channel::kReasoning, channel::kRetrieval, channel::kUnderstanding};
    const Capability cap_enum[] = {Capability::Reasoning, Capability::Retrieval, Capability::Understanding};

    for (std::size_t draw = 0; draw < kMixDraws; ++draw) {
        MixSpec spec;
        spec.seed = rng.next();
        for (int c = 0; c < 3; ++c) spec.capability_weights[cap_enum[c]] = static_cast<double>(rng.below(101)) / 100.0;
        spec.capability_weights[cap_enum[rng.below(3)]] += 0.05;
        spec.react_fraction = static_cast<double>(rng.below(51)) / 100.0;
        spec.general_agent_ratio = static_cast<double>(rng.below(9)) / 4.0;
        spec.data_fraction = static_cast<double>(rng.below(101)) / 100.0;

        std::vector<NamedSource> channels;
        std::map<std::string, std::size_t> size;
        for (auto name : caps) size[name] = 1 + rng.below(400);
        size[channel::kReact] = 1 + rng.below(400);
        size[channel::kInstructionFollowing] = rng.below(60);
        size[channel::kNegatives] = rng.below(40);
        spec.instruction_following_count = size[channel::kInstructionFollowing] == 0
                                               ? 0
                                               : rng.below(size[channel::kInstructionFollowing] + 1);
        // general large enough for any ratio drawn
        size[channel::kGeneral] = 4000;
        for (const auto& [name, n] : size) channels.push_back({name, synthetic_records(name, n)});

        MixResult full;
        MixResult part;
        double smaller = spec.data_fraction * static_cast<double>(rng.below(101)) / 100.0;
        try {
            full = mix_channels(spec, channels);
            auto spec2 = spec;
            spec2.data_fraction = smaller;
            part = mix_channels(spec2, channels);
        } catch (const std::exception& e) {
            f.add("draw " + std::to_string(draw) + ": " + e.what());
            continue;
        }
        const auto& src = full.manifest.sources;
        auto target = [&](const std::string& n) { return src.count(n) ? src.at(n).target : 0; };

        // Proportional quotas from the recipe weights, independently of the composer.
        std::vector<std::string> names;
        std::vector<double> weights;
        double chat = 0.0;
        for (int c = 0; c < 3; ++c) {
            double w = spec.capability_weights[cap_enum[c]] * static_cast<double>(size[caps[c]]);
            names.push_back(caps[c]);
            weights.push_back(w);
            chat += w;
        }
        names.push_back(channel::kReact);
        weights.push_back(chat * spec.react_fraction / (1.0 - spec.react_fraction));
        std::size_t total = 0;
        for (const auto& n : names) total += target(n);
        double wsum = 0.0;
        for (double w : weights) wsum += w;
        auto seats = oracle_hamilton(weights, total);
        for (std::size_t i = 0; i < names.size(); ++i) {
            double quota = wsum > 0 ? weights[i] / wsum * static_cast<double>(total) : 0.0;
            double dev = std::fabs(static_cast<double>(target(names[i])) - quota);
            worst = std::max(worst, dev);
            ++checks;
            if (dev > kMixCountTol + 1e-9 || seats[i] != target(names[i])) {
                f.add("draw " + std::to_string(draw) + " " + names[i] + ": target " + std::to_string(target(names[i])) +
                      " quota " + std::to_string(quota));
            }
            if (target(names[i]) > size[names[i]]) f.add("draw " + std::to_string(draw) + " " + names[i] + " oversized");
        }
        std::size_t agent = total + target(channel::kInstructionFollowing) + target(channel::kNegatives);
        if (target(channel::kInstructionFollowing) != spec.instruction_following_count ||
            target(channel::kNegatives) != size[channel::kNegatives]) {
            f.add("draw " + std::to_string(draw) + ": fixed channels off");
        }
        double general_quota = spec.general_agent_ratio * static_cast<double>(agent);
        if (std::fabs(static_cast<double>(target(channel::kGeneral)) - general_quota) > kMixCountTol) {
            f.add("draw " + std::to_string(draw) + ": general " + std::to_string(target(channel::kGeneral)));
        }
        ++checks;

        // Emitted counts against the fraction of each target, in both slices.
        for (const auto* r : {&full, &part}) {
            double frac = r == &full ? spec.data_fraction : smaller;
            std::size_t sum = 0;
            for (const auto& [name, m] : r->manifest.sources) {
                double dev = std::fabs(static_cast<double>(m.emitted) - frac * static_cast<double>(m.target));
                worst = std::max(worst, dev);
                ++checks;
                if (dev > kMixCountTol + 1e-9) f.add("draw " + std::to_string(draw) + " " + name + " emitted off");
                sum += m.emitted;
            }
            if (sum != r->records.size()) f.add("draw " + std::to_string(draw) + ": counts do not sum");
        }

        // Nesting: the smaller slice is a sub-multiset of the larger one.
        std::multiset<std::pair<std::size_t, std::size_t>> big(full.provenance.begin(), full.provenance.end());
        std::multiset<std::pair<std::size_t, std::size_t>> small(part.provenance.begin(), part.provenance.end());
        ++checks;
        if (!std::includes(big.begin(), big.end(), small.begin(), small.end())) {
            f.add("draw " + std::to_string(draw) + ": slices do not nest");
        }
    }
    Outcome o;
    o.pass = f.count == 0;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu draws, %zu checks, max deviation %.3f (tol %.1f)", kMixDraws, checks, worst,
                  kMixCountTol);
    o.detail = buf + (f.count ? "; " + std::to_string(f.count) + " failures: " + f.first.str() : "");
    return o;
}

// --- 4 -------------------------------------------------------------------

Outcome filter_fidelity() {
    auto labels = load_labels("filter_fidelity_100.labels.jsonl");
    auto records = read_jsonl(fixture("filter_fidelity_100.jsonl"));
    FilterPolicy policy;
    policy.few_shot = FewShotPolicy::Drop;
    auto r = ingest_records(records, std::nullopt, policy);
    std::map<std::string, std::string> got;
    for (const auto& t : r.kept) got[t.raw_id] = "kept";
    for (const auto& d : r.drop_log) got[d["id"].get<std::string>()] = d["code"].get<std::string>();
    std::size_t match = 0;
    std::set<std::string> codes;
    Failures f;
    for (const auto& [id, expected] : labels) {
        if (expected != "kept") codes.insert(expected);
        auto it = got.find(id);
        if (it != got.end() && it->second == expected) ++match;
        else f.add(id + " expected " + expected + " got " + (it == got.end() ? "nothing" : it->second));
    }
    Outcome o;
    o.pass = labels.size() == 100 && match == 100 && codes.size() == 5 && got.size() == 100;
    o.detail = std::to_string(match) + "/" + std::to_string(labels.size()) + " decisions match, " +
               std::to_string(codes.size()) + " drop codes exercised" + (f.count ? "; " + f.first.str() : "");
    return o;
}

// --- 5 -------------------------------------------------------------------

Outcome detector_correctness() {
    auto cases = read_jsonl(fixture("detector_60.jsonl"));
    std::size_t errors = 0;
    Failures f;
    for (const auto& c : cases) {
        auto flags = detect_hallucination(c["response"].get<std::string>(), parse_truth_kind(c["truth"].get<std::string>()));
        if (flags.react != c["react"].get<bool>() || flags.general != c["general"].get<bool>()) {
            ++errors;
            f.add(c["id"].get<std::string>());
        }
    }
    Outcome o;
    o.pass = cases.size() == 60 && errors == 0;
    o.detail = std::to_string(cases.size() - errors) + "/" + std::to_string(cases.size()) + " cases, " +
               std::to_string(errors) + " errors" + (f.count ? ": " + f.first.str() : "");
    return o;
}

// --- 6 -------------------------------------------------------------------

std::vector<ReactTrajectory> synthetic_agent_corpus(std::size_t n) {
    const char* subjects[] = {"bitcoin price history", "weather forecast", "flight delays", "stock earnings",
                              "hotel availability", "train timetable", "currency exchange rate", "movie showtimes",
                              "restaurant reviews", "traffic conditions", "football scores", "package tracking"};
    const char* places[] = {"Paris", "Tokyo", "Lagos", "Lima", "Oslo", "Cairo", "Denver", "Hanoi", "Quito", "Perth"};
    std::vector<ToolSchema> tools;
    for (int i = 0; i < 30; ++i) {
        ToolSchema t;
        t.name = "tool_" + std::to_string(i);
        t.description = "Synthetic tool " + std::to_string(i);
        t.parameters.push_back({"query", "string", "what to look up", true});
        tools.push_back(t);
    }
    Rng rng(7);
    std::vector<ReactTrajectory> out;
    for (std::size_t i = 0; i < n; ++i) {
        ReactTrajectory t;
        t.source = Source{SourceFamily::ToolBench, ""};
        t.raw_id = "syn-" + std::to_string(i);
        t.system_prompt = "You can call tools.";
        std::size_t k = 2 + rng.below(3);
        std::set<std::size_t> chosen;
        while (chosen.size() < k) chosen.insert(rng.below(tools.size()));
        for (auto c : chosen) t.tools.push_back(tools[c]);
        t.query = std::string("Please check the ") + subjects[i % 12] + " for " + places[(i / 12) % 10] + " on day " +
                  std::to_string(i / 120 + 1) + ".";
        ReactStep s;
        s.thought = "I need data.";
        s.action = t.tools.front().name;
        s.action_input = {{"query", "x"}};
        s.observation = "ok";
        t.steps.push_back(s);
        t.final_answer = "Done.";
        out.push_back(t);
    }
    return out;
}

Outcome negative_self_consistency() {
    auto corpus = synthetic_agent_corpus(720);
    std::map<std::string, std::set<std::string>> source_tools;
    for (const auto& t : corpus) {
        for (const auto& tool : t.tools) source_tools[t.raw_id].insert(tool.name);
        for (const auto& s : t.steps) source_tools[t.raw_id].insert(s.action);
    }
    NegativeSettings settings;
    settings.queries = kNegatives;
    settings.tools_per_sample = 2;
    settings.generator = GeneratorKind::Template;
    DetectorConfig detector;
    auto r = synthesize_negatives(corpus, settings, detector, 99);

    std::size_t flagged = 0, b = 0, c = 0, violations = 0, shape = 0;
    for (const auto& s : r.run.samples) {
        if (detect_hallucination(s.response, TruthKind::RawResponse, detector).any()) ++flagged;
        if (s.quadrant == Quadrant::B_ToolsNormalQuery) {
            ++b;
            if (s.system_tools.empty()) ++shape;
            for (const auto& t : s.system_tools) violations += source_tools[s.raw_id].count(t.name);
        } else if (s.quadrant == Quadrant::C_NoToolsToolQuery) {
            ++c;
            if (!s.system_tools.empty()) ++shape;
        } else {
            ++shape;
        }
    }
    std::size_t n = r.run.samples.size();
    bool balanced = (b > c ? b - c : c - b) <= 1;
    Outcome o;
    o.pass = n == kNegatives && r.run.drops.empty() && flagged == 0 && balanced && violations == 0 && shape == 0;
    o.detail = std::to_string(n) + " samples, " + std::to_string(flagged) + " flagged, B/C " + std::to_string(b) + "/" +
               std::to_string(c) + ", " + std::to_string(violations) + " irrelevance violations, " +
               std::to_string(r.run.drops.size()) + " drops";
    return o;
}

// --- 7 -------------------------------------------------------------------

double window_mean(double scale, double tau, double floor_value, std::size_t lo, std::size_t hi) {
    double r = std::exp(-1.0 / tau);
    double m = static_cast<double>(hi - lo + 1);
    return floor_value + scale * std::exp(-static_cast<double>(lo) / tau) * (1 - std::pow(r, m)) / (1 - r) / m;
}

Outcome loss_analytics() {
    struct Decay {
        const char* label;
        double tau;
        double floor;
    };
    // Instruction following fastest, reasoning slowest; Format/Content settle at 0.04 and 0.54.
    const Decay decays[] = {{"InstructionFollowing", 50, 0.0}, {"Retrieval", 100, 0.0}, {"Understanding", 200, 0.0},
                            {"Reasoning", 400, 0.0},          {"Format", 60, 0.04},    {"Content", 150, 0.54}};
    const std::size_t steps = 3000, window = kDefaultLossWindow;
    std::vector<LossRecord> log;
    for (std::size_t s = 0; s < steps; ++s) {
        for (const auto& d : decays) log.push_back({s, d.label, d.floor + 2.0 * std::exp(-static_cast<double>(s) / d.tau)});
    }
    auto curves = aggregate_curves(log, window);
    double worst = 0.0;
    for (const auto& c : curves) {
        const Decay* d = nullptr;
        for (const auto& x : decays) {
            if (c.label == x.label) d = &x;
        }
        for (std::size_t i = 0; i < c.points.size(); ++i) {
            std::size_t lo = i >= (window - 1) / 2 ? i - (window - 1) / 2 : 0;
            std::size_t hi = std::min(steps - 1, i + window / 2);
            double expect = window_mean(2.0, d->tau, d->floor, lo, hi);
            worst = std::max(worst, std::fabs(c.points[i].value - expect) / expect);
        }
    }
    std::vector<LossCurve> caps;
    for (const auto& c : curves) {
        if (c.label != "Format" && c.label != "Content") caps.push_back(c);
    }
    auto rank = convergence_summary(caps, 0.5);
    std::string order;
    for (const auto& e : rank) order += (order.empty() ? "" : " < ") + e.label;
    bool rank_ok = rank.size() == 4 && rank[0].label == "InstructionFollowing" && rank[1].label == "Retrieval" &&
                   rank[2].label == "Understanding" && rank[3].label == "Reasoning";
    for (const auto& e : rank) rank_ok = rank_ok && e.first_step_below.has_value();
    auto gap = format_content_gap(curves, 5.0);
    Outcome o;
    o.pass = worst <= kLossRelTol && rank_ok && gap && gap->flagged;
    char buf[256];
    std::snprintf(buf, sizeof buf, "max rel error %.2e (tol %.0e), ranking %s, gap %.3f vs %.3f ratio %.1f %s", worst,
                  kLossRelTol, order.c_str(), gap ? gap->format_final : 0.0, gap ? gap->content_final : 0.0,
                  gap ? gap->ratio : 0.0, gap && gap->flagged ? "flagged" : "not flagged");
    o.detail = buf;
    return o;
}

// --- 8 -------------------------------------------------------------------

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    if (!fs::exists(root)) return out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = read_file(e.path());
    }
    return out;
}

Outcome determinism() {
    auto base = fs::temp_directory_path() / "aflan-acceptance-determinism";
    fs::remove_all(base);
    fs::create_directories(base);
    auto configs = fs::path(AFLAN_SOURCE_DIR) / "configs";
    auto cfg = KeyValueConfig::load(configs / "default.conf");
    for (auto key : {"input.toolbench", "input.agentinstruct", "input.general", "templates"}) {
        cfg.set(key, (configs / *cfg.get(key)).lexically_normal().string());
    }
    int codes[2];
    for (int i = 0; i < 2; ++i) {
        auto c = cfg;
        c.set("output_dir", (base / ("run" + std::to_string(i))).string());
        auto path = base / ("run" + std::to_string(i) + ".conf");
        write_file_atomic(path, c.serialize());
        std::string cmd = std::string("\"") + AFLAN_CLI + "\" run --config \"" + path.string() + "\" >/dev/null 2>&1";
        int status = std::system(cmd.c_str());
        codes[i] = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }
    auto a = tree(base / "run0");
    auto b = tree(base / "run1");
    std::size_t bytes = 0;
    for (const auto& [p, s] : a) bytes += s.size();
    std::size_t differing = 0;
    for (const auto& [p, s] : a) {
        auto it = b.find(p);
        if (it == b.end() || it->second != s) ++differing;
    }
    differing += b.size() > a.size() ? b.size() - a.size() : 0;
    Outcome o;
    o.pass = codes[0] == 0 && codes[1] == 0 && !a.empty() && a == b;
    o.detail = std::to_string(a.size()) + " files, " + std::to_string(bytes) + " bytes, " + std::to_string(differing) +
               " differing; exit codes " + std::to_string(codes[0]) + "/" + std::to_string(codes[1]);
    return o;
}

}  // namespace

int main() {
    struct Criterion {
        const char* name;
        std::function<Outcome()> run;
        double time_limit;  // seconds; 0 = none
    };
    const Criterion criteria[] = {
        {"H_Score reproduction", h_score_reproduction, kHScoreSeconds},
        {"Round-trip suite", round_trip, kRoundTripSeconds},
        {"Mixture apportionment", mixture_apportionment, kMixSeconds},
        {"Filter fidelity", filter_fidelity, 0},
        {"Detector correctness", detector_correctness, 0},
        {"Negative-sample self-consistency", negative_self_consistency, 0},
        {"Loss analytics", loss_analytics, 0},
        {"Determinism", determinism, 0},
    };
    int failed = 0;
    int index = 0;
    for (const auto& c : criteria) {
        ++index;
        auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        bool in_time = c.time_limit <= 0 || secs < c.time_limit;
        if (!in_time) o.detail += "; over the time limit";
        bool pass = o.pass && in_time;
        if (!pass) ++failed;
        char limit[32] = "";
        if (c.time_limit > 0) std::snprintf(limit, sizeof limit, " limit %.0f s", c.time_limit);
        std::printf("%s [%d/8] %s: %s (%.2f s%s)\n", pass ? "PASS" : "FAIL", index, c.name, o.detail.c_str(), secs, limit);
        std::fflush(stdout);
    }
    std::printf("%d/8 criteria passed\n", 8 - failed);
    return failed == 0 ? 0 : 1;
}
