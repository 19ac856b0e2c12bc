#include "aflan/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace aflan {

std::vector<std::size_t> largest_remainder(std::span<const double> weights, std::size_t total) {
    std::vector<std::size_t> seats(weights.size(), 0);
    long double sum = 0;
    for (double w : weights) {
        if (!(w >= 0) || !std::isfinite(w)) throw Error("apportionment weights must be finite and non-negative");
        sum += w;
    }
    if (total == 0) return seats;
    if (sum <= 0) throw Error("apportionment needs at least one positive weight");

    // Remainders are compared on a fixed grid so quotas that are equal in
    // exact arithmetic tie, and ties go to the lower index.
    std::vector<long long> frac(weights.size());
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        long double quota = static_cast<long double>(weights[i]) / sum * static_cast<long double>(total);
        auto whole = static_cast<std::size_t>(std::floor(quota));
        seats[i] = whole;
        frac[i] = std::llround((quota - static_cast<long double>(whole)) * 1e9L);
        assigned += whole;
    }
    std::vector<std::size_t> order(weights.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    // Rounding in the quotas can overshoot by a seat; take it back from the
    // smallest remainders.
    for (auto it = order.rbegin(); assigned > total && it != order.rend(); ++it) {
        if (seats[*it] > 0) {
            --seats[*it];
            --assigned;
        }
    }
    for (std::size_t k = 0; assigned < total; k = (k + 1) % order.size()) {
        if (weights[order[k]] > 0) {
            ++seats[order[k]];
            ++assigned;
        }
    }
    return seats;
}

std::vector<std::size_t> slice_indices(std::size_t n, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error("slice fraction must lie in [0, 1]");
    auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    keep = std::min(keep, n);
    Rng rng(seed);
    auto perm = rng.permutation(n);
    perm.resize(keep);
    std::sort(perm.begin(), perm.end());
    return perm;
}

std::string record_text(const ordered_json& record) {
    if (record.is_object() && record.contains("conversations") && record["conversations"].is_array()) {
        std::string out;
        for (const auto& t : record["conversations"]) {
            if (t.is_object()) {
                if (t.contains("content") && t["content"].is_string()) out += t["content"].get<std::string>() + "\n";
                else if (t.contains("value") && t["value"].is_string()) out += t["value"].get<std::string>() + "\n";
            }
        }
        return out;
    }
    return record.dump();
}

std::map<std::string, std::size_t> plan_targets(const MixPlan& plan,
                                                const std::map<std::string, std::size_t>& available) {
    std::map<std::string, std::size_t> targets;
    std::vector<double> weights;
    std::vector<std::string> weighted;
    for (const auto& q : plan.sources) {
        if (q.fixed_count) {
            targets[q.name] = *q.fixed_count;
        } else {
            weights.push_back(q.weight);
            weighted.push_back(q.name);
        }
    }
    std::size_t total = 0;
    if (plan.total) {
        total = *plan.total;
    } else {
        double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
        std::optional<double> limit;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] <= 0) continue;
            auto it = available.find(weighted[i]);
            double avail = it == available.end() ? 0.0 : static_cast<double>(it->second);
            double l = avail * wsum / weights[i];
            limit = limit ? std::min(*limit, l) : l;
        }
        total = limit ? static_cast<std::size_t>(std::floor(*limit + 1e-9)) : 0;
    }
    if (!weights.empty()) {
        auto seats = largest_remainder(weights, total);
        for (std::size_t i = 0; i < weighted.size(); ++i) targets[weighted[i]] = seats[i];
    } else if (total > 0) {
        throw Error("mixture plan sets a total but has no weighted sources");
    }
    return targets;
}

std::string plan_hash(const MixPlan& plan) {
    std::ostringstream os;
    os.precision(17);
    for (const auto& q : plan.sources) {
        os << q.name << '|' << q.weight << '|' << (q.fixed_count ? std::to_string(*q.fixed_count) : "-") << ';';
    }
    os << "total=" << (plan.total ? std::to_string(*plan.total) : "-") << ";seed=" << plan.seed
       << ";oversample=" << plan.oversample << ";fraction=" << plan.data_fraction;
    return hex64(fnv1a64(os.str()));
}

ordered_json MixManifest::to_json() const {
    ordered_json src = ordered_json::object();
    for (const auto& [name, m] : sources) {
        src[name] = ordered_json{{"available", m.available},
                                 {"target", m.target},
                                 {"emitted", m.emitted},
                                 {"repeats", m.repeats},
                                 {"tokens", m.tokens},
                                 {"tokens_millions", m.tokens_millions}};
    }
    return ordered_json{{"output_size", output_size},
                        {"seed", seed},
                        {"spec_hash", spec_hash},
                        {"data_fraction", data_fraction},
                        {"sources", src}};
}

MixResult compose_mixture(const std::vector<NamedSource>& sources, const MixPlan& plan, const TokenCounter& counter) {
    std::map<std::string, std::size_t> index;
    std::map<std::string, std::size_t> available;
    for (std::size_t i = 0; i < sources.size(); ++i) {
        index[sources[i].name] = i;
        available[sources[i].name] = sources[i].records.size();
    }
    for (const auto& q : plan.sources) {
        if (!index.count(q.name)) throw Error("mixture source '" + q.name + "' is missing");
    }
    auto targets = plan_targets(plan, available);

    MixResult result;
    auto& manifest = result.manifest;
    manifest.seed = plan.seed;
    manifest.spec_hash = plan_hash(plan);
    manifest.data_fraction = plan.data_fraction;

    if (!(plan.data_fraction >= 0.0 && plan.data_fraction <= 1.0)) throw Error("data_fraction must lie in [0, 1]");

    // Each source keeps a prefix of its own draw sequence, so per-source
    // counts track the apportionment at every fraction and smaller
    // fractions select subsets of larger ones.
    struct Pick {
        std::size_t src;
        std::size_t idx;
        bool kept;
    };
    std::vector<Pick> picks;
    for (const auto& q : plan.sources) {
        std::size_t src = index[q.name];
        std::size_t n = sources[src].records.size();
        std::size_t t = targets[q.name];
        auto& m = manifest.sources[q.name];
        m.available = n;
        m.target = t;
        if (t > n && (!plan.oversample || n == 0)) {
            throw Error("mixture source '" + q.name + "' has " + std::to_string(n) + " samples but " +
                        std::to_string(t) + " were requested" + (plan.oversample ? "" : " (oversampling is off)"));
        }
        auto keep = static_cast<std::size_t>(std::llround(plan.data_fraction * static_cast<double>(t)));
        Rng rng(derive_seed(plan.seed, "mix/" + q.name));
        std::size_t drawn = 0;
        while (drawn < t) {
            auto perm = rng.permutation(n);
            std::size_t take = std::min(t - drawn, n);
            for (std::size_t k = 0; k < take; ++k, ++drawn) picks.push_back({src, perm[k], drawn < keep});
        }
    }
    Rng order(derive_seed(plan.seed, "mix/order"));
    order.shuffle(picks);

    std::map<std::string, std::set<std::size_t>> distinct;
    std::map<std::string, std::size_t> tokens;
    for (const auto& p : picks) {
        if (!p.kept) continue;
        const auto& rec = sources[p.src].records[p.idx];
        result.records.push_back(rec);
        result.provenance.emplace_back(p.src, p.idx);
        auto& m = manifest.sources[sources[p.src].name];
        ++m.emitted;
        tokens[sources[p.src].name] += counter.count(record_text(rec));
        distinct[sources[p.src].name].insert(p.idx);
    }
    for (auto& [name, m] : manifest.sources) {
        m.repeats = m.emitted - distinct[name].size();
        m.tokens = tokens[name];
        m.tokens_millions = static_cast<double>(m.tokens) / 1e6;
    }
    manifest.output_size = result.records.size();
    return result;
}

std::vector<std::string> MixSpec::validate() const {
    std::vector<std::string> v;
    bool any_positive = false;
    for (const auto& [cap, w] : capability_weights) {
        std::string key = "weight." + capability_key(cap);
        if (cap == Capability::InstructionFollowing) {
            v.push_back(key + ": instruction following is a fixed count (instruction_following_count)");
        } else if (!std::isfinite(w) || w < 0) {
            v.push_back(key + ": weight must be a finite non-negative number");
        } else if (w > 0) {
            any_positive = true;
        }
    }
    if (!any_positive && react_fraction < 1.0) v.push_back("weight: at least one capability weight must be positive");
    if (!(react_fraction >= 0.0 && react_fraction <= 1.0)) v.push_back("react_fraction: must lie in [0, 1]");
    if (!(data_fraction >= 0.0 && data_fraction <= 1.0)) v.push_back("data_fraction: must lie in [0, 1]");
    if (!std::isfinite(general_agent_ratio) || general_agent_ratio < 0) {
        v.push_back("general_agent_ratio: must be a finite non-negative ratio");
    }
    return v;
}

MixSpec MixSpec::from_config(const KeyValueConfig& cfg, const std::string& prefix) {
    MixSpec s;
    for (const auto& key : cfg.keys_with_prefix(prefix + "weight.")) {
        std::string name = key.substr(prefix.size() + 7);
        s.capability_weights[parse_capability(name)] = parse_number(key, *cfg.get(key));
    }
    if (auto v = cfg.get(prefix + "react_fraction")) s.react_fraction = parse_ratio(prefix + "react_fraction", *v);
    if (auto v = cfg.get(prefix + "general_agent_ratio")) {
        s.general_agent_ratio = parse_ratio(prefix + "general_agent_ratio", *v);
    }
    if (auto v = cfg.get(prefix + "instruction_following_count")) {
        auto n = parse_integer(prefix + "instruction_following_count", *v);
        if (n < 0) throw Error(prefix + "instruction_following_count: must be non-negative");
        s.instruction_following_count = static_cast<std::size_t>(n);
    }
    if (auto v = cfg.get(prefix + "negative_source")) s.negative_source = *v;
    if (auto v = cfg.get(prefix + "data_fraction")) s.data_fraction = parse_ratio(prefix + "data_fraction", *v);
    if (auto v = cfg.get(prefix + "seed")) s.seed = static_cast<std::uint64_t>(parse_integer(prefix + "seed", *v));
    if (auto v = cfg.get(prefix + "oversample")) s.oversample = parse_bool(prefix + "oversample", *v);
    for (const auto& key : cfg.keys_with_prefix(prefix + "source.")) {
        s.source_paths[key.substr(prefix.size() + 7)] = *cfg.get(key);
    }
    return s;
}

void MixSpec::to_config(KeyValueConfig& cfg, const std::string& prefix) const {
    auto num = [](double d) {
        std::ostringstream os;
        os.precision(17);
        os << d;
        return os.str();
    };
    for (const auto& [cap, w] : capability_weights) cfg.set(prefix + "weight." + capability_key(cap), num(w));
    cfg.set(prefix + "react_fraction", num(react_fraction));
    cfg.set(prefix + "general_agent_ratio", num(general_agent_ratio));
    cfg.set(prefix + "instruction_following_count", std::to_string(instruction_following_count));
    if (negative_source) cfg.set(prefix + "negative_source", *negative_source);
    cfg.set(prefix + "data_fraction", num(data_fraction));
    cfg.set(prefix + "seed", std::to_string(seed));
    cfg.set(prefix + "oversample", oversample ? "true" : "false");
    for (const auto& [name, path] : source_paths) cfg.set(prefix + "source." + name, path);
}

MixPlan recipe_plan(const MixSpec& spec, const std::map<std::string, std::size_t>& available) {
    MixPlan plan;
    plan.seed = spec.seed;
    plan.oversample = spec.oversample;
    plan.data_fraction = spec.data_fraction;

    auto has = [&](const char* name) { return available.count(name) > 0; };
    const double f = spec.react_fraction;

    double chat_weight = 0.0;
    for (auto cap : {Capability::Reasoning, Capability::Retrieval, Capability::Understanding}) {
        std::string name = capability_key(cap);
        if (!available.count(name)) continue;
        auto it = spec.capability_weights.find(cap);
        double w = it == spec.capability_weights.end() ? 0.0 : it->second;
        if (f >= 1.0) w = 0.0;
        double effective = w * static_cast<double>(available.at(name));
        plan.sources.push_back({name, effective, std::nullopt});
        chat_weight += effective;
    }

    double weighted_total = chat_weight;
    if (has(channel::kReact)) {
        double react_weight = 0.0;
        if (f >= 1.0) {
            react_weight = static_cast<double>(available.at(channel::kReact));
        } else if (f > 0.0) {
            react_weight = chat_weight * f / (1.0 - f);
        }
        plan.sources.push_back({channel::kReact, react_weight, std::nullopt});
        weighted_total += react_weight;
    }
    // Rounded total, lowered while any capability target would exceed its
    // subset.
    auto total = static_cast<std::size_t>(std::llround(weighted_total));
    if (weighted_total > 0) {
        std::vector<double> weights;
        for (const auto& q : plan.sources) weights.push_back(q.weight);
        while (total > 0) {
            auto seats = largest_remainder(weights, total);
            bool fits = true;
            for (std::size_t i = 0; i < plan.sources.size(); ++i) {
                if (seats[i] > available.at(plan.sources[i].name)) fits = false;
            }
            if (fits) break;
            --total;
        }
    }
    plan.total = total;

    std::size_t agent_total = *plan.total;
    if (has(channel::kInstructionFollowing) && spec.instruction_following_count > 0) {
        plan.sources.push_back({channel::kInstructionFollowing, 0.0, spec.instruction_following_count});
        agent_total += spec.instruction_following_count;
    }
    if (has(channel::kNegatives)) {
        std::size_t n = available.at(channel::kNegatives);
        plan.sources.push_back({channel::kNegatives, 0.0, n});
        agent_total += n;
    }
    if (has(channel::kGeneral) && spec.general_agent_ratio > 0) {
        auto n = static_cast<std::size_t>(std::llround(spec.general_agent_ratio * static_cast<double>(agent_total)));
        plan.sources.push_back({channel::kGeneral, 0.0, n});
    }
    return plan;
}

}  // namespace aflan
