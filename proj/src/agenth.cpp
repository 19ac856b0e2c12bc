#include "aflan/agenth.hpp"

#include <cctype>

namespace aflan {

namespace {

std::string json_text(const ordered_json& j) {
    if (j.is_string()) return j.get<std::string>();
    if (j.is_null()) return "";
    return j.dump();
}

bool iequals_prefix(std::string_view text, std::string_view prefix) {
    if (text.size() < prefix.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(text[i])) != std::tolower(static_cast<unsigned char>(prefix[i]))) {
            return false;
        }
    }
    return true;
}

// End (exclusive) of the brace-balanced object opening at `open`, skipping
// over double-quoted strings.
std::optional<std::size_t> matching_brace(std::string_view text, std::size_t open) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = open; i < text.size(); ++i) {
        char c = text[i];
        if (in_string) {
            if (escaped) escaped = false;
            else if (c == '\\') escaped = true;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') in_string = true;
        else if (c == '{') ++depth;
        else if (c == '}' && --depth == 0) return i + 1;
    }
    return std::nullopt;
}

bool has_json_key(std::string_view span, std::string_view key) {
    std::string quoted = "\"" + std::string(key) + "\"";
    for (std::size_t pos = span.find(quoted); pos != std::string_view::npos; pos = span.find(quoted, pos + 1)) {
        std::size_t k = pos + quoted.size();
        while (k < span.size() && std::isspace(static_cast<unsigned char>(span[k]))) ++k;
        if (k < span.size() && span[k] == ':') return true;
    }
    return false;
}

bool is_call_object(std::string_view span) {
    try {
        auto j = json::parse(span);
        return j.is_object() && j.contains("name") && j["name"].is_string() &&
               (j.contains("arguments") || j.contains("parameters"));
    } catch (const json::parse_error&) {
        // Function-calling corpora often quote arguments with single quotes,
        // which is not JSON; fall back to a key scan.
        return has_json_key(span, "name") && (has_json_key(span, "arguments") || has_json_key(span, "parameters"));
    }
}

std::optional<std::pair<std::size_t, std::size_t>> find_call_object(std::string_view text) {
    for (std::size_t pos = text.find('{'); pos != std::string_view::npos; pos = text.find('{', pos + 1)) {
        auto end = matching_brace(text, pos);
        if (!end) continue;
        if (is_call_object(text.substr(pos, *end - pos))) return std::make_pair(pos, *end);
    }
    return std::nullopt;
}

}  // namespace

std::string_view truth_kind_name(TruthKind k) {
    return k == TruthKind::RawResponse ? "RawResponse" : "FunctionCall";
}

TruthKind parse_truth_kind(std::string_view s) {
    if (s == "RawResponse") return TruthKind::RawResponse;
    if (s == "FunctionCall") return TruthKind::FunctionCall;
    throw Error("unknown ground-truth kind '" + std::string(s) + "'");
}

std::string_view match_policy_name(MatchPolicy p) {
    switch (p) {
        case MatchPolicy::LineAnchoredCaseSensitive: return "line-anchored-case-sensitive";
        case MatchPolicy::LineAnchoredCaseInsensitive: return "line-anchored-case-insensitive";
        case MatchPolicy::SubstringCaseSensitive: return "substring-case-sensitive";
        case MatchPolicy::SubstringCaseInsensitive: return "substring-case-insensitive";
    }
    return "unknown";
}

MatchPolicy parse_match_policy(std::string_view s) {
    for (auto p : {MatchPolicy::LineAnchoredCaseSensitive, MatchPolicy::LineAnchoredCaseInsensitive,
                   MatchPolicy::SubstringCaseSensitive, MatchPolicy::SubstringCaseInsensitive}) {
        if (match_policy_name(p) == s) return p;
    }
    throw Error("unknown match policy '" + std::string(s) + "'");
}

std::vector<std::string> DetectorConfig::validate() const {
    std::vector<std::string> v;
    auto check = [&](const std::vector<std::string>& list, const char* key) {
        if (list.empty()) v.push_back(std::string(key) + ": list must not be empty");
        for (const auto& s : list) {
            if (s.empty()) v.push_back(std::string(key) + ": empty entry");
        }
    };
    check(react_keywords, "react_keywords");
    check(general_phrases, "general_phrases");
    return v;
}

DetectorConfig DetectorConfig::from_config(const KeyValueConfig& cfg, const std::string& prefix) {
    DetectorConfig c;
    if (auto v = cfg.get(prefix + "react_keywords")) c.react_keywords = parse_string_list(prefix + "react_keywords", *v);
    if (auto v = cfg.get(prefix + "react_policy")) c.react_policy = parse_match_policy(*v);
    if (auto v = cfg.get(prefix + "general_phrases")) {
        c.general_phrases = parse_string_list(prefix + "general_phrases", *v);
    }
    if (auto v = cfg.get(prefix + "general_policy")) c.general_policy = parse_match_policy(*v);
    return c;
}

void DetectorConfig::to_config(KeyValueConfig& cfg, const std::string& prefix) const {
    cfg.set(prefix + "react_keywords", json(react_keywords).dump());
    cfg.set(prefix + "react_policy", std::string(match_policy_name(react_policy)));
    cfg.set(prefix + "general_phrases", json(general_phrases).dump());
    cfg.set(prefix + "general_policy", std::string(match_policy_name(general_policy)));
}

bool matches_any(std::string_view text, const std::vector<std::string>& needles, MatchPolicy policy) {
    switch (policy) {
        case MatchPolicy::LineAnchoredCaseSensitive:
        case MatchPolicy::LineAnchoredCaseInsensitive: {
            bool sensitive = policy == MatchPolicy::LineAnchoredCaseSensitive;
            for (const auto& raw : split_lines(text)) {
                std::string_view line = raw;
                while (!line.empty() && (line.front() == ' ' || line.front() == '\t')) line.remove_prefix(1);
                for (const auto& n : needles) {
                    if (sensitive ? starts_with(line, n) : iequals_prefix(line, n)) return true;
                }
            }
            return false;
        }
        case MatchPolicy::SubstringCaseSensitive:
            for (const auto& n : needles) {
                if (text.find(n) != std::string_view::npos) return true;
            }
            return false;
        case MatchPolicy::SubstringCaseInsensitive: {
            std::string lower = to_lower(text);
            for (const auto& n : needles) {
                if (lower.find(to_lower(n)) != std::string::npos) return true;
            }
            return false;
        }
    }
    return false;
}

HallucinationFlags detect_hallucination(std::string_view response, TruthKind truth, const DetectorConfig& config) {
    if (truth != TruthKind::RawResponse) return {};
    return {matches_any(response, config.react_keywords, config.react_policy),
            matches_any(response, config.general_phrases, config.general_policy)};
}

bool contains_call_object(std::string_view text) { return find_call_object(text).has_value(); }

TruthKind classify_reference(std::string_view reference, const DetectorConfig& config) {
    if (contains_call_object(reference) || matches_any(reference, config.react_keywords, config.react_policy)) {
        return TruthKind::FunctionCall;
    }
    return TruthKind::RawResponse;
}

BenchmarkBuild build_benchmark(std::span<const ordered_json> corpus, const DetectorConfig& config) {
    BenchmarkBuild build;
    std::size_t index = 0;
    for (const auto& rec : corpus) {
        ++index;
        BenchmarkItem item;
        item.id = rec.contains("id") ? json_text(rec["id"]) : "item-" + std::to_string(index);
        if (rec.contains("system") && rec["system"].is_string()) item.system_prompt = rec["system"].get<std::string>();
        try {
            if (rec.contains("tools")) item.system_tools = tools_from_json(rec["tools"]);
        } catch (const std::exception& e) {
            build.log.push_back(item.id + ": skipped, bad tools: " + e.what());
            continue;
        }

        std::optional<std::string> query, reference;
        if (rec.contains("reference")) reference = json_text(rec["reference"]);
        const ordered_json* turns = rec.contains("conversations") ? &rec["conversations"]
                                    : rec.contains("messages")    ? &rec["messages"]
                                                                  : nullptr;
        if (turns && turns->is_array()) {
            for (const auto& t : *turns) {
                std::string role = to_lower(t.contains("role") ? json_text(t["role"]) : json_text(t.value("from", ordered_json(""))));
                std::string content = t.contains("content") ? json_text(t["content"]) : json_text(t.value("value", ordered_json("")));
                if (role == "system" && item.system_prompt.empty() && !query) item.system_prompt = content;
                if ((role == "user" || role == "human") && !query) query = content;
                else if ((role == "assistant" || role == "gpt") && query && !reference) reference = content;
            }
        }
        if (rec.contains("query")) query = json_text(rec["query"]);
        if (!query || !reference) {
            build.log.push_back(item.id + ": skipped, missing query or reference");
            continue;
        }
        item.query = *query;
        item.reference = *reference;
        item.ground_truth_kind = classify_reference(item.reference, config);
        if (item.ground_truth_kind == TruthKind::FunctionCall) {
            ++build.call_count;
            if (auto span = find_call_object(item.reference)) {
                std::string rest = item.reference.substr(0, span->first) + item.reference.substr(span->second);
                rest = trim(replace_all(rest, "<functioncall>", ""));
                if (!rest.empty()) build.log.push_back(item.id + ": reference mixes prose and a call; labeled FunctionCall");
            }
        } else {
            ++build.raw_count;
        }
        build.items.push_back(std::move(item));
    }
    return build;
}

ordered_json benchmark_item_to_json(const BenchmarkItem& item) {
    ordered_json conv = ordered_json::array();
    if (!item.system_prompt.empty()) conv.push_back({{"role", "system"}, {"content", item.system_prompt}});
    conv.push_back({{"role", "user"}, {"content", item.query}});
    conv.push_back({{"role", "assistant"}, {"content", item.reference}});
    return ordered_json{{"id", item.id},
                        {"system", item.system_prompt},
                        {"tools", tools_to_json(item.system_tools)},
                        {"query", item.query},
                        {"ground_truth_kind", truth_kind_name(item.ground_truth_kind)},
                        {"reference", item.reference},
                        {"conversations", conv}};
}

BenchmarkItem benchmark_item_from_json(const ordered_json& j) {
    BenchmarkItem item;
    try {
        item.id = json_text(j.at("id"));
        item.system_prompt = j.value("system", std::string());
        if (j.contains("tools")) item.system_tools = tools_from_json(j["tools"]);
        item.query = j.at("query").get<std::string>();
        item.ground_truth_kind = parse_truth_kind(j.at("ground_truth_kind").get<std::string>());
        item.reference = j.value("reference", std::string());
    } catch (const ordered_json::exception& e) {
        throw Error("benchmark item '" + item.id + "': " + e.what());
    }
    return item;
}

double h_score_from_rates(double h_react, double h_general) {
    return 0.5 * ((1.0 - h_react) + (1.0 - h_general));
}

ordered_json HallucinationReport::summary_json() const {
    return ordered_json{{"n_items", items.size()},
                        {"n_raw", n_raw},
                        {"n_react_halluc", n_react_halluc},
                        {"n_general_halluc", n_general_halluc},
                        {"H_ReAct", h_react_pct()},
                        {"H_General", h_general_pct()},
                        {"H_Score", h_score_pct()}};
}

std::string HallucinationReport::audit_jsonl() const {
    std::string out;
    for (const auto& a : items) {
        out += ordered_json{{"id", a.id},
                            {"ground_truth_kind", truth_kind_name(a.truth)},
                            {"react", a.flags.react},
                            {"general", a.flags.general}}
                   .dump();
        out += '\n';
    }
    return out;
}

HallucinationReport score(const std::map<std::string, std::string>& predictions,
                          std::span<const BenchmarkItem> benchmark, const DetectorConfig& config) {
    std::vector<std::string> missing;
    for (const auto& item : benchmark) {
        if (!predictions.count(item.id)) missing.push_back(item.id);
    }
    if (!missing.empty()) {
        std::string msg = "missing predictions for " + std::to_string(missing.size()) + " benchmark item(s):";
        for (const auto& id : missing) msg += " " + id;
        throw Error(msg);
    }

    HallucinationReport r;
    for (const auto& item : benchmark) {
        auto flags = detect_hallucination(predictions.at(item.id), item.ground_truth_kind, config);
        if (item.ground_truth_kind == TruthKind::RawResponse) {
            ++r.n_raw;
            if (flags.react) ++r.n_react_halluc;
            if (flags.general) ++r.n_general_halluc;
        }
        r.items.push_back({item.id, item.ground_truth_kind, flags});
    }
    if (r.n_raw > 0) {
        r.h_react = static_cast<double>(r.n_react_halluc) / static_cast<double>(r.n_raw);
        r.h_general = static_cast<double>(r.n_general_halluc) / static_cast<double>(r.n_raw);
    }
    r.h_score = h_score_from_rates(r.h_react, r.h_general);
    return r;
}

std::map<std::string, std::string> predictions_from_json(std::span<const ordered_json> records) {
    std::map<std::string, std::string> out;
    for (const auto& rec : records) {
        if (!rec.contains("id")) throw Error("prediction record without an id");
        std::string id = json_text(rec["id"]);
        if (rec.contains("response")) {
            out[id] = json_text(rec["response"]);
            continue;
        }
        const ordered_json* turns = rec.contains("conversations") ? &rec["conversations"] : nullptr;
        std::optional<std::string> last;
        if (turns && turns->is_array()) {
            for (const auto& t : *turns) {
                std::string role = to_lower(t.contains("role") ? json_text(t["role"]) : json_text(t.value("from", ordered_json(""))));
                if (role == "assistant" || role == "gpt") {
                    last = t.contains("content") ? json_text(t["content"]) : json_text(t.value("value", ordered_json("")));
                }
            }
        }
        if (!last) throw Error("prediction '" + id + "' has neither a response nor an assistant turn");
        out[id] = *last;
    }
    return out;
}

}  // namespace aflan
