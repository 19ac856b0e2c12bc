#include "aflan/trajectory.hpp"

#include <algorithm>
#include <set>

namespace aflan {

namespace {

json to_plain(const ordered_json& j) { return json::parse(j.dump()); }
ordered_json to_ordered(const json& j) { return ordered_json::parse(j.dump()); }

enum class TurnRole { System, User, Assistant, Observation };

std::optional<TurnRole> normalize_role(std::string_view raw) {
    std::string r = to_lower(raw);
    if (r == "system") return TurnRole::System;
    if (r == "user" || r == "human") return TurnRole::User;
    if (r == "assistant" || r == "gpt" || r == "bot") return TurnRole::Assistant;
    if (r == "function" || r == "tool" || r == "observation" || r == "environment") return TurnRole::Observation;
    return std::nullopt;
}

struct MarkerMatch {
    SegmentKind kind;
    const std::string* alias;
};

// Longest alias first so that overlapping aliases resolve deterministically.
std::vector<MarkerMatch> marker_table(const MarkerGrammar& g) {
    std::vector<MarkerMatch> table;
    auto add = [&](SegmentKind k, const std::vector<std::string>& aliases) {
        for (const auto& a : aliases) table.push_back({k, &a});
    };
    add(SegmentKind::Thought, g.thought);
    add(SegmentKind::Action, g.action);
    add(SegmentKind::ActionInput, g.action_input);
    add(SegmentKind::Observation, g.observation);
    add(SegmentKind::FinalAnswer, g.final_answer);
    std::stable_sort(table.begin(), table.end(),
                     [](const MarkerMatch& a, const MarkerMatch& b) { return a.alias->size() > b.alias->size(); });
    return table;
}

std::optional<MarkerMatch> match_marker(std::string_view line, const std::vector<MarkerMatch>& table) {
    for (const auto& m : table) {
        if (!m.alias->empty() && starts_with(line, *m.alias)) return m;
    }
    return std::nullopt;
}

const std::string& primary(const std::vector<std::string>& aliases) {
    if (aliases.empty()) throw Error("marker grammar has an empty alias list");
    return aliases.front();
}

// Walks marker lines and reports, for each completed T/A/AI cycle, the line
// index of the Thought that opened it.
std::vector<std::size_t> cycle_starts(const std::vector<std::string>& lines, const MarkerGrammar& g) {
    auto table = marker_table(g);
    std::vector<std::size_t> starts;
    int state = 0;
    std::size_t open = 0;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        auto m = match_marker(lines[i], table);
        if (!m) continue;
        switch (m->kind) {
            case SegmentKind::Thought:
                state = 1;
                open = i;
                break;
            case SegmentKind::Action:
                state = state == 1 ? 2 : 0;
                break;
            case SegmentKind::ActionInput:
                if (state == 2) starts.push_back(open);
                state = 0;
                break;
            default:
                state = 0;
                break;
        }
    }
    return starts;
}

std::string json_string_or_dump(const ordered_json& j) {
    if (j.is_string()) return j.get<std::string>();
    if (j.is_null()) return "";
    return j.dump();
}

}  // namespace

std::string_view family_name(SourceFamily f) {
    switch (f) {
        case SourceFamily::AgentInstruct: return "agentinstruct";
        case SourceFamily::ToolBench: return "toolbench";
        case SourceFamily::General: return "general";
    }
    return "unknown";
}

SourceFamily parse_family(std::string_view name) {
    std::string n = to_lower(name);
    if (n == "agentinstruct") return SourceFamily::AgentInstruct;
    if (n == "toolbench") return SourceFamily::ToolBench;
    if (n == "general") return SourceFamily::General;
    throw Error("unknown source family '" + std::string(name) + "'");
}

std::string Source::label() const {
    std::string out(family_name(family));
    if (!task.empty()) out += "/" + task;
    return out;
}

Source Source::from_label(std::string_view label) {
    auto slash = label.find('/');
    Source s;
    s.family = parse_family(label.substr(0, slash));
    if (slash != std::string_view::npos) s.task = std::string(label.substr(slash + 1));
    return s;
}

const ToolSchema* ReactTrajectory::find_tool(std::string_view name) const {
    for (const auto& t : tools) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

std::string_view drop_code_name(DropCode c) {
    switch (c) {
        case DropCode::MalformedFormat: return "MalformedFormat";
        case DropCode::FewShotExample: return "FewShotExample";
        case DropCode::NoFinalAnswer: return "NoFinalAnswer";
        case DropCode::DfsdtRestart: return "DfsdtRestart";
        case DropCode::UnparseableArgs: return "UnparseableArgs";
    }
    return "Unknown";
}

DropCode parse_drop_code(std::string_view name) {
    for (auto c : {DropCode::MalformedFormat, DropCode::FewShotExample, DropCode::NoFinalAnswer,
                   DropCode::DfsdtRestart, DropCode::UnparseableArgs}) {
        if (drop_code_name(c) == name) return c;
    }
    throw Error("unknown drop code '" + std::string(name) + "'");
}

bool MarkerGrammar::is_finish(std::string_view a) const { return to_lower(a) == to_lower(finish_action); }

Segmentation segment_react(std::string_view text, const MarkerGrammar& grammar) {
    auto table = marker_table(grammar);
    Segmentation out;
    std::string* current = &out.leading;
    for (const auto& line : split_lines(text)) {
        if (auto m = match_marker(line, table)) {
            out.segments.push_back({m->kind, *m->alias, line.substr(m->alias->size())});
            current = &out.segments.back().body;
            continue;
        }
        if (!current->empty() || current != &out.leading) current->push_back('\n');
        current->append(line);
    }
    out.leading = trim(out.leading);
    for (auto& s : out.segments) s.body = trim(s.body);
    return out;
}

std::string join_segments(const Segmentation& seg) {
    std::string out = seg.leading;
    for (const auto& s : seg.segments) {
        if (!out.empty()) out += '\n';
        out += s.marker;
        if (!s.body.empty()) out += " " + s.body;
    }
    return out;
}

std::optional<json> parse_action_input(std::string_view body) {
    std::string text = trim(body);
    if (text.empty()) return json::object();
    if (text.front() == '{' || text.front() == '[') {
        try {
            json j = json::parse(text);
            if (!j.is_object()) return std::nullopt;
            return j;
        } catch (const json::parse_error&) {
            return std::nullopt;
        }
    }
    return json{{"raw", text}};
}

std::optional<std::string> validate_trajectory(const ReactTrajectory& t, const MarkerGrammar& g) {
    std::set<std::string> names;
    for (const auto& tool : t.tools) {
        if (tool.name.empty()) return "tool with empty name";
        if (!names.insert(tool.name).second) return "duplicate tool name '" + tool.name + "'";
        std::set<std::string> params;
        for (const auto& p : tool.parameters) {
            if (!params.insert(p.name).second) {
                return "tool '" + tool.name + "': duplicate parameter '" + p.name + "'";
            }
        }
    }
    if (t.query.empty()) return "empty user query";
    if (t.steps.empty() && !t.final_answer) return "no steps and no final answer";
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
        const auto& s = t.steps[i];
        if (s.action.empty()) return "step " + std::to_string(i) + ": empty action";
        if (!s.action_input.is_object()) return "step " + std::to_string(i) + ": action input is not an object";
        if (!g.is_finish(s.action) && !t.find_tool(s.action)) {
            return "step " + std::to_string(i) + ": unknown action '" + s.action + "'";
        }
    }
    return std::nullopt;
}

ParseResult parse_react(const ordered_json& record, std::optional<SourceFamily> fallback,
                        const MarkerGrammar& grammar) {
    auto malformed = [](std::string detail) { return DropReason{DropCode::MalformedFormat, std::move(detail)}; };
    if (!record.is_object()) return malformed("record is not an object");

    ReactTrajectory t;
    if (record.contains("id")) t.raw_id = json_string_or_dump(record["id"]);

    std::string source_field = record.contains("source") ? json_string_or_dump(record["source"]) : "";
    try {
        if (!source_field.empty()) {
            try {
                t.source = Source::from_label(source_field);
            } catch (const Error&) {
                if (!fallback) throw;
                t.source = Source{*fallback, *fallback == SourceFamily::AgentInstruct ? source_field : ""};
            }
        } else if (fallback) {
            t.source = Source{*fallback, ""};
        } else {
            return malformed("record has no source and no default was given");
        }
    } catch (const Error& e) {
        return malformed(e.what());
    }

    if (record.contains("tools")) {
        try {
            t.tools = tools_from_json(record["tools"]);
        } catch (const std::exception& e) {
            return malformed(std::string("tools: ") + e.what());
        }
    }

    const ordered_json* conv = nullptr;
    if (record.contains("conversations")) conv = &record["conversations"];
    else if (record.contains("messages")) conv = &record["messages"];
    if (!conv || !conv->is_array()) return malformed("missing conversations array");

    std::vector<std::pair<TurnRole, std::string>> turns;
    for (const auto& turn : *conv) {
        if (!turn.is_object()) return malformed("conversation turn is not an object");
        std::string role_name = turn.contains("role") ? json_string_or_dump(turn["role"])
                                                      : turn.contains("from") ? json_string_or_dump(turn["from"]) : "";
        auto role = normalize_role(role_name);
        if (!role) return malformed("unknown role '" + role_name + "'");
        std::string content = turn.contains("content") ? json_string_or_dump(turn["content"])
                                                       : turn.contains("value") ? json_string_or_dump(turn["value"]) : "";
        turns.emplace_back(*role, std::move(content));
    }

    bool has_system_field = record.contains("system") && record["system"].is_string();
    if (has_system_field) t.system_prompt = record["system"].get<std::string>();

    std::size_t q = 0;
    for (; q < turns.size() && turns[q].first != TurnRole::User; ++q) {
        if (turns[q].first != TurnRole::System) return malformed("turn before the user query is not a system turn");
        if (!has_system_field) {
            if (!t.system_prompt.empty()) t.system_prompt += "\n\n";
            t.system_prompt += turns[q].second;
        }
    }
    if (q == turns.size()) return malformed("no user query");
    t.query = trim(turns[q].second);

    for (std::size_t i = q + 1; i < turns.size(); ++i) {
        if (turns[i].first == TurnRole::Assistant) {
            if (starts_with(trim(turns[i].second), kDfsdtRestartPrefix)) {
                return DropReason{DropCode::DfsdtRestart, "assistant text begins with the DFSDT restart notice"};
            }
            break;
        }
    }

    std::vector<Segment> segments;
    for (std::size_t i = q + 1; i < turns.size(); ++i) {
        const auto& [role, content] = turns[i];
        if (role == TurnRole::Assistant) {
            auto seg = segment_react(content, grammar);
            if (!seg.leading.empty()) {
                return malformed("turn " + std::to_string(i) + ": assistant text outside ReAct markers");
            }
            for (auto& s : seg.segments) segments.push_back(std::move(s));
        } else if (role == TurnRole::System) {
            return malformed("turn " + std::to_string(i) + ": system turn after the query");
        } else {
            std::string body = trim(content);
            std::string marker;
            for (const auto& alias : grammar.observation) {
                if (starts_with(body, alias)) {
                    marker = alias;
                    body = trim(std::string_view(body).substr(alias.size()));
                    break;
                }
            }
            segments.push_back({SegmentKind::Observation, marker, std::move(body)});
        }
    }

    enum class State { Start, AfterThought, AfterAction, AfterInput, AfterObservation, Done };
    State state = State::Start;
    auto step_label = [&] { return "step " + std::to_string(t.steps.empty() ? 0 : t.steps.size() - 1); };
    for (auto& seg : segments) {
        if (state == State::Done) return malformed("content after the final answer");
        switch (seg.kind) {
            case SegmentKind::Thought:
                if (state != State::Start && state != State::AfterInput && state != State::AfterObservation) {
                    return malformed(step_label() + ": Thought before the Action Input of the previous step");
                }
                t.steps.push_back(ReactStep{std::move(seg.body), "", json::object(), ""});
                state = State::AfterThought;
                break;
            case SegmentKind::Action:
                if (state != State::AfterThought) return malformed(step_label() + ": Action without a preceding Thought");
                if (seg.body.empty()) return malformed(step_label() + ": empty Action");
                t.steps.back().action = std::move(seg.body);
                state = State::AfterAction;
                break;
            case SegmentKind::ActionInput: {
                if (state != State::AfterAction) return malformed(step_label() + ": Action Input without an Action");
                auto args = parse_action_input(seg.body);
                if (!args) return DropReason{DropCode::UnparseableArgs, step_label() + ": " + seg.body};
                t.steps.back().action_input = std::move(*args);
                state = State::AfterInput;
                break;
            }
            case SegmentKind::Observation:
                if (state != State::AfterInput) return malformed(step_label() + ": Observation without an action");
                t.steps.back().observation = std::move(seg.body);
                state = State::AfterObservation;
                break;
            case SegmentKind::FinalAnswer:
                if (state == State::AfterThought || state == State::AfterAction) {
                    return malformed(step_label() + ": Final Answer inside an incomplete step");
                }
                t.final_answer = std::move(seg.body);
                state = State::Done;
                break;
        }
    }
    if (state == State::AfterThought) return malformed(step_label() + ": missing Action");
    if (state == State::AfterAction) return malformed(step_label() + ": missing Action Input");

    if (!t.final_answer && !t.steps.empty()) {
        const auto& last = t.steps.back();
        if (grammar.is_finish(last.action) && last.action_input.contains("final_answer") &&
            last.action_input["final_answer"].is_string()) {
            t.final_answer = last.action_input["final_answer"].get<std::string>();
        }
    }

    if (auto problem = validate_trajectory(t, grammar)) return malformed(*problem);
    return t;
}

std::size_t count_react_cycles(std::string_view text, const MarkerGrammar& grammar) {
    return cycle_starts(split_lines(text), grammar).size();
}

bool has_few_shot_block(std::string_view system_prompt, const MarkerGrammar& grammar) {
    return count_react_cycles(system_prompt, grammar) >= 2;
}

std::string strip_few_shot_block(std::string_view system_prompt, const MarkerGrammar& grammar) {
    auto lines = split_lines(system_prompt);
    auto starts = cycle_starts(lines, grammar);
    if (starts.size() < 2) return std::string(system_prompt);

    auto table = marker_table(grammar);
    std::size_t begin = starts[1];
    std::size_t last_marker = begin;
    for (std::size_t i = begin; i < lines.size(); ++i) {
        if (match_marker(lines[i], table)) last_marker = i;
    }
    // The demonstration runs to the end of the paragraph holding its last marker.
    std::size_t end = last_marker + 1;
    while (end < lines.size() && !trim(lines[end]).empty()) ++end;

    std::string head, tail;
    for (std::size_t i = 0; i < begin; ++i) head += lines[i] + "\n";
    for (std::size_t i = end; i < lines.size(); ++i) tail += lines[i] + "\n";
    head = trim(head);
    tail = trim(tail);
    if (head.empty()) return tail;
    if (tail.empty()) return head;
    return head + "\n\n" + tail;
}

FilterResult apply_filters(ReactTrajectory traj, const FilterPolicy& policy) {
    if (traj.source.family == SourceFamily::ToolBench && !traj.final_answer) {
        return DropReason{DropCode::NoFinalAnswer, "ToolBench trajectory without a final answer"};
    }
    if (traj.source.family == SourceFamily::AgentInstruct && has_few_shot_block(traj.system_prompt, policy.grammar)) {
        if (policy.few_shot == FewShotPolicy::Drop) {
            return DropReason{DropCode::FewShotExample, "system prompt embeds a demonstration trajectory"};
        }
        traj.system_prompt = strip_few_shot_block(traj.system_prompt, policy.grammar);
    }
    return traj;
}

std::size_t CorpusStats::total_samples() const {
    std::size_t n = 0;
    for (const auto& [k, s] : per_source) n += s.samples;
    return n;
}

std::size_t CorpusStats::total_tokens() const {
    std::size_t n = 0;
    for (const auto& [k, s] : per_source) n += s.tokens;
    return n;
}

std::string trajectory_text(const ReactTrajectory& t) {
    std::string out = t.system_prompt;
    if (!t.tools.empty()) out += "\n" + render_tool_block(t.tools);
    out += "\n" + t.query;
    for (const auto& s : t.steps) {
        out += "\n" + s.thought + "\n" + s.action + "\n" + s.action_input.dump() + "\n" + s.observation;
    }
    if (t.final_answer) out += "\n" + *t.final_answer;
    return out;
}

CorpusStats corpus_stats(std::span<const ReactTrajectory> trajectories, const TokenCounter& counter) {
    CorpusStats stats;
    for (const auto& t : trajectories) {
        auto& s = stats.per_source[t.source.label()];
        ++s.samples;
        s.tokens += counter.count(trajectory_text(t));
    }
    return stats;
}

CorpusStats corpus_stats(std::span<const ReactTrajectory> trajectories) {
    return corpus_stats(trajectories, default_token_counter());
}

ordered_json tool_to_json(const ToolSchema& tool) {
    ordered_json props = ordered_json::object();
    ordered_json required = ordered_json::array();
    for (const auto& p : tool.parameters) {
        props[p.name] = ordered_json{{"type", p.type}, {"description", p.description}};
        if (p.required) required.push_back(p.name);
    }
    return ordered_json{{"name", tool.name},
                        {"description", tool.description},
                        {"parameters", {{"type", "object"}, {"properties", props}, {"required", required}}}};
}

ToolSchema tool_from_json(const ordered_json& j) {
    if (!j.is_object()) throw Error("tool is not an object");
    ToolSchema tool;
    if (!j.contains("name") || !j["name"].is_string()) throw Error("tool without a string name");
    tool.name = j["name"].get<std::string>();
    if (j.contains("description")) tool.description = json_string_or_dump(j["description"]);
    if (!j.contains("parameters")) return tool;

    ordered_json params = j["parameters"];
    if (params.is_string()) params = ordered_json::parse(params.get<std::string>());
    if (params.is_array()) {
        for (const auto& p : params) {
            ToolParam tp;
            tp.name = p.at("name").get<std::string>();
            if (p.contains("type")) tp.type = json_string_or_dump(p["type"]);
            if (p.contains("description")) tp.description = json_string_or_dump(p["description"]);
            tp.required = p.value("required", false);
            tool.parameters.push_back(std::move(tp));
        }
        return tool;
    }
    if (!params.is_object()) throw Error("tool '" + tool.name + "': parameters must be an object or a list");
    std::set<std::string> required;
    if (params.contains("required") && params["required"].is_array()) {
        for (const auto& r : params["required"]) required.insert(r.get<std::string>());
    }
    if (params.contains("properties") && params["properties"].is_object()) {
        for (const auto& [name, spec] : params["properties"].items()) {
            ToolParam tp;
            tp.name = name;
            if (spec.is_object()) {
                if (spec.contains("type")) tp.type = json_string_or_dump(spec["type"]);
                if (spec.contains("description")) tp.description = json_string_or_dump(spec["description"]);
            }
            tp.required = required.count(name) > 0;
            tool.parameters.push_back(std::move(tp));
        }
    }
    return tool;
}

ordered_json tools_to_json(const std::vector<ToolSchema>& tools) {
    ordered_json arr = ordered_json::array();
    for (const auto& t : tools) arr.push_back(tool_to_json(t));
    return arr;
}

std::vector<ToolSchema> tools_from_json(const ordered_json& j) {
    ordered_json arr = j;
    if (arr.is_string()) arr = ordered_json::parse(arr.get<std::string>());
    if (arr.is_null()) return {};
    if (!arr.is_array()) throw Error("tools must be a list");
    std::vector<ToolSchema> tools;
    for (const auto& t : arr) tools.push_back(tool_from_json(t));
    return tools;
}

std::string render_tool_block(const std::vector<ToolSchema>& tools) { return tools_to_json(tools).dump(2); }

std::string render_step_block(const ReactStep& step, const MarkerGrammar& g) {
    return primary(g.thought) + " " + step.thought + "\n" + primary(g.action) + " " + step.action + "\n" +
           primary(g.action_input) + " " + step.action_input.dump();
}

std::vector<std::pair<std::string, std::string>> render_react_turns(const ReactTrajectory& t, const MarkerGrammar& g) {
    std::vector<std::pair<std::string, std::string>> turns;
    if (!t.system_prompt.empty() || !t.tools.empty()) {
        std::string sys = t.system_prompt;
        if (!t.tools.empty()) {
            if (!sys.empty()) sys += "\n\n";
            sys += "You can use the following tools:\n" + render_tool_block(t.tools);
        }
        turns.emplace_back("system", std::move(sys));
    }
    turns.emplace_back("user", t.query);
    const std::string final_block = t.final_answer ? primary(g.final_answer) + " " + *t.final_answer : "";
    bool final_done = false;
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
        const auto& s = t.steps[i];
        bool last = i + 1 == t.steps.size();
        std::string block = render_step_block(s, g);
        if (last && t.final_answer && s.observation.empty()) {
            turns.emplace_back("assistant", block + "\n" + final_block);
            final_done = true;
            break;
        }
        turns.emplace_back("assistant", std::move(block));
        if (!last || t.final_answer || !s.observation.empty()) {
            std::string obs = primary(g.observation);
            if (!s.observation.empty()) obs += " " + s.observation;
            turns.emplace_back("user", std::move(obs));
        }
    }
    if (t.final_answer && !final_done) turns.emplace_back("assistant", final_block);
    return turns;
}

ordered_json trajectory_to_json(const ReactTrajectory& t) {
    ordered_json steps = ordered_json::array();
    for (const auto& s : t.steps) {
        steps.push_back(ordered_json{{"thought", s.thought},
                                     {"action", s.action},
                                     {"action_input", to_ordered(s.action_input)},
                                     {"observation", s.observation}});
    }
    ordered_json conv = ordered_json::array();
    for (const auto& [role, content] : render_react_turns(t)) {
        conv.push_back(ordered_json{{"role", role}, {"content", content}});
    }
    ordered_json j;
    j["id"] = t.raw_id;
    j["source"] = t.source.label();
    j["system"] = t.system_prompt;
    j["tools"] = tools_to_json(t.tools);
    j["query"] = t.query;
    j["steps"] = steps;
    j["final_answer"] = t.final_answer ? ordered_json(*t.final_answer) : ordered_json(nullptr);
    j["conversations"] = conv;
    return j;
}

ReactTrajectory trajectory_from_json(const ordered_json& j) {
    if (!j.contains("steps")) {
        auto parsed = parse_react(j);
        if (auto* drop = std::get_if<DropReason>(&parsed)) {
            throw Error("record '" + json_string_or_dump(j.value("id", ordered_json(""))) +
                        "' does not parse: " + std::string(drop_code_name(drop->code)) + ": " + drop->detail);
        }
        return std::get<ReactTrajectory>(std::move(parsed));
    }
    ReactTrajectory t;
    try {
        t.raw_id = json_string_or_dump(j.value("id", ordered_json("")));
        t.source = Source::from_label(j.at("source").get<std::string>());
        t.system_prompt = j.value("system", std::string());
        if (j.contains("tools")) t.tools = tools_from_json(j["tools"]);
        t.query = j.at("query").get<std::string>();
        for (const auto& s : j.at("steps")) {
            t.steps.push_back(ReactStep{s.value("thought", std::string()), s.at("action").get<std::string>(),
                                        to_plain(s.value("action_input", ordered_json::object())),
                                        s.value("observation", std::string())});
        }
        if (j.contains("final_answer") && j["final_answer"].is_string()) {
            t.final_answer = j["final_answer"].get<std::string>();
        }
    } catch (const ordered_json::exception& e) {
        throw Error("trajectory record '" + t.raw_id + "': " + e.what());
    }
    if (auto problem = validate_trajectory(t)) throw Error("trajectory record '" + t.raw_id + "': " + *problem);
    return t;
}

ordered_json drop_log_entry(const std::string& id, const DropReason& reason) {
    return ordered_json{{"id", id}, {"code", drop_code_name(reason.code)}, {"detail", reason.detail}};
}

}  // namespace aflan
