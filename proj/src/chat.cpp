#include "aflan/chat.hpp"

#include <algorithm>
#include <array>
#include <set>

namespace aflan {

namespace {

template <typename Enum, std::size_t N>
Enum lookup(std::string_view name, const std::array<std::pair<Enum, std::string_view>, N>& table,
            std::string_view what) {
    for (const auto& [e, n] : table) {
        if (n == name) return e;
    }
    throw Error("unknown " + std::string(what) + " '" + std::string(name) + "'");
}

template <typename Enum, std::size_t N>
std::string_view name_of(Enum e, const std::array<std::pair<Enum, std::string_view>, N>& table) {
    for (const auto& [k, n] : table) {
        if (k == e) return n;
    }
    return "unknown";
}

constexpr std::array<std::pair<Role, std::string_view>, 3> kRoles{{
    {Role::System, "system"}, {Role::User, "user"}, {Role::Assistant, "assistant"}}};

constexpr std::array<std::pair<Capability, std::string_view>, 4> kCapabilities{{
    {Capability::Reasoning, "Reasoning"},
    {Capability::Retrieval, "Retrieval"},
    {Capability::Understanding, "Understanding"},
    {Capability::InstructionFollowing, "InstructionFollowing"}}};

constexpr std::array<std::pair<Style, std::string_view>, 5> kStyles{{
    {Style::Chat, "chat"},
    {Style::React, "react"},
    {Style::FormatInstruction, "format-instruction"},
    {Style::Negative, "negative"},
    {Style::General, "general"}}};

constexpr std::array<std::pair<Quadrant, std::string_view>, 4> kQuadrants{{
    {Quadrant::A_NoToolsNormalQuery, "A"},
    {Quadrant::B_ToolsNormalQuery, "B"},
    {Quadrant::C_NoToolsToolQuery, "C"},
    {Quadrant::D_ToolsToolQuery, "D"}}};

constexpr std::array<std::pair<TurnKind, std::string_view>, 14> kTurnKinds{{
    {TurnKind::System, "system"},
    {TurnKind::Query, "query"},
    {TurnKind::ThoughtElicit, "thought_elicit"},
    {TurnKind::Thought, "thought"},
    {TurnKind::ActionElicit, "action_elicit"},
    {TurnKind::Action, "action"},
    {TurnKind::ArgumentElicit, "argument_elicit"},
    {TurnKind::Argument, "argument"},
    {TurnKind::FinalElicit, "final_elicit"},
    {TurnKind::FinalAnswer, "final_answer"},
    {TurnKind::Observation, "observation"},
    {TurnKind::FormatRequest, "format_request"},
    {TurnKind::FormatResponse, "format_response"},
    {TurnKind::Response, "response"}}};

std::string system_turn_text(const std::string& prompt, const std::vector<ToolSchema>& tools) {
    std::string sys = prompt;
    if (!tools.empty()) {
        if (!sys.empty()) sys += "\n\n";
        sys += "You can use the following tools:\n" + render_tool_block(tools);
    }
    return sys;
}

std::size_t count_occurrences(std::string_view s, std::string_view needle) {
    std::size_t n = 0;
    for (std::size_t pos = s.find(needle); pos != std::string_view::npos; pos = s.find(needle, pos + needle.size())) {
        ++n;
    }
    return n;
}

ordered_json meta_to_json(const TurnMeta& m) {
    ordered_json j;
    j["kind"] = turn_kind_name(m.kind);
    if (m.step) j["step"] = *m.step;
    if (m.arg) j["arg"] = *m.arg;
    if (m.arg_json) j["arg_json"] = true;
    if (m.obs_begin) {
        j["obs_begin"] = *m.obs_begin;
        j["obs_len"] = m.obs_len;
    }
    if (m.format) j["format"] = *m.format;
    return j;
}

TurnMeta meta_from_json(const ordered_json& j) {
    TurnMeta m;
    m.kind = parse_turn_kind(j.at("kind").get<std::string>());
    if (j.contains("step")) m.step = j["step"].get<std::size_t>();
    if (j.contains("arg")) m.arg = j["arg"].get<std::string>();
    m.arg_json = j.value("arg_json", false);
    if (j.contains("obs_begin")) {
        m.obs_begin = j["obs_begin"].get<std::size_t>();
        m.obs_len = j.value("obs_len", std::size_t{0});
    }
    if (j.contains("format")) m.format = j["format"].get<std::string>();
    return m;
}

ChatTurn make_turn(Role role, std::string content, TurnMeta meta) {
    ChatTurn t;
    t.role = role;
    t.content = std::move(content);
    t.loss_mask = role == Role::Assistant;
    t.meta = std::move(meta);
    return t;
}

TurnMeta kind_meta(TurnKind k, std::optional<std::size_t> step = std::nullopt) {
    TurnMeta m;
    m.kind = k;
    m.step = step;
    return m;
}

}  // namespace

std::string_view role_name(Role r) { return name_of(r, kRoles); }
Role parse_role(std::string_view s) { return lookup(to_lower(s), kRoles, "role"); }
std::string_view capability_name(Capability c) { return name_of(c, kCapabilities); }
std::string_view style_name(Style s) { return name_of(s, kStyles); }
Style parse_style(std::string_view s) { return lookup(s, kStyles, "style"); }
std::string_view quadrant_name(Quadrant q) { return name_of(q, kQuadrants); }
Quadrant parse_quadrant(std::string_view s) { return lookup(s, kQuadrants, "quadrant"); }
std::string_view turn_kind_name(TurnKind k) { return name_of(k, kTurnKinds); }
TurnKind parse_turn_kind(std::string_view s) { return lookup(s, kTurnKinds, "turn kind"); }

std::string capability_key(Capability c) {
    switch (c) {
        case Capability::Reasoning: return "reasoning";
        case Capability::Retrieval: return "retrieval";
        case Capability::Understanding: return "understanding";
        case Capability::InstructionFollowing: return "instruction_following";
    }
    return "unknown";
}

Capability parse_capability(std::string_view s) {
    for (auto c : kAllCapabilities) {
        if (capability_name(c) == s || capability_key(c) == to_lower(s)) return c;
    }
    throw Error("unknown capability '" + std::string(s) + "'");
}

std::optional<std::string> check_conversation(const ChatConversation& conv) {
    if (conv.turns.empty()) return "conversation has no turns";
    std::size_t start = conv.turns.front().role == Role::System ? 1 : 0;
    for (std::size_t i = start; i < conv.turns.size(); ++i) {
        const auto& t = conv.turns[i];
        Role expected = (i - start) % 2 == 0 ? Role::User : Role::Assistant;
        if (t.role != expected) {
            return "turn " + std::to_string(i) + ": expected " + std::string(role_name(expected)) + ", found " +
                   std::string(role_name(t.role));
        }
        if (t.loss_mask && t.role != Role::Assistant) {
            return "turn " + std::to_string(i) + ": loss mask set on a non-assistant turn";
        }
    }
    return std::nullopt;
}

ordered_json conversation_to_json(const ChatConversation& c) {
    ordered_json j;
    j["id"] = c.id;
    j["source"] = c.source;
    j["style"] = style_name(c.style);
    ordered_json origin{{"raw_id", c.origin.raw_id}, {"transform", c.origin.transform}};
    if (c.origin.step_count) origin["step_count"] = *c.origin.step_count;
    origin["has_final"] = c.origin.has_final;
    j["origin"] = origin;
    if (c.quadrant) j["quadrant"] = quadrant_name(*c.quadrant);
    j["system"] = c.system_prompt;
    j["tools"] = tools_to_json(c.tools);
    ordered_json turns = ordered_json::array();
    for (const auto& t : c.turns) {
        ordered_json tj{{"role", role_name(t.role)}, {"content", t.content}, {"loss_mask", t.loss_mask}};
        if (t.capability) tj["capability"] = capability_name(*t.capability);
        if (t.meta) tj["inversion_meta"] = meta_to_json(*t.meta);
        turns.push_back(std::move(tj));
    }
    j["conversations"] = std::move(turns);
    return j;
}

ChatConversation conversation_from_json(const ordered_json& j) {
    ChatConversation c;
    try {
        if (j.contains("id")) c.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
        c.source = j.value("source", std::string("general"));
        c.style = j.contains("style") ? parse_style(j["style"].get<std::string>()) : Style::General;
        if (j.contains("origin")) {
            const auto& o = j["origin"];
            c.origin.raw_id = o.value("raw_id", std::string());
            c.origin.transform = o.value("transform", std::string());
            if (o.contains("step_count")) c.origin.step_count = o["step_count"].get<std::size_t>();
            c.origin.has_final = o.value("has_final", false);
        }
        if (j.contains("quadrant")) c.quadrant = parse_quadrant(j["quadrant"].get<std::string>());
        if (j.contains("system") && j["system"].is_string()) c.system_prompt = j["system"].get<std::string>();
        if (j.contains("tools")) c.tools = tools_from_json(j["tools"]);
        const ordered_json& turns = j.contains("conversations") ? j["conversations"] : j.at("messages");
        for (const auto& tj : turns) {
            ChatTurn t;
            std::string role = tj.contains("role") ? tj["role"].get<std::string>() : tj.at("from").get<std::string>();
            if (role == "human") role = "user";
            if (role == "gpt") role = "assistant";
            t.role = parse_role(role);
            t.content = tj.contains("content") ? tj["content"].get<std::string>() : tj.value("value", std::string());
            t.loss_mask = tj.value("loss_mask", t.role == Role::Assistant);
            if (tj.contains("capability") && !tj["capability"].is_null()) {
                t.capability = parse_capability(tj["capability"].get<std::string>());
            }
            if (tj.contains("inversion_meta") && !tj["inversion_meta"].is_null()) {
                t.meta = meta_from_json(tj["inversion_meta"]);
            }
            c.turns.push_back(std::move(t));
        }
    } catch (const ordered_json::exception& e) {
        throw Error("conversation '" + c.id + "': " + e.what());
    }
    return c;
}

std::vector<ChatConversation> read_conversations(const std::filesystem::path& path) {
    std::vector<ChatConversation> out;
    for (const auto& r : read_jsonl(path)) out.push_back(conversation_from_json(r));
    return out;
}

std::string dump_conversations(const std::vector<ChatConversation>& convs) {
    std::string out;
    for (const auto& c : convs) {
        out += conversation_to_json(c).dump(-1, ' ', false, ordered_json::error_handler_t::replace);
        out += '\n';
    }
    return out;
}

std::optional<std::string> ElicitTemplateSet::validate() const {
    auto check_list = [](const std::vector<std::string>& list, const char* name) -> std::optional<std::string> {
        if (list.empty()) return std::string(name) + " has no templates";
        for (const auto& s : list) {
            if (s.empty()) return std::string(name) + " contains an empty template";
        }
        return std::nullopt;
    };
    if (auto e = check_list(thought_elicit, "thought_elicit")) return e;
    if (auto e = check_list(action_elicit, "action_elicit")) return e;
    if (auto e = check_list(final_elicit, "final_elicit")) return e;
    if (count_occurrences(argument_elicit, kParamSlot) != 1) {
        return "argument_elicit must contain exactly one " + std::string(kParamSlot) + " slot";
    }
    if (count_occurrences(observation_wrapper, kObservationSlot) != 1) {
        return "observation_wrapper must contain exactly one " + std::string(kObservationSlot) + " slot";
    }
    return std::nullopt;
}

ElicitTemplateSet ElicitTemplateSet::from_json(const json& j) {
    ElicitTemplateSet t;
    try {
        t.version = j.value("version", t.version);
        if (j.contains("thought_elicit")) t.thought_elicit = j["thought_elicit"].get<std::vector<std::string>>();
        if (j.contains("action_elicit")) t.action_elicit = j["action_elicit"].get<std::vector<std::string>>();
        if (j.contains("argument_elicit")) t.argument_elicit = j["argument_elicit"].get<std::string>();
        if (j.contains("final_elicit")) t.final_elicit = j["final_elicit"].get<std::vector<std::string>>();
        if (j.contains("observation_wrapper")) t.observation_wrapper = j["observation_wrapper"].get<std::string>();
        t.rotate = j.value("rotate", false);
        t.seed = j.value("seed", std::uint64_t{0});
    } catch (const json::exception& e) {
        throw Error(std::string("template set: ") + e.what());
    }
    if (auto problem = t.validate()) throw Error("template set: " + *problem);
    return t;
}

ElicitTemplateSet ElicitTemplateSet::load(const std::filesystem::path& path) {
    try {
        return from_json(json::parse(read_file(path)));
    } catch (const json::parse_error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

json ElicitTemplateSet::to_json() const {
    return json{{"version", version},
                {"thought_elicit", thought_elicit},
                {"action_elicit", action_elicit},
                {"argument_elicit", argument_elicit},
                {"final_elicit", final_elicit},
                {"observation_wrapper", observation_wrapper},
                {"rotate", rotate},
                {"seed", seed}};
}

std::string render_argument_value(const json& value) {
    if (value.is_string()) return value.get<std::string>();
    return value.dump();
}

ChatConversation align_to_chat(const ReactTrajectory& traj, const ElicitTemplateSet& templates,
                               const AlignOptions& options) {
    if (auto problem = templates.validate()) throw AlignmentError("template set: " + *problem);
    if (auto problem = validate_trajectory(traj, options.grammar)) {
        throw AlignmentError("trajectory '" + traj.raw_id + "': " + *problem);
    }

    ChatConversation c;
    c.id = traj.raw_id;
    c.source = traj.source.label();
    c.style = Style::Chat;
    c.system_prompt = traj.system_prompt;
    c.tools = traj.tools;
    c.origin = Origin{traj.raw_id, "align-chat/" + templates.version, traj.steps.size(), traj.final_answer.has_value()};

    auto pick = [&](const std::vector<std::string>& list, std::string_view slot, std::size_t step) -> const std::string& {
        if (!templates.rotate || list.size() == 1) return list.front();
        std::string key = traj.raw_id + "#" + std::string(slot) + "#" + std::to_string(step);
        return list[derive_seed(templates.seed, key) % list.size()];
    };

    const auto& wrapper = templates.observation_wrapper;
    const auto slot = wrapper.find(ElicitTemplateSet::kObservationSlot);
    const std::string wrap_prefix = wrapper.substr(0, slot);
    const std::string wrap_suffix = wrapper.substr(slot + ElicitTemplateSet::kObservationSlot.size());

    // A user turn carrying an optional observation followed by an elicit.
    auto observation_turn = [&](TurnKind kind, std::size_t step, const std::string& observation,
                                const std::string& elicit) {
        TurnMeta meta = kind_meta(kind, step);
        std::string content;
        if (!observation.empty()) {
            content = wrap_prefix + observation + wrap_suffix;
            meta.obs_begin = wrap_prefix.size();
            meta.obs_len = observation.size();
            if (!elicit.empty()) content += "\n\n";
        }
        content += elicit;
        return make_turn(Role::User, std::move(content), std::move(meta));
    };

    if (!traj.system_prompt.empty() || !traj.tools.empty()) {
        c.turns.push_back(make_turn(Role::System, system_turn_text(traj.system_prompt, traj.tools),
                                    kind_meta(TurnKind::System)));
    }
    c.turns.push_back(make_turn(Role::User, traj.query, kind_meta(TurnKind::Query)));

    for (std::size_t i = 0; i < traj.steps.size(); ++i) {
        const auto& step = traj.steps[i];
        if (i > 0) {
            c.turns.push_back(observation_turn(TurnKind::ThoughtElicit, i, traj.steps[i - 1].observation,
                                               pick(templates.thought_elicit, "thought", i)));
        }
        c.turns.push_back(make_turn(Role::Assistant, step.thought, kind_meta(TurnKind::Thought, i)));
        c.turns.push_back(make_turn(Role::User, pick(templates.action_elicit, "action", i),
                                    kind_meta(TurnKind::ActionElicit, i)));
        c.turns.push_back(make_turn(Role::Assistant, step.action, kind_meta(TurnKind::Action, i)));

        // Schema order first, then any remaining keys in sorted order.
        std::vector<std::string> keys;
        const ToolSchema* tool = traj.find_tool(step.action);
        if (tool) {
            for (const auto& p : tool->parameters) {
                if (step.action_input.contains(p.name)) keys.push_back(p.name);
            }
        }
        for (const auto& [key, value] : step.action_input.items()) {
            if (std::find(keys.begin(), keys.end(), key) != keys.end()) continue;
            if (options.strict && tool) {
                throw AlignmentError("trajectory '" + traj.raw_id + "' step " + std::to_string(i) + ": argument '" +
                                     key + "' is not in the schema of tool '" + tool->name + "'");
            }
            keys.push_back(key);
        }
        for (const auto& key : keys) {
            TurnMeta ask = kind_meta(TurnKind::ArgumentElicit, i);
            ask.arg = key;
            c.turns.push_back(make_turn(Role::User,
                                        replace_all(templates.argument_elicit, ElicitTemplateSet::kParamSlot, key),
                                        std::move(ask)));
            const json& value = step.action_input.at(key);
            TurnMeta answer = kind_meta(TurnKind::Argument, i);
            answer.arg = key;
            answer.arg_json = !value.is_string();
            c.turns.push_back(make_turn(Role::Assistant, render_argument_value(value), std::move(answer)));
        }
    }

    if (traj.final_answer) {
        if (!traj.steps.empty()) {
            std::size_t last = traj.steps.size() - 1;
            c.turns.push_back(observation_turn(TurnKind::FinalElicit, last, traj.steps[last].observation,
                                               pick(templates.final_elicit, "final", last)));
        }
        c.turns.push_back(make_turn(Role::Assistant, *traj.final_answer, kind_meta(TurnKind::FinalAnswer)));
    } else if (!traj.steps.empty() && !traj.steps.back().observation.empty()) {
        std::size_t last = traj.steps.size() - 1;
        c.turns.push_back(observation_turn(TurnKind::Observation, last, traj.steps[last].observation, ""));
    }
    return c;
}

ReactTrajectory invert_alignment(const ChatConversation& conv, const MarkerGrammar& grammar) {
    if (conv.style != Style::Chat) {
        throw AlignmentError("conversation '" + conv.id + "' is not chat-aligned (style " +
                             std::string(style_name(conv.style)) + ")");
    }
    if (!conv.origin.step_count) throw AlignmentError("conversation '" + conv.id + "' lacks inversion metadata");
    for (std::size_t i = 0; i < conv.turns.size(); ++i) {
        if (!conv.turns[i].meta) {
            throw AlignmentError("conversation '" + conv.id + "': turn " + std::to_string(i) +
                                 " lacks inversion metadata");
        }
    }

    ReactTrajectory t;
    t.source = Source::from_label(conv.source);
    t.raw_id = conv.origin.raw_id;
    t.system_prompt = conv.system_prompt;
    t.tools = conv.tools;
    const std::size_t n = *conv.origin.step_count;
    t.steps.resize(n);
    std::vector<bool> has_thought(n, false), has_action(n, false);

    std::vector<std::string> problems;
    bool query_seen = false;
    std::optional<std::pair<std::size_t, std::string>> pending_arg;

    auto extract_observation = [&](std::size_t turn_index, const ChatTurn& turn, std::size_t step) {
        const auto& m = *turn.meta;
        if (!m.obs_begin) return;
        if (*m.obs_begin + m.obs_len > turn.content.size()) {
            problems.push_back("turn " + std::to_string(turn_index) + ": observation span out of range");
            return;
        }
        t.steps[step].observation = turn.content.substr(*m.obs_begin, m.obs_len);
    };

    for (std::size_t i = 0; i < conv.turns.size(); ++i) {
        const auto& turn = conv.turns[i];
        const auto& m = *turn.meta;
        if (pending_arg && m.kind != TurnKind::Argument) {
            problems.push_back("step " + std::to_string(pending_arg->first) + ": argument '" + pending_arg->second +
                               "' was elicited but its value turn is missing");
            pending_arg.reset();
        }
        bool needs_step = m.kind == TurnKind::ThoughtElicit || m.kind == TurnKind::Thought ||
                          m.kind == TurnKind::ActionElicit || m.kind == TurnKind::Action ||
                          m.kind == TurnKind::ArgumentElicit || m.kind == TurnKind::Argument ||
                          m.kind == TurnKind::Observation;
        if (needs_step && (!m.step || *m.step >= n)) {
            problems.push_back("turn " + std::to_string(i) + ": step index missing or out of range");
            continue;
        }
        switch (m.kind) {
            case TurnKind::System:
                break;
            case TurnKind::Query:
                t.query = turn.content;
                query_seen = true;
                break;
            case TurnKind::ThoughtElicit:
                if (*m.step == 0) {
                    problems.push_back("turn " + std::to_string(i) + ": thought elicit for the first step");
                } else {
                    extract_observation(i, turn, *m.step - 1);
                }
                break;
            case TurnKind::Thought:
                t.steps[*m.step].thought = turn.content;
                has_thought[*m.step] = true;
                break;
            case TurnKind::ActionElicit:
                break;
            case TurnKind::Action:
                t.steps[*m.step].action = turn.content;
                has_action[*m.step] = true;
                break;
            case TurnKind::ArgumentElicit:
                if (!m.arg) {
                    problems.push_back("turn " + std::to_string(i) + ": argument elicit without a key");
                } else {
                    pending_arg = std::make_pair(*m.step, *m.arg);
                }
                break;
            case TurnKind::Argument: {
                if (!pending_arg || !m.arg || pending_arg->first != *m.step || pending_arg->second != *m.arg) {
                    problems.push_back("turn " + std::to_string(i) + ": argument value without its elicit");
                    pending_arg.reset();
                    break;
                }
                pending_arg.reset();
                json value;
                if (m.arg_json) {
                    try {
                        value = json::parse(turn.content);
                    } catch (const json::parse_error&) {
                        problems.push_back("turn " + std::to_string(i) + ": argument '" + *m.arg + "' is not JSON");
                        break;
                    }
                } else {
                    value = turn.content;
                }
                t.steps[*m.step].action_input[*m.arg] = std::move(value);
                break;
            }
            case TurnKind::FinalElicit:
                if (n == 0) {
                    problems.push_back("turn " + std::to_string(i) + ": final elicit in a step-less conversation");
                } else {
                    extract_observation(i, turn, n - 1);
                }
                break;
            case TurnKind::FinalAnswer:
                t.final_answer = turn.content;
                break;
            case TurnKind::Observation:
                extract_observation(i, turn, *m.step);
                break;
            default:
                problems.push_back("turn " + std::to_string(i) + ": unexpected turn kind " +
                                   std::string(turn_kind_name(m.kind)));
                break;
        }
    }
    if (pending_arg) {
        problems.push_back("step " + std::to_string(pending_arg->first) + ": argument '" + pending_arg->second +
                           "' was elicited but its value turn is missing");
    }
    if (!query_seen) problems.push_back("missing query turn");
    for (std::size_t s = 0; s < n; ++s) {
        if (!has_thought[s]) problems.push_back("step " + std::to_string(s) + ": missing thought turn");
        if (!has_action[s]) problems.push_back("step " + std::to_string(s) + ": missing action turn");
    }
    if (conv.origin.has_final && !t.final_answer) problems.push_back("missing final answer turn");
    if (auto shape = check_conversation(conv)) problems.push_back(*shape);

    if (!problems.empty()) {
        std::string msg = "conversation '" + conv.id + "' cannot be inverted:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw AlignmentError(msg);
    }
    if (auto problem = validate_trajectory(t, grammar)) {
        throw AlignmentError("conversation '" + conv.id + "' inverts to an invalid trajectory: " + *problem);
    }
    return t;
}

ChatConversation render_react(const ReactTrajectory& traj, const MarkerGrammar& grammar) {
    ChatConversation c;
    c.id = traj.raw_id;
    c.source = traj.source.label();
    c.style = Style::React;
    c.system_prompt = traj.system_prompt;
    c.tools = traj.tools;
    c.origin = Origin{traj.raw_id, "react", traj.steps.size(), traj.final_answer.has_value()};
    bool query_done = false;
    for (auto& [role_str, content] : render_react_turns(traj, grammar)) {
        Role role = parse_role(role_str);
        TurnKind kind = TurnKind::Response;
        if (role == Role::System) kind = TurnKind::System;
        else if (role == Role::User) kind = query_done ? TurnKind::Observation : TurnKind::Query;
        if (role == Role::User) query_done = true;
        ChatTurn turn;
        turn.role = role;
        turn.content = std::move(content);
        turn.loss_mask = role == Role::Assistant;
        turn.meta = kind_meta(kind);
        c.turns.push_back(std::move(turn));
    }
    return c;
}

namespace {

struct FormatTask {
    std::string tool;
    std::string description;
    std::string question;  // {name} slots filled from the argument values
    std::string thought;
    std::vector<std::pair<std::string, std::vector<json>>> params;
};

const std::vector<FormatTask>& format_tasks() {
    static const std::vector<FormatTask> tasks = {
        {"get_weather", "Get the current weather for a city", "What's the weather like in {city} right now?",
         "I need the current weather in {city}, so I should query the weather tool.",
         {{"city", {"Paris", "Tokyo", "Nairobi", "Lima", "Oslo", "Toronto"}}}},
        {"convert_currency", "Convert an amount between two currencies", "How much is {amount} {from} in {to}?",
         "The user wants a currency conversion from {from} to {to}; the converter tool handles that.",
         {{"amount", {json(100), json(250), json(19.99), json(4000)}},
          {"from", {"USD", "EUR", "JPY", "GBP"}},
          {"to", {"CHF", "INR", "BRL", "AUD"}}}},
        {"search_flights", "Search flights between two airports on a date",
         "Find me a flight from {origin} to {destination} on {date}.",
         "I should search for flights from {origin} to {destination} on the requested date.",
         {{"origin", {"SFO", "LHR", "NRT", "GRU"}},
          {"destination", {"JFK", "CDG", "SYD", "DXB"}},
          {"date", {"2024-03-14", "2024-07-01", "2024-11-23"}}}},
        {"get_stock_price", "Get the latest stock price for a ticker symbol", "What is {symbol} trading at?",
         "To answer this I need the latest quote for {symbol}.",
         {{"symbol", {"AAPL", "MSFT", "NVDA", "TSLA", "AMZN"}}}},
        {"translate_text", "Translate text into a target language",
         "Translate \"{text}\" into {target_language}.",
         "This is a translation request, so I should call the translation tool.",
         {{"text", {"Good morning", "Where is the station?", "Thank you very much"}},
          {"target_language", {"French", "German", "Japanese", "Spanish"}}}},
        {"find_restaurants", "Find restaurants by cuisine in a city", "Are there good {cuisine} restaurants in {city}?",
         "I can look up {cuisine} restaurants in {city} with the restaurant search tool.",
         {{"cuisine", {"Thai", "Italian", "Ethiopian", "Mexican"}}, {"city", {"Berlin", "Austin", "Seoul", "Lisbon"}}}},
        {"calculate_bmi", "Calculate body mass index", "My weight is {weight_kg} kg and I am {height_m} m tall. What is my BMI?",
         "The BMI calculator needs the weight and height the user gave.",
         {{"weight_kg", {json(58), json(72.5), json(90)}}, {"height_m", {json(1.62), json(1.75), json(1.88)}}}},
        {"get_recipe", "Get a recipe based on given ingredients", "What can I cook with {ingredients}?",
         "I should ask the recipe tool for dishes using these ingredients.",
         {{"ingredients", {json::array({"eggs", "spinach"}), json::array({"rice", "chicken", "peas"}),
                           json::array({"tomatoes", "basil"})}}}},
    };
    return tasks;
}

std::string describe_value(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_array()) {
        std::string out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i > 0) out += i + 1 == v.size() ? " and " : ", ";
            out += describe_value(v[i]);
        }
        return out;
    }
    return v.dump();
}

const std::vector<std::string> kReactRequests = {
    "Answer using the ReAct format: one line starting with \"Thought:\", then one line starting with \"Action:\" "
    "naming the tool, then one line starting with \"Action Input:\" holding the JSON arguments.",
    "Please reply in ReAct style (Thought, Action, Action Input), with the arguments given as a JSON object.",
    "Use exactly three lines in your reply: Thought, Action and Action Input. The Action Input must be JSON.",
};

const std::vector<std::string> kJsonRequests = {
    "Respond with only a JSON object that has the keys \"tool\" and \"arguments\".",
    "Reply with a single JSON object and nothing else. Put the tool name under \"tool\" and its parameters under "
    "\"arguments\".",
    "Output valid JSON only: an object with a \"tool\" string and an \"arguments\" object.",
};

}  // namespace

std::vector<ChatConversation> build_format_instruction_pairs(std::size_t n, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "format-instruction-pairs"));
    std::vector<bool> wants_react(n, false);
    for (std::size_t i = 0; i < (n + 1) / 2; ++i) wants_react[i] = true;
    rng.shuffle(wants_react);

    const auto& tasks = format_tasks();
    std::vector<ChatConversation> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& task = tasks[rng.below(tasks.size())];
        json args = json::object();
        std::string question = task.question;
        std::string thought = task.thought;
        std::string signature;
        for (const auto& [name, pool] : task.params) {
            const json& v = pool[rng.below(pool.size())];
            args[name] = v;
            question = replace_all(question, "{" + name + "}", describe_value(v));
            thought = replace_all(thought, "{" + name + "}", describe_value(v));
            if (!signature.empty()) signature += ", ";
            signature += name;
        }
        const bool react = wants_react[i];
        const auto& requests = react ? kReactRequests : kJsonRequests;
        std::string request = requests[rng.below(requests.size())];
        std::string user = request + "\n\nTool: " + task.tool + "(" + signature + ") - " + task.description +
                           "\nQuestion: " + question;
        std::string reply = react ? "Thought: " + thought + "\nAction: " + task.tool + "\nAction Input: " + args.dump()
                                  : json{{"tool", task.tool}, {"arguments", args}}.dump();

        ChatConversation c;
        c.id = "format-" + std::to_string(i);
        c.source = "format-instruction";
        c.style = Style::FormatInstruction;
        c.origin = Origin{c.id, "format-instruction/v1", std::nullopt, false};
        TurnMeta ask = kind_meta(TurnKind::FormatRequest);
        ask.format = react ? "react" : "json";
        TurnMeta answer = kind_meta(TurnKind::FormatResponse);
        answer.format = ask.format;
        c.turns.push_back(make_turn(Role::User, std::move(user), std::move(ask)));
        c.turns.push_back(make_turn(Role::Assistant, std::move(reply), std::move(answer)));
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace aflan
