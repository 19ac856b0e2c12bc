#pragma once

// ReAct trajectory parsing, corpus filters and corpus statistics.

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "aflan/tokenizer.hpp"
#include "aflan/util.hpp"

namespace aflan {

enum class SourceFamily { AgentInstruct, ToolBench, General };

struct Source {
    SourceFamily family = SourceFamily::ToolBench;
    std::string task;  // AgentInstruct task label ("os", "webshop", ...); empty otherwise

    // "toolbench", "agentinstruct", "agentinstruct/os", "general"
    std::string label() const;
    static Source from_label(std::string_view label);

    bool operator==(const Source&) const = default;
};

std::string_view family_name(SourceFamily f);
SourceFamily parse_family(std::string_view name);

struct ToolParam {
    std::string name;
    std::string type;
    std::string description;
    bool required = false;

    bool operator==(const ToolParam&) const = default;
};

struct ToolSchema {
    std::string name;
    std::string description;
    std::vector<ToolParam> parameters;

    bool operator==(const ToolSchema&) const = default;
};

struct ReactStep {
    std::string thought;
    std::string action;
    json action_input = json::object();  // always an object
    std::string observation;

    bool operator==(const ReactStep&) const = default;
};

struct ReactTrajectory {
    Source source;
    std::string raw_id;
    std::string system_prompt;
    std::vector<ToolSchema> tools;
    std::string query;
    std::vector<ReactStep> steps;
    std::optional<std::string> final_answer;

    const ToolSchema* find_tool(std::string_view name) const;
    bool operator==(const ReactTrajectory&) const = default;
};

enum class DropCode { MalformedFormat, FewShotExample, NoFinalAnswer, DfsdtRestart, UnparseableArgs };

std::string_view drop_code_name(DropCode c);
DropCode parse_drop_code(std::string_view name);

struct DropReason {
    DropCode code;
    std::string detail;
};

// Line-anchored segment markers. Each kind may have several aliases; the
// first alias of each list is the one used when rendering.
struct MarkerGrammar {
    std::vector<std::string> thought{"Thought:"};
    std::vector<std::string> action{"Action:"};
    std::vector<std::string> action_input{"Action Input:", "ActionInput:"};
    std::vector<std::string> observation{"Observation:"};
    std::vector<std::string> final_answer{"Final Answer:"};
    std::string finish_action = "Finish";

    bool is_finish(std::string_view action) const;
};

enum class SegmentKind { Thought, Action, ActionInput, Observation, FinalAnswer };

struct Segment {
    SegmentKind kind;
    std::string marker;  // the alias that matched
    std::string body;    // trimmed
};

struct Segmentation {
    std::string leading;  // text before the first marker line, trimmed
    std::vector<Segment> segments;
};

Segmentation segment_react(std::string_view text, const MarkerGrammar& grammar = {});
// Inverse of segment_react up to whitespace normalization.
std::string join_segments(const Segmentation& seg);

inline constexpr std::string_view kDfsdtRestartPrefix = "This is not the first time you try this task";

using ParseResult = std::variant<ReactTrajectory, DropReason>;

// Parses one corpus record: {id, source, system, tools, conversations}.
// Conversation turns may use role/content or from/value keys. Observations
// arrive as function/tool/observation turns, as later user turns, or inline
// after an `Observation:` marker. `fallback` is used when the record carries
// no source field.
ParseResult parse_react(const ordered_json& record, std::optional<SourceFamily> fallback = std::nullopt,
                        const MarkerGrammar& grammar = {});

// Parses the text after an `Action Input:` marker. nullopt when the text
// looks like JSON but is not a key-value object.
std::optional<json> parse_action_input(std::string_view body);

enum class FewShotPolicy { Strip, Drop };

struct FilterPolicy {
    FewShotPolicy few_shot = FewShotPolicy::Strip;
    MarkerGrammar grammar;
};

// Number of complete Thought/Action/Action Input cycles in `text`.
std::size_t count_react_cycles(std::string_view text, const MarkerGrammar& grammar = {});
// A demonstration block is any cycle after the first one in the system
// prompt (the first is the format description itself).
bool has_few_shot_block(std::string_view system_prompt, const MarkerGrammar& grammar = {});
std::string strip_few_shot_block(std::string_view system_prompt, const MarkerGrammar& grammar = {});

using FilterResult = std::variant<ReactTrajectory, DropReason>;

FilterResult apply_filters(ReactTrajectory traj, const FilterPolicy& policy = {});

// Structural validation shared by the parser and the JSON reader.
std::optional<std::string> validate_trajectory(const ReactTrajectory& traj, const MarkerGrammar& grammar = {});

struct SourceStats {
    std::size_t samples = 0;
    std::size_t tokens = 0;
};

struct CorpusStats {
    std::map<std::string, SourceStats> per_source;  // keyed by Source::label()
    std::size_t total_samples() const;
    std::size_t total_tokens() const;
};

// All text a trajectory contributes to training, in order.
std::string trajectory_text(const ReactTrajectory& traj);

CorpusStats corpus_stats(std::span<const ReactTrajectory> trajectories, const TokenCounter& counter);
CorpusStats corpus_stats(std::span<const ReactTrajectory> trajectories);

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

ordered_json tool_to_json(const ToolSchema& tool);
ToolSchema tool_from_json(const ordered_json& j);
ordered_json tools_to_json(const std::vector<ToolSchema>& tools);
std::vector<ToolSchema> tools_from_json(const ordered_json& j);
// Pretty tool listing used inside system turns.
std::string render_tool_block(const std::vector<ToolSchema>& tools);

// Classical ReAct serialization as (role, content) turns: optional system,
// the user query, assistant Thought/Action/Action Input blocks, user
// `Observation:` turns and a closing `Final Answer:` block.
std::vector<std::pair<std::string, std::string>> render_react_turns(const ReactTrajectory& traj,
                                                                    const MarkerGrammar& grammar = {});
std::string render_step_block(const ReactStep& step, const MarkerGrammar& grammar = {});

// Container record holding the parsed trajectory alongside its ReAct
// conversation, so the record is also valid parse_react input.
ordered_json trajectory_to_json(const ReactTrajectory& traj);
// Reads the structured fields when present, otherwise parses the
// conversation. Throws Error on records that do not yield a trajectory.
ReactTrajectory trajectory_from_json(const ordered_json& j);

ordered_json drop_log_entry(const std::string& id, const DropReason& reason);

}  // namespace aflan
