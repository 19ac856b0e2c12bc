#pragma once

// Chat alignment: ReAct trajectories to multi-turn conversations with
// elicit statements, the reverse transform, the classical ReAct rendering,
// and format-instruction pairs.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "aflan/trajectory.hpp"
#include "aflan/util.hpp"

namespace aflan {

enum class Role { System, User, Assistant };
enum class Capability { Reasoning, Retrieval, Understanding, InstructionFollowing };
enum class Style { Chat, React, FormatInstruction, Negative, General };
enum class Quadrant { A_NoToolsNormalQuery, B_ToolsNormalQuery, C_NoToolsToolQuery, D_ToolsToolQuery };

inline constexpr std::size_t kCapabilityCount = 4;
inline constexpr Capability kAllCapabilities[kCapabilityCount] = {
    Capability::Reasoning, Capability::Retrieval, Capability::Understanding, Capability::InstructionFollowing};

std::string_view role_name(Role r);
Role parse_role(std::string_view s);
std::string_view capability_name(Capability c);
// Accepts the display name or its snake_case form ("instruction_following").
Capability parse_capability(std::string_view s);
std::string capability_key(Capability c);  // snake_case, used for file names and config keys
std::string_view style_name(Style s);
Style parse_style(std::string_view s);
std::string_view quadrant_name(Quadrant q);  // "A".."D"
Quadrant parse_quadrant(std::string_view s);

// What a turn is, so the alignment can be inverted and turns tagged without
// looking at their text.
enum class TurnKind {
    System,
    Query,
    ThoughtElicit,   // user; may carry the previous step's observation
    Thought,
    ActionElicit,
    Action,
    ArgumentElicit,
    Argument,
    FinalElicit,     // user; may carry the last observation
    FinalAnswer,
    Observation,     // user; trailing observation with nothing after it
    FormatRequest,
    FormatResponse,
    Response,        // plain assistant reply (react blocks, negatives, general chat)
};

std::string_view turn_kind_name(TurnKind k);
TurnKind parse_turn_kind(std::string_view s);

struct TurnMeta {
    TurnKind kind = TurnKind::Response;
    std::optional<std::size_t> step;
    std::optional<std::string> arg;            // argument key for ArgumentElicit / Argument
    bool arg_json = false;                     // argument value is canonical JSON, not a bare string
    std::optional<std::size_t> obs_begin;      // observation span inside a user turn
    std::size_t obs_len = 0;
    std::optional<std::string> format;         // "react" or "json" for format-instruction turns

    bool operator==(const TurnMeta&) const = default;
};

struct ChatTurn {
    Role role = Role::User;
    std::string content;
    bool loss_mask = false;
    std::optional<Capability> capability;
    std::optional<TurnMeta> meta;

    bool operator==(const ChatTurn&) const = default;
};

struct Origin {
    std::string raw_id;
    std::string transform;  // e.g. "align-chat/elicit-v1"
    std::optional<std::size_t> step_count;
    bool has_final = false;

    bool operator==(const Origin&) const = default;
};

struct ChatConversation {
    std::string id;
    std::string source;  // Source::label() or a free label for general data
    Style style = Style::Chat;
    std::string system_prompt;
    std::vector<ToolSchema> tools;
    std::vector<ChatTurn> turns;
    Origin origin;
    std::optional<Quadrant> quadrant;

    bool operator==(const ChatConversation&) const = default;
};

// Checks: non-empty, leading turn is system or user, strict user/assistant
// alternation after the optional system turn, loss only on assistant turns.
std::optional<std::string> check_conversation(const ChatConversation& conv);

ordered_json conversation_to_json(const ChatConversation& conv);
ChatConversation conversation_from_json(const ordered_json& j);
std::vector<ChatConversation> read_conversations(const std::filesystem::path& path);
std::string dump_conversations(const std::vector<ChatConversation>& convs);

struct ElicitTemplateSet {
    std::string version = "elicit-v1";
    std::vector<std::string> thought_elicit{"What should you do next?"};
    std::vector<std::string> action_elicit{"Which tool should you use for this step?"};
    std::string argument_elicit = "What value should {param} take?";
    std::vector<std::string> final_elicit{"What is your final answer?"};
    std::string observation_wrapper = "The tool returned:\n{observation}";
    // When set, each elicit is picked from its list by a hash of (seed,
    // record id, step); otherwise the first entry is always used.
    bool rotate = false;
    std::uint64_t seed = 0;

    static constexpr std::string_view kParamSlot = "{param}";
    static constexpr std::string_view kObservationSlot = "{observation}";

    std::optional<std::string> validate() const;
    static ElicitTemplateSet from_json(const json& j);
    static ElicitTemplateSet load(const std::filesystem::path& path);
    json to_json() const;
};

class AlignmentError : public Error {
public:
    using Error::Error;
};

struct AlignOptions {
    // Reject action inputs with keys missing from the tool's schema.
    bool strict = false;
    MarkerGrammar grammar;
};

ChatConversation align_to_chat(const ReactTrajectory& traj, const ElicitTemplateSet& templates = {},
                               const AlignOptions& options = {});

// Throws AlignmentError when metadata is missing or the turn structure is
// incomplete (e.g. an elicited argument without its answer).
ReactTrajectory invert_alignment(const ChatConversation& conv, const MarkerGrammar& grammar = {});

ChatConversation render_react(const ReactTrajectory& traj, const MarkerGrammar& grammar = {});

// n user/assistant pairs requesting ReAct or JSON output, split 1:1 (the
// odd one out goes to ReAct).
std::vector<ChatConversation> build_format_instruction_pairs(std::size_t n, std::uint64_t seed);

// Bare string arguments stay as-is; everything else is canonical JSON.
std::string render_argument_value(const json& value);

}  // namespace aflan
