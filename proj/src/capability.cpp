#include "aflan/capability.hpp"

namespace aflan {

namespace {

std::optional<Capability> capability_for(TurnKind kind) {
    switch (kind) {
        case TurnKind::Thought:
        case TurnKind::FinalAnswer: return Capability::Reasoning;
        case TurnKind::Action: return Capability::Retrieval;
        case TurnKind::Argument: return Capability::Understanding;
        case TurnKind::FormatResponse: return Capability::InstructionFollowing;
        default: return std::nullopt;
    }
}

}  // namespace

ChatConversation tag_capabilities(ChatConversation conv) {
    if (conv.style != Style::Chat && conv.style != Style::FormatInstruction) {
        throw Error("conversation '" + conv.id + "': cannot tag capabilities on style " +
                    std::string(style_name(conv.style)));
    }
    bool any_assistant = false;
    for (std::size_t i = 0; i < conv.turns.size(); ++i) {
        auto& turn = conv.turns[i];
        if (!turn.meta) {
            throw Error("conversation '" + conv.id + "': turn " + std::to_string(i) + " lacks inversion metadata");
        }
        if (turn.role != Role::Assistant) continue;
        any_assistant = true;
        auto cap = capability_for(turn.meta->kind);
        if (!cap) {
            throw Error("conversation '" + conv.id + "': assistant turn " + std::to_string(i) + " has kind " +
                        std::string(turn_kind_name(turn.meta->kind)) + " with no capability");
        }
        turn.capability = cap;
    }
    if (!any_assistant) throw Error("conversation '" + conv.id + "' has no assistant turns");
    return conv;
}

std::size_t CapabilitySplit::total_turns() const {
    std::size_t n = 0;
    for (auto c : turn_counts) n += c;
    return n;
}

std::string fragment_id(const std::string& conversation_id, Capability c) {
    return conversation_id + "#" + capability_key(c);
}

CapabilitySplit split_by_capability(std::span<const ChatConversation> corpus) {
    CapabilitySplit split;
    for (const auto& conv : corpus) {
        std::array<std::optional<std::size_t>, kCapabilityCount> last_turn;
        for (std::size_t i = 0; i < conv.turns.size(); ++i) {
            const auto& turn = conv.turns[i];
            if (!turn.loss_mask) continue;
            if (!turn.capability) {
                throw Error("conversation '" + conv.id + "': loss-bearing turn " + std::to_string(i) +
                            " is untagged");
            }
            auto idx = static_cast<std::size_t>(*turn.capability);
            last_turn[idx] = i;
            ++split.turn_counts[idx];
        }
        for (auto cap : kAllCapabilities) {
            auto idx = static_cast<std::size_t>(cap);
            if (!last_turn[idx]) continue;
            ChatConversation frag = conv;
            frag.id = fragment_id(conv.id, cap);
            frag.turns.resize(*last_turn[idx] + 1);
            for (auto& turn : frag.turns) {
                turn.loss_mask = turn.loss_mask && turn.capability == cap;
            }
            split.fragments[idx].push_back(std::move(frag));
        }
    }
    return split;
}

}  // namespace aflan
