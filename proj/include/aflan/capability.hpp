#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "aflan/chat.hpp"

namespace aflan {

// Fills `capability` on every assistant turn from its turn kind:
// thought and final answer -> Reasoning, action name -> Retrieval,
// argument value -> Understanding, format-instruction reply ->
// InstructionFollowing. Throws Error on conversations without turn metadata,
// without assistant turns, or of a style that carries no capability
// structure.
ChatConversation tag_capabilities(ChatConversation conv);

// One bucket per capability. A fragment is the source conversation cut after
// its last turn of that capability, with the loss mask narrowed to the
// capability's turns.
struct CapabilitySplit {
    std::array<std::vector<ChatConversation>, kCapabilityCount> fragments;
    std::array<std::size_t, kCapabilityCount> turn_counts{};

    const std::vector<ChatConversation>& bucket(Capability c) const {
        return fragments[static_cast<std::size_t>(c)];
    }
    std::size_t turns(Capability c) const { return turn_counts[static_cast<std::size_t>(c)]; }
    std::size_t total_turns() const;
};

CapabilitySplit split_by_capability(std::span<const ChatConversation> corpus);

// Fragment id for a conversation's capability subset.
std::string fragment_id(const std::string& conversation_id, Capability c);

}  // namespace aflan
