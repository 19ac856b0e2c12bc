#pragma once

// Deterministic weighted composition of training mixtures.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aflan/chat.hpp"
#include "aflan/tokenizer.hpp"
#include "aflan/util.hpp"

namespace aflan {

// Largest-remainder (Hamilton) apportionment of `total` seats over
// non-negative weights. Ties in the fractional part go to the lower index.
std::vector<std::size_t> largest_remainder(std::span<const double> weights, std::size_t total);

// Sorted indices of a uniformly drawn subset of size round(fraction * n).
// For one seed, smaller fractions select subsets of larger ones.
std::vector<std::size_t> slice_indices(std::size_t n, double fraction, std::uint64_t seed);

template <typename T>
std::vector<T> slice_fraction(const std::vector<T>& corpus, double fraction, std::uint64_t seed) {
    std::vector<T> out;
    for (auto i : slice_indices(corpus.size(), fraction, seed)) out.push_back(corpus[i]);
    return out;
}

struct NamedSource {
    std::string name;
    std::vector<ordered_json> records;
};

// One mixture channel: either a share of the weighted total or a fixed count.
struct SourceQuota {
    std::string name;
    double weight = 0.0;
    std::optional<std::size_t> fixed_count;
};

struct MixPlan {
    std::vector<SourceQuota> sources;
    // Size of the weighted part. When absent, the largest total that no
    // weighted source has to oversample for.
    std::optional<std::size_t> total;
    std::uint64_t seed = 0;
    bool oversample = false;
    double data_fraction = 1.0;
};

struct SourceManifest {
    std::size_t available = 0;
    std::size_t target = 0;   // apportioned count before slicing
    std::size_t emitted = 0;  // count in the output
    std::size_t repeats = 0;  // emitted beyond one copy of each record
    std::size_t tokens = 0;
    double tokens_millions = 0.0;
};

struct MixManifest {
    std::map<std::string, SourceManifest> sources;
    std::size_t output_size = 0;
    std::uint64_t seed = 0;
    std::string spec_hash;
    double data_fraction = 1.0;

    ordered_json to_json() const;
};

struct MixResult {
    std::vector<ordered_json> records;
    // (source index in the input list, record index) for each emitted record
    std::vector<std::pair<std::size_t, std::size_t>> provenance;
    MixManifest manifest;
};

// Per-source targets for a plan over sources of the given sizes.
std::map<std::string, std::size_t> plan_targets(const MixPlan& plan, const std::map<std::string, std::size_t>& available);

// Throws Error when a source is missing, or when a target exceeds its source
// and oversampling is off.
MixResult compose_mixture(const std::vector<NamedSource>& sources, const MixPlan& plan,
                          const TokenCounter& counter = default_token_counter());

std::string plan_hash(const MixPlan& plan);

// Text of a record for token counting: the turn contents when the record is a
// conversation, otherwise the serialized record.
std::string record_text(const ordered_json& record);

// ---------------------------------------------------------------------------
// Agent mixture recipe
// ---------------------------------------------------------------------------

// Channel names used by the recipe.
namespace channel {
inline constexpr const char* kReasoning = "reasoning";
inline constexpr const char* kRetrieval = "retrieval";
inline constexpr const char* kUnderstanding = "understanding";
inline constexpr const char* kInstructionFollowing = "instruction_following";
inline constexpr const char* kReact = "react";
inline constexpr const char* kNegatives = "negatives";
inline constexpr const char* kGeneral = "general";
}  // namespace channel

struct MixSpec {
    // Retention weights for the capability subsets (share of each subset kept).
    std::map<Capability, double> capability_weights{
        {Capability::Reasoning, 1.0}, {Capability::Retrieval, 0.25}, {Capability::Understanding, 0.75}};
    double react_fraction = 0.10;        // share of ReAct-format samples in the agent data
    double general_agent_ratio = 1.0;    // general : agent
    std::size_t instruction_following_count = 2000;
    std::optional<std::string> negative_source;
    double data_fraction = 1.0;
    std::uint64_t seed = 0;
    bool oversample = false;
    std::map<std::string, std::string> source_paths;  // channel -> container file

    // Violations name the offending config key.
    std::vector<std::string> validate() const;
    static MixSpec from_config(const KeyValueConfig& cfg, const std::string& prefix = "");
    void to_config(KeyValueConfig& cfg, const std::string& prefix = "") const;
};

// Turns the recipe into a plan over the channels present in `available`:
// capability subsets weighted by retention, ReAct samples making up
// react_fraction of the weighted agent part, fixed instruction-following and
// negative counts, and general data at general_agent_ratio of all agent data.
MixPlan recipe_plan(const MixSpec& spec, const std::map<std::string, std::size_t>& available);

}  // namespace aflan
