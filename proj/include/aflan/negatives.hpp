#pragma once

// Negative samples: plain replies to queries that either come with
// irrelevant tools (quadrant B) or ask for tools that are not provided
// (quadrant C).

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "aflan/agenth.hpp"
#include "aflan/chat.hpp"
#include "aflan/trajectory.hpp"
#include "aflan/util.hpp"

namespace aflan {

struct PoolQuery {
    std::string query;
    std::string raw_id;
    // Declared tools and called actions of the originating trajectory.
    std::vector<std::string> source_tools;

    bool operator==(const PoolQuery&) const = default;
};

// n distinct queries (whitespace-normalized comparison), drawn uniformly
// under seed. Throws Error when fewer than n distinct queries exist.
std::vector<PoolQuery> extract_query_pool(std::span<const ReactTrajectory> corpus, std::size_t n, std::uint64_t seed);

// Every tool of the corpus, first declaration wins, in name order.
std::vector<ToolSchema> collect_tool_pool(std::span<const ReactTrajectory> corpus);

struct QuadrantAssignment {
    PoolQuery query;
    Quadrant quadrant = Quadrant::C_NoToolsToolQuery;
    std::vector<ToolSchema> tools;
};

struct AssignResult {
    std::vector<QuadrantAssignment> items;  // in query order
    std::vector<std::string> warnings;
};

// ceil(n/2) queries get quadrant B with k tools from the pool whose names do
// not occur in the query's source trajectory; the rest get quadrant C. An
// empty pool makes every query C.
AssignResult assign_quadrants(const std::vector<PoolQuery>& queries, const std::vector<ToolSchema>& tool_pool,
                              std::uint64_t seed, std::size_t k = 2);

enum class GeneratorKind { External, Template };
std::string_view generator_kind_name(GeneratorKind k);
GeneratorKind parse_generator_kind(std::string_view s);

struct NegativeSample {
    std::string id;
    Quadrant quadrant = Quadrant::C_NoToolsToolQuery;
    std::vector<ToolSchema> system_tools;
    std::string query;
    std::string response;
    GeneratorKind generator = GeneratorKind::Template;
    std::string raw_id;
};

// Prompt in, text out. Implementations throw on transport failure.
class TextGenerator {
public:
    virtual ~TextGenerator() = default;
    virtual std::string complete(const std::string& prompt) = 0;
};

struct ExternalGeneratorConfig {
    std::string endpoint;  // http(s)://host[:port]/path
    std::string model;
    std::string api_key_env = "AFLAN_GENERATOR_API_KEY";
    double timeout_seconds = 30.0;
    std::size_t retries = 2;       // extra attempts per sample
    std::size_t max_in_flight = 4;

    std::vector<std::string> validate() const;
    static ExternalGeneratorConfig from_config(const KeyValueConfig& cfg, const std::string& prefix = "");
    void to_config(KeyValueConfig& cfg, const std::string& prefix = "") const;
};

// POSTs {"model", "prompt"} as JSON and reads the "completion" field of the
// reply. The credential, when the variable is set, goes in a bearer header.
class HttpTextGenerator final : public TextGenerator {
public:
    explicit HttpTextGenerator(ExternalGeneratorConfig config);
    std::string complete(const std::string& prompt) override;

private:
    ExternalGeneratorConfig config_;
    std::string base_;
    std::string path_;
};

// Offline refusals from a small rotation of schemas, parameterized by topic
// words taken from the query. Tools, when present, are ignored.
class TemplateResponder {
public:
    explicit TemplateResponder(std::uint64_t seed = 0) : seed_(seed) {}
    std::string respond(const std::string& query) const;
    static std::string topic_of(const std::string& query);
    static std::size_t schema_count();

private:
    std::uint64_t seed_;
};

// The prompt sent to an external generator: the bare query, with no tool
// information.
std::string negative_prompt(const QuadrantAssignment& item);

// A response is acceptable when it is non-empty, raises no detector flag and
// holds no call object.
std::optional<std::string> reject_reason(const std::string& response, const DetectorConfig& detector);

struct NegativeOptions {
    GeneratorKind generator = GeneratorKind::Template;
    std::size_t retries = 2;
    std::size_t max_in_flight = 4;
    std::uint64_t seed = 0;
    DetectorConfig detector;
    std::string id_prefix = "neg-";
};

struct NegativeDrop {
    std::string id;
    std::string reason;
};

using GenerateResult = std::variant<NegativeSample, NegativeDrop>;

// One sample. External output is retried up to the budget on transport
// errors and rejections, then replaced by the template response; a template
// response that fails validation drops the sample.
GenerateResult generate_response(const QuadrantAssignment& item, std::size_t index, TextGenerator* external,
                                 const NegativeOptions& options, std::vector<std::string>* log = nullptr);

struct NegativeRun {
    std::vector<NegativeSample> samples;
    std::vector<NegativeDrop> drops;
    std::vector<std::string> log;
    std::size_t fallbacks = 0;
};

// Runs generation over all items. External requests run with at most
// max_in_flight in flight; results keep input order.
NegativeRun generate_negatives(const std::vector<QuadrantAssignment>& items, TextGenerator* external,
                               const NegativeOptions& options);

inline constexpr std::string_view kNegativeSystemPrompt = "You are a helpful assistant.";

ChatConversation negative_to_conversation(const NegativeSample& sample);

}  // namespace aflan
