#pragma once

// Stage drivers shared by the CLI, and the end-to-end pipeline run.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "aflan/agenth.hpp"
#include "aflan/capability.hpp"
#include "aflan/chat.hpp"
#include "aflan/mixture.hpp"
#include "aflan/negatives.hpp"
#include "aflan/trajectory.hpp"
#include "aflan/util.hpp"

namespace aflan {

inline constexpr std::string_view kToolName = "aflan";
inline constexpr std::string_view kToolVersion = "0.1.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitStageFailure = 3;

// ---------------------------------------------------------------------------
// Stage drivers
// ---------------------------------------------------------------------------

struct IngestResult {
    std::size_t inputs = 0;
    std::vector<ReactTrajectory> kept;
    std::vector<ordered_json> drop_log;  // {id, code, detail}
    std::map<std::string, std::size_t> drop_counts;  // by code name
};

// Parse and filter raw records. `fallback` is the source family for records
// that do not name one.
IngestResult ingest_records(std::span<const ordered_json> records, std::optional<SourceFamily> fallback,
                            const FilterPolicy& policy);

struct AlignResult {
    std::vector<ChatConversation> chat;
    std::vector<ChatConversation> react;
    std::vector<ordered_json> drop_log;
};

AlignResult align_corpus(std::span<const ReactTrajectory> trajectories, const ElicitTemplateSet& templates,
                         const AlignOptions& options);

struct DecomposeResult {
    std::size_t inputs = 0;
    std::size_t tagged = 0;
    CapabilitySplit split;
    std::vector<ordered_json> drop_log;

    ordered_json counts_json() const;
};

DecomposeResult decompose_corpus(std::span<const ChatConversation> conversations);

// Writes <capability>.jsonl per capability and counts.json into dir.
void write_decompose_outputs(const std::filesystem::path& dir, const DecomposeResult& result);

struct NegativeSettings {
    std::size_t queries = 761;
    std::size_t tools_per_sample = 2;
    GeneratorKind generator = GeneratorKind::Template;
    ExternalGeneratorConfig external;
};

struct NegativesResult {
    std::size_t requested = 0;
    AssignResult assignment;
    NegativeRun run;

    std::size_t count(Quadrant q) const;
};

// Pool extraction, quadrant assignment and generation. Seeds for the pool,
// assignment and templates are derived from `seed` by stage name.
NegativesResult synthesize_negatives(std::span<const ReactTrajectory> corpus, const NegativeSettings& settings,
                                     const DetectorConfig& detector, std::uint64_t seed);
// Same, with a caller-supplied client used in place of the configured one.
NegativesResult synthesize_negatives(std::span<const ReactTrajectory> corpus, const NegativeSettings& settings,
                                     const DetectorConfig& detector, std::uint64_t seed, TextGenerator* external);

// Loads every channel named in spec.source_paths (relative paths resolve
// against base_dir) and composes the recipe mixture.
MixResult mix_from_spec(const MixSpec& spec, const std::filesystem::path& base_dir);
MixResult mix_channels(const MixSpec& spec, const std::vector<NamedSource>& channels);

// ---------------------------------------------------------------------------
// Pipeline configuration
// ---------------------------------------------------------------------------

struct PipelineConfig {
    std::uint64_t seed = 0;
    std::filesystem::path output_dir;
    std::map<SourceFamily, std::filesystem::path> inputs;  // toolbench / agentinstruct
    std::optional<std::filesystem::path> general_input;
    FilterPolicy filter;
    std::optional<std::filesystem::path> templates_path;
    bool strict = false;
    MixSpec mix;
    NegativeSettings negatives;
    DetectorConfig detector;
    std::string config_hash;

    // Relative paths resolve against base_dir. Call validate_config first;
    // this throws Error on the first problem it meets.
    static PipelineConfig from_config(const KeyValueConfig& cfg, const std::filesystem::path& base_dir);
};

// Every violation names its key. Empty means valid.
std::vector<std::string> validate_config(const KeyValueConfig& cfg, const std::filesystem::path& base_dir);

// Hash of the configuration entries sorted by key, without output_dir.
std::string config_hash(const KeyValueConfig& cfg);

// ---------------------------------------------------------------------------
// Run
// ---------------------------------------------------------------------------

struct StageReport {
    std::string name;
    std::size_t inputs = 0;
    std::size_t outputs = 0;
    std::size_t drops = 0;
    ordered_json detail = ordered_json::object();
    double seconds = 0.0;
};

struct RunManifest {
    std::string tool_version;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<StageReport> stages;
    ordered_json tokens = ordered_json::object();  // per-source token counts

    // Wall-clock timings are left out unless asked for, so manifests of
    // identical runs compare equal byte for byte.
    ordered_json to_json(bool with_timings = false) const;
};

class StageFailure : public Error {
public:
    StageFailure(std::string stage, const std::string& message)
        : Error("stage '" + stage + "' failed: " + message), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

struct RunOptions {
    bool manifest_timings = false;
    std::ostream* log = nullptr;
    TextGenerator* external = nullptr;  // overrides the configured HTTP client
};

inline constexpr const char* kStageNames[] = {"ingest", "align", "decompose", "negatives", "mix"};

// Runs ingest, align, decompose, negatives and mix. Each stage writes into a
// staging directory that is renamed into place when the stage succeeds; a
// failing stage throws StageFailure and leaves earlier outputs in place.
RunManifest run_pipeline(const PipelineConfig& config, const RunOptions& options = {});

}  // namespace aflan
