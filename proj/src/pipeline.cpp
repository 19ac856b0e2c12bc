#include "aflan/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <set>

namespace aflan {

namespace fs = std::filesystem;

namespace {

ordered_json drop_entry(const std::string& id, const std::string& code, const std::string& detail) {
    return ordered_json{{"id", id}, {"code", code}, {"detail", detail}};
}

fs::path resolve(const fs::path& base, const std::string& value) {
    fs::path p(value);
    return p.is_absolute() ? p : base / p;
}

const std::set<std::string>& known_channels() {
    static const std::set<std::string> names{channel::kReasoning,  channel::kRetrieval, channel::kUnderstanding,
                                             channel::kInstructionFollowing, channel::kReact,
                                             channel::kNegatives,  channel::kGeneral};
    return names;
}

}  // namespace

// ---------------------------------------------------------------------------
// Stage drivers
// ---------------------------------------------------------------------------

IngestResult ingest_records(std::span<const ordered_json> records, std::optional<SourceFamily> fallback,
                            const FilterPolicy& policy) {
    IngestResult r;
    r.inputs = records.size();
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& rec = records[i];
        std::string id = rec.is_object() && rec.contains("id")
                             ? (rec["id"].is_string() ? rec["id"].get<std::string>() : rec["id"].dump())
                             : "record-" + std::to_string(i);
        auto drop = [&](const DropReason& reason) {
            r.drop_log.push_back(drop_log_entry(id, reason));
            ++r.drop_counts[std::string(drop_code_name(reason.code))];
        };
        auto parsed = parse_react(rec, fallback, policy.grammar);
        if (auto* reason = std::get_if<DropReason>(&parsed)) {
            drop(*reason);
            continue;
        }
        auto filtered = apply_filters(std::get<ReactTrajectory>(std::move(parsed)), policy);
        if (auto* reason = std::get_if<DropReason>(&filtered)) {
            drop(*reason);
            continue;
        }
        r.kept.push_back(std::get<ReactTrajectory>(std::move(filtered)));
    }
    return r;
}

AlignResult align_corpus(std::span<const ReactTrajectory> trajectories, const ElicitTemplateSet& templates,
                         const AlignOptions& options) {
    AlignResult r;
    for (const auto& t : trajectories) {
        try {
            auto chat = align_to_chat(t, templates, options);
            r.react.push_back(render_react(t, options.grammar));
            r.chat.push_back(std::move(chat));
        } catch (const AlignmentError& e) {
            r.drop_log.push_back(drop_entry(t.raw_id, "AlignmentError", e.what()));
        }
    }
    return r;
}

ordered_json DecomposeResult::counts_json() const {
    ordered_json fragments = ordered_json::object();
    ordered_json turns = ordered_json::object();
    for (auto c : kAllCapabilities) {
        fragments[capability_key(c)] = split.bucket(c).size();
        turns[capability_key(c)] = split.turns(c);
    }
    return ordered_json{{"inputs", inputs},
                        {"tagged", tagged},
                        {"dropped", drop_log.size()},
                        {"fragments", fragments},
                        {"loss_turns", turns},
                        {"total_loss_turns", split.total_turns()}};
}

DecomposeResult decompose_corpus(std::span<const ChatConversation> conversations) {
    DecomposeResult r;
    r.inputs = conversations.size();
    std::vector<ChatConversation> tagged;
    for (const auto& c : conversations) {
        try {
            tagged.push_back(tag_capabilities(c));
        } catch (const Error& e) {
            r.drop_log.push_back(drop_entry(c.id, "Untaggable", e.what()));
        }
    }
    r.tagged = tagged.size();
    r.split = split_by_capability(tagged);
    return r;
}

void write_decompose_outputs(const fs::path& dir, const DecomposeResult& result) {
    fs::create_directories(dir);
    for (auto c : kAllCapabilities) {
        write_file_atomic(dir / (capability_key(c) + ".jsonl"), dump_conversations(result.split.bucket(c)));
    }
    write_file_atomic(dir / "counts.json", result.counts_json().dump(2) + "\n");
}

std::size_t NegativesResult::count(Quadrant q) const {
    return static_cast<std::size_t>(
        std::count_if(run.samples.begin(), run.samples.end(), [&](const NegativeSample& s) { return s.quadrant == q; }));
}

NegativesResult synthesize_negatives(std::span<const ReactTrajectory> corpus, const NegativeSettings& settings,
                                     const DetectorConfig& detector, std::uint64_t seed, TextGenerator* external) {
    NegativesResult r;
    r.requested = settings.queries;
    auto pool = extract_query_pool(corpus, settings.queries, derive_seed(seed, "negatives/pool"));
    r.assignment = assign_quadrants(pool, collect_tool_pool(corpus), derive_seed(seed, "negatives/assign"),
                                    settings.tools_per_sample);
    NegativeOptions opt;
    opt.generator = settings.generator;
    opt.retries = settings.external.retries;
    opt.max_in_flight = settings.external.max_in_flight;
    opt.seed = seed;
    opt.detector = detector;
    std::unique_ptr<HttpTextGenerator> http;
    if (settings.generator == GeneratorKind::External && !external) {
        http = std::make_unique<HttpTextGenerator>(settings.external);
        external = http.get();
    }
    r.run = generate_negatives(r.assignment.items, external, opt);
    return r;
}

NegativesResult synthesize_negatives(std::span<const ReactTrajectory> corpus, const NegativeSettings& settings,
                                     const DetectorConfig& detector, std::uint64_t seed) {
    return synthesize_negatives(corpus, settings, detector, seed, nullptr);
}

MixResult mix_channels(const MixSpec& spec, const std::vector<NamedSource>& channels) {
    std::map<std::string, std::size_t> available;
    for (const auto& c : channels) {
        if (!known_channels().count(c.name)) throw Error("unknown mixture channel '" + c.name + "'");
        available[c.name] = c.records.size();
    }
    return compose_mixture(channels, recipe_plan(spec, available));
}

MixResult mix_from_spec(const MixSpec& spec, const fs::path& base_dir) {
    std::vector<NamedSource> channels;
    for (const auto& [name, path] : spec.source_paths) {
        channels.push_back({name, read_jsonl(resolve(base_dir, path))});
    }
    if (spec.negative_source) {
        if (spec.source_paths.count(channel::kNegatives)) {
            throw Error("negatives given both as negative_source and source.negatives");
        }
        channels.push_back({channel::kNegatives, read_jsonl(resolve(base_dir, *spec.negative_source))});
    }
    return mix_channels(spec, channels);
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

namespace {

const std::set<std::string>& plain_keys() {
    static const std::set<std::string> keys{
        "seed", "output_dir", "input.toolbench", "input.agentinstruct", "input.general", "filter.few_shot",
        "templates", "align.strict", "mix.react_fraction", "mix.general_agent_ratio",
        "mix.instruction_following_count", "mix.data_fraction", "mix.oversample", "negatives.queries",
        "negatives.tools_per_sample", "negatives.generator", "negatives.external.endpoint",
        "negatives.external.model", "negatives.external.api_key_env", "negatives.external.timeout_seconds",
        "negatives.external.retries", "negatives.external.max_in_flight", "detector.react_keywords",
        "detector.react_policy", "detector.general_phrases", "detector.general_policy"};
    return keys;
}

std::size_t parse_count(const std::string& key, const std::string& value) {
    auto n = parse_integer(key, value);
    if (n < 0) throw Error(key + ": must not be negative");
    return static_cast<std::size_t>(n);
}

FewShotPolicy parse_few_shot(const std::string& value) {
    if (value == "strip") return FewShotPolicy::Strip;
    if (value == "drop") return FewShotPolicy::Drop;
    throw Error("filter.few_shot: expected strip or drop, got '" + value + "'");
}

}  // namespace

std::vector<std::string> validate_config(const KeyValueConfig& cfg, const fs::path& base_dir) {
    std::vector<std::string> v;
    for (const auto& [key, value] : cfg.entries()) {
        if (plain_keys().count(key)) continue;
        if (starts_with(key, "mix.weight.")) continue;
        if (key == "mix.seed") {
            v.push_back("mix.seed: the pipeline derives the mixture seed from `seed`");
        } else if (starts_with(key, "mix.source.") || key == "mix.negative_source") {
            v.push_back(key + ": the pipeline supplies mixture sources itself");
        } else {
            v.push_back(key + ": unknown key");
        }
    }

    auto guard = [&](auto&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            v.push_back(e.what());
        }
    };

    if (!cfg.has("seed")) v.push_back("seed: required");
    else guard([&] {
        if (parse_integer("seed", *cfg.get("seed")) < 0) throw Error("seed: must not be negative");
    });
    if (!cfg.has("output_dir") || trim(*cfg.get("output_dir")).empty()) v.push_back("output_dir: required");

    bool any_input = false;
    for (const char* key : {"input.toolbench", "input.agentinstruct", "input.general", "templates"}) {
        auto value = cfg.get(key);
        if (!value) continue;
        if (std::string(key) != "input.general" && std::string(key) != "templates") any_input = true;
        if (!fs::is_regular_file(resolve(base_dir, *value))) v.push_back(std::string(key) + ": file not found: " + *value);
    }
    if (!any_input) v.push_back("input.toolbench: at least one of input.toolbench or input.agentinstruct is required");

    if (auto value = cfg.get("filter.few_shot")) guard([&] { parse_few_shot(*value); });
    if (auto value = cfg.get("align.strict")) guard([&] { parse_bool("align.strict", *value); });
    if (auto value = cfg.get("templates"); value && fs::is_regular_file(resolve(base_dir, *value))) {
        guard([&] {
            auto t = ElicitTemplateSet::load(resolve(base_dir, *value));
            if (auto problem = t.validate()) throw Error("templates: " + *problem);
        });
    }

    guard([&] {
        auto spec = MixSpec::from_config(cfg, "mix.");
        for (const auto& problem : spec.validate()) v.push_back("mix." + problem);
    });

    GeneratorKind generator = GeneratorKind::Template;
    if (auto value = cfg.get("negatives.generator")) {
        guard([&] { generator = parse_generator_kind(*value); });
    }
    if (auto value = cfg.get("negatives.queries")) guard([&] { parse_count("negatives.queries", *value); });
    if (auto value = cfg.get("negatives.tools_per_sample")) {
        guard([&] {
            if (parse_count("negatives.tools_per_sample", *value) == 0) {
                throw Error("negatives.tools_per_sample: must be at least 1");
            }
        });
    }
    guard([&] {
        auto ext = ExternalGeneratorConfig::from_config(cfg, "negatives.external.");
        if (generator == GeneratorKind::External) {
            for (const auto& problem : ext.validate()) v.push_back("negatives.external." + problem);
        }
    });

    guard([&] {
        auto det = DetectorConfig::from_config(cfg, "detector.");
        for (const auto& problem : det.validate()) v.push_back("detector." + problem);
    });
    return v;
}

std::string config_hash(const KeyValueConfig& cfg) {
    std::vector<std::pair<std::string, std::string>> entries;
    for (const auto& e : cfg.entries()) {
        if (e.first != "output_dir") entries.push_back(e);
    }
    std::sort(entries.begin(), entries.end());
    std::string canon;
    for (const auto& [k, val] : entries) canon += k + "=" + val + "\n";
    return hex64(fnv1a64(canon));
}

PipelineConfig PipelineConfig::from_config(const KeyValueConfig& cfg, const fs::path& base_dir) {
    auto problems = validate_config(cfg, base_dir);
    if (!problems.empty()) throw Error(problems.front());
    PipelineConfig c;
    c.seed = static_cast<std::uint64_t>(parse_integer("seed", *cfg.get("seed")));
    c.output_dir = resolve(base_dir, *cfg.get("output_dir"));
    if (auto v = cfg.get("input.toolbench")) c.inputs[SourceFamily::ToolBench] = resolve(base_dir, *v);
    if (auto v = cfg.get("input.agentinstruct")) c.inputs[SourceFamily::AgentInstruct] = resolve(base_dir, *v);
    if (auto v = cfg.get("input.general")) c.general_input = resolve(base_dir, *v);
    if (auto v = cfg.get("filter.few_shot")) c.filter.few_shot = parse_few_shot(*v);
    if (auto v = cfg.get("templates")) c.templates_path = resolve(base_dir, *v);
    if (auto v = cfg.get("align.strict")) c.strict = parse_bool("align.strict", *v);
    c.mix = MixSpec::from_config(cfg, "mix.");
    c.mix.seed = derive_seed(c.seed, "mix");
    if (auto v = cfg.get("negatives.queries")) c.negatives.queries = parse_count("negatives.queries", *v);
    if (auto v = cfg.get("negatives.tools_per_sample")) {
        c.negatives.tools_per_sample = parse_count("negatives.tools_per_sample", *v);
    }
    if (auto v = cfg.get("negatives.generator")) c.negatives.generator = parse_generator_kind(*v);
    c.negatives.external = ExternalGeneratorConfig::from_config(cfg, "negatives.external.");
    c.detector = DetectorConfig::from_config(cfg, "detector.");
    c.config_hash = aflan::config_hash(cfg);
    return c;
}

// ---------------------------------------------------------------------------
// Run
// ---------------------------------------------------------------------------

ordered_json RunManifest::to_json(bool with_timings) const {
    ordered_json stages_json = ordered_json::array();
    for (const auto& s : stages) {
        ordered_json j{{"name", s.name}, {"inputs", s.inputs}, {"outputs", s.outputs}, {"drops", s.drops}};
        j["detail"] = s.detail;
        if (with_timings) j["wall_clock_seconds"] = s.seconds;
        stages_json.push_back(std::move(j));
    }
    return ordered_json{{"tool", std::string(kToolName)},
                        {"tool_version", tool_version},
                        {"config_hash", config_hash},
                        {"seed", seed},
                        {"stages", stages_json},
                        {"tokens", tokens}};
}

namespace {

class Stager {
public:
    explicit Stager(fs::path out) : out_(std::move(out)), staging_(out_ / ".staging") {}

    fs::path begin(const std::string& stage) {
        fs::path dir = staging_ / stage;
        fs::remove_all(dir);
        fs::create_directories(dir);
        return dir;
    }

    void publish(const std::string& stage) {
        fs::path final_dir = out_ / stage;
        fs::path old = staging_ / (stage + ".old");
        fs::remove_all(old);
        if (fs::exists(final_dir)) fs::rename(final_dir, old);
        fs::rename(staging_ / stage, final_dir);
        fs::remove_all(old);
    }

    void abandon(const std::string& stage) {
        std::error_code ec;
        fs::remove_all(staging_ / stage, ec);
    }

    void finish() {
        std::error_code ec;
        fs::remove_all(staging_, ec);
    }

private:
    fs::path out_;
    fs::path staging_;
};

void write_records(const fs::path& path, const std::vector<ordered_json>& records) {
    write_file_atomic(path, dump_jsonl(records));
}

std::vector<ChatConversation> load_conversations(const fs::path& path) { return read_conversations(path); }

}  // namespace

RunManifest run_pipeline(const PipelineConfig& config, const RunOptions& options) {
    RunManifest manifest;
    manifest.tool_version = std::string(kToolVersion);
    manifest.config_hash = config.config_hash;
    manifest.seed = config.seed;

    const fs::path& out = config.output_dir;
    fs::create_directories(out);
    Stager stager(out);
    const auto& counter = default_token_counter();

    auto run_stage = [&](const std::string& name, auto&& body) {
        auto start = std::chrono::steady_clock::now();
        if (options.log) *options.log << "[" << name << "] running\n";
        StageReport report;
        report.name = name;
        try {
            fs::path dir = stager.begin(name);
            body(dir, report);
            stager.publish(name);
        } catch (const StageFailure&) {
            stager.abandon(name);
            throw;
        } catch (const std::exception& e) {
            stager.abandon(name);
            throw StageFailure(name, e.what());
        }
        report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (options.log) {
            *options.log << "[" << name << "] inputs=" << report.inputs << " outputs=" << report.outputs
                         << " drops=" << report.drops << " (" << report.seconds << " s)\n";
        }
        manifest.stages.push_back(std::move(report));
    };

    // ingest
    run_stage("ingest", [&](const fs::path& dir, StageReport& report) {
        std::vector<ReactTrajectory> kept;
        std::vector<ordered_json> drops;
        ordered_json per_input = ordered_json::object();
        ordered_json drop_counts = ordered_json::object();
        std::map<std::string, std::size_t> code_totals;
        for (const auto& [family, path] : config.inputs) {
            auto records = read_jsonl(path);
            auto r = ingest_records(records, family, config.filter);
            report.inputs += r.inputs;
            per_input[std::string(family_name(family))] = {{"inputs", r.inputs}, {"kept", r.kept.size()}};
            for (auto& t : r.kept) kept.push_back(std::move(t));
            for (auto& d : r.drop_log) drops.push_back(std::move(d));
            for (const auto& [code, n] : r.drop_counts) code_totals[code] += n;
        }
        for (const auto& [code, n] : code_totals) drop_counts[code] = n;
        std::vector<ordered_json> records;
        for (const auto& t : kept) records.push_back(trajectory_to_json(t));
        write_records(dir / "trajectories.jsonl", records);
        write_records(dir / "drops.jsonl", drops);

        auto stats = corpus_stats(kept, counter);
        ordered_json stats_json = ordered_json::object();
        for (const auto& [label, s] : stats.per_source) {
            stats_json[label] = {{"samples", s.samples}, {"tokens", s.tokens}};
            manifest.tokens[label] = s.tokens;
        }
        write_file_atomic(dir / "stats.json", stats_json.dump(2) + "\n");
        report.outputs = kept.size();
        report.drops = drops.size();
        report.detail = {{"per_input", per_input}, {"drop_codes", drop_counts}};
    });

    // align
    run_stage("align", [&](const fs::path& dir, StageReport& report) {
        std::vector<ReactTrajectory> trajectories;
        for (const auto& rec : read_jsonl(out / "ingest" / "trajectories.jsonl")) {
            trajectories.push_back(trajectory_from_json(rec));
        }
        ElicitTemplateSet templates;
        if (config.templates_path) templates = ElicitTemplateSet::load(*config.templates_path);
        if (templates.rotate) templates.seed = derive_seed(config.seed, "align/templates");
        AlignOptions opts;
        opts.strict = config.strict;
        opts.grammar = config.filter.grammar;
        auto r = align_corpus(trajectories, templates, opts);
        auto format_pairs = build_format_instruction_pairs(config.mix.instruction_following_count,
                                                           derive_seed(config.seed, "align/format"));
        write_file_atomic(dir / "chat.jsonl", dump_conversations(r.chat));
        write_file_atomic(dir / "react.jsonl", dump_conversations(r.react));
        write_file_atomic(dir / "format_instruction.jsonl", dump_conversations(format_pairs));
        write_records(dir / "drops.jsonl", r.drop_log);
        report.inputs = trajectories.size();
        report.outputs = r.chat.size();
        report.drops = r.drop_log.size();
        report.detail = {{"chat", r.chat.size()},
                         {"react", r.react.size()},
                         {"format_instruction", format_pairs.size()},
                         {"templates", templates.version}};
    });

    // decompose
    run_stage("decompose", [&](const fs::path& dir, StageReport& report) {
        auto convs = load_conversations(out / "align" / "chat.jsonl");
        for (auto& c : load_conversations(out / "align" / "format_instruction.jsonl")) convs.push_back(std::move(c));
        auto r = decompose_corpus(convs);
        write_decompose_outputs(dir, r);
        write_records(dir / "drops.jsonl", r.drop_log);
        report.inputs = r.inputs;
        report.outputs = r.tagged;
        report.drops = r.drop_log.size();
        report.detail = r.counts_json();
    });

    // negatives
    run_stage("negatives", [&](const fs::path& dir, StageReport& report) {
        std::vector<ReactTrajectory> trajectories;
        for (const auto& rec : read_jsonl(out / "ingest" / "trajectories.jsonl")) {
            trajectories.push_back(trajectory_from_json(rec));
        }
        auto r = synthesize_negatives(trajectories, config.negatives, config.detector, config.seed, options.external);
        std::vector<ChatConversation> convs;
        for (const auto& s : r.run.samples) convs.push_back(negative_to_conversation(s));
        write_file_atomic(dir / "negatives.jsonl", dump_conversations(convs));
        std::vector<ordered_json> drops;
        for (const auto& d : r.run.drops) drops.push_back(drop_entry(d.id, "Rejected", d.reason));
        write_records(dir / "drops.jsonl", drops);
        std::string log;
        for (const auto& w : r.assignment.warnings) log += "warning: " + w + "\n";
        for (const auto& l : r.run.log) log += l + "\n";
        write_file_atomic(dir / "log.txt", log);
        report.inputs = r.assignment.items.size();
        report.outputs = r.run.samples.size();
        report.drops = r.run.drops.size();
        report.detail = {{"quadrant_B", r.count(Quadrant::B_ToolsNormalQuery)},
                         {"quadrant_C", r.count(Quadrant::C_NoToolsToolQuery)},
                         {"generator", std::string(generator_kind_name(config.negatives.generator))},
                         {"template_fallbacks", r.run.fallbacks}};
    });

    // mix
    run_stage("mix", [&](const fs::path& dir, StageReport& report) {
        std::vector<NamedSource> channels;
        for (auto c : {Capability::Reasoning, Capability::Retrieval, Capability::Understanding,
                       Capability::InstructionFollowing}) {
            channels.push_back({capability_key(c), read_jsonl(out / "decompose" / (capability_key(c) + ".jsonl"))});
        }
        channels.push_back({channel::kReact, read_jsonl(out / "align" / "react.jsonl")});
        channels.push_back({channel::kNegatives, read_jsonl(out / "negatives" / "negatives.jsonl")});
        if (config.general_input) {
            std::vector<ordered_json> general;
            for (const auto& c : read_conversations(*config.general_input)) {
                auto g = c;
                g.style = Style::General;
                general.push_back(conversation_to_json(g));
            }
            std::size_t tokens = 0;
            for (const auto& rec : general) tokens += counter.count(record_text(rec));
            manifest.tokens["general"] = tokens;
            channels.push_back({channel::kGeneral, std::move(general)});
        }
        auto r = mix_channels(config.mix, channels);
        write_records(dir / "mixture.jsonl", r.records);
        write_file_atomic(dir / "manifest.json", r.manifest.to_json().dump(2) + "\n");
        std::size_t targeted = 0;
        for (const auto& [name, m] : r.manifest.sources) targeted += m.target;
        report.inputs = targeted;
        report.outputs = r.records.size();
        report.drops = targeted - r.records.size();
        report.detail = r.manifest.to_json();
    });

    stager.finish();
    write_file_atomic(out / "run_manifest.json", manifest.to_json(options.manifest_timings).dump(2) + "\n");
    return manifest;
}

}  // namespace aflan
