// Command-line front end: one subcommand per stage plus `run`.

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "aflan/agenth.hpp"
#include "aflan/loss.hpp"
#include "aflan/pipeline.hpp"

namespace fs = std::filesystem;
using namespace aflan;

namespace {

// Bad arguments or invalid configuration.
struct UsageError : Error {
    using Error::Error;
};

void emit(const std::optional<std::string>& path, const std::string& content) {
    if (path) {
        if (fs::path(*path).has_parent_path()) fs::create_directories(fs::path(*path).parent_path());
        write_file_atomic(*path, content);
    } else {
        std::cout << content;
    }
}

// Detector settings from a key-value file, with or without a "detector." prefix.
DetectorConfig load_detector(const std::optional<std::string>& path) {
    if (!path) return {};
    auto cfg = KeyValueConfig::load(*path);
    std::string prefix = cfg.keys_with_prefix("detector.").empty() ? "" : "detector.";
    auto det = DetectorConfig::from_config(cfg, prefix);
    auto problems = det.validate();
    if (!problems.empty()) throw UsageError(*path + ": " + prefix + problems.front());
    return det;
}

FewShotPolicy few_shot_policy(const std::string& s) {
    if (s == "strip") return FewShotPolicy::Strip;
    if (s == "drop") return FewShotPolicy::Drop;
    throw UsageError("--few-shot: expected strip or drop");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Agent-tuning corpus tools: ingest, align, decompose, mix, negatives, agenth, loss-curves, run"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Parse and filter ReAct trajectories");
    std::string ingest_input, ingest_source = "toolbench", ingest_few_shot = "strip";
    std::optional<std::string> ingest_out, ingest_drop_log, ingest_stats;
    ingest->add_option("--input", ingest_input, "Newline-delimited corpus records")->required()->check(CLI::ExistingFile);
    ingest->add_option("--source", ingest_source, "Source family for records without one")
        ->check(CLI::IsMember({"agentinstruct", "toolbench"}));
    ingest->add_option("--drop-log", ingest_drop_log, "Where to write {id, code, detail} drop entries");
    ingest->add_option("--out", ingest_out, "Output container file (default: stdout)");
    ingest->add_option("--few-shot", ingest_few_shot, "strip or drop system prompts with demonstrations")
        ->check(CLI::IsMember({"strip", "drop"}));
    ingest->add_option("--stats", ingest_stats, "Per-source sample and token counts (JSON)");

    // align
    auto* align = app.add_subcommand("align", "Convert trajectories to chat or ReAct conversations");
    std::string align_input, align_style = "chat";
    std::optional<std::string> align_templates, align_out, align_drop_log;
    bool align_strict = false;
    std::size_t align_format_pairs = 0;
    std::uint64_t align_seed = 0;
    align->add_option("--input", align_input, "Ingested trajectories")->required()->check(CLI::ExistingFile);
    align->add_option("--templates", align_templates, "Elicit template set (JSON)")->check(CLI::ExistingFile);
    align->add_option("--style", align_style, "chat or react")->check(CLI::IsMember({"chat", "react"}));
    align->add_flag("--strict", align_strict, "Reject arguments missing from the tool schema");
    align->add_option("--out", align_out, "Output container file (default: stdout)");
    align->add_option("--drop-log", align_drop_log, "Where to write alignment failures");
    align->add_option("--format-pairs", align_format_pairs, "Append N format-instruction pairs");
    align->add_option("--seed", align_seed, "Seed for format-instruction pairs and template rotation");

    // decompose
    auto* decompose = app.add_subcommand("decompose", "Split chat conversations by capability");
    std::vector<std::string> decompose_inputs;
    std::string decompose_out;
    decompose->add_option("--input", decompose_inputs, "Chat or format-instruction conversations")
        ->required()
        ->check(CLI::ExistingFile);
    decompose->add_option("--out-dir", decompose_out, "Directory for per-capability files")->required();

    // mix
    auto* mix = app.add_subcommand("mix", "Compose a weighted mixture from a key-value spec");
    std::string mix_spec_path, mix_out, mix_manifest;
    mix->add_option("--spec", mix_spec_path, "Mixture spec")->required()->check(CLI::ExistingFile);
    mix->add_option("--out", mix_out, "Mixed corpus")->required();
    mix->add_option("--manifest", mix_manifest, "Mixture manifest (JSON)")->required();

    // negatives
    auto* negatives = app.add_subcommand("negatives", "Synthesize quadrant B and C negative samples");
    std::string neg_input, neg_generator = "template";
    std::size_t neg_queries = 761, neg_k = 2;
    std::uint64_t neg_seed = 0;
    std::optional<std::string> neg_out, neg_config, neg_log;
    negatives->add_option("--input", neg_input, "Ingested trajectories (query and tool source)")
        ->required()
        ->check(CLI::ExistingFile);
    negatives->add_option("--queries", neg_queries, "Number of distinct queries");
    negatives->add_option("--generator", neg_generator, "external or template")
        ->check(CLI::IsMember({"external", "template"}));
    negatives->add_option("--tools-per-sample", neg_k, "Irrelevant tools per quadrant B sample")
        ->check(CLI::PositiveNumber);
    negatives->add_option("--seed", neg_seed, "Root seed");
    negatives->add_option("--config", neg_config, "Key-value file with negatives.external.* and detector.* keys")
        ->check(CLI::ExistingFile);
    negatives->add_option("--out", neg_out, "Output container file (default: stdout)");
    negatives->add_option("--log", neg_log, "Generation log");

    // agenth
    auto* agenth = app.add_subcommand("agenth", "Hallucination benchmark");
    agenth->require_subcommand(1);
    auto* agenth_build = agenth->add_subcommand("build", "Label a function-calling corpus");
    std::string ah_corpus, ah_out;
    std::optional<std::string> ah_build_config, ah_build_log;
    agenth_build->add_option("--corpus", ah_corpus, "Function-calling conversations")->required()->check(CLI::ExistingFile);
    agenth_build->add_option("--out", ah_out, "Benchmark file")->required();
    agenth_build->add_option("--config", ah_build_config, "Detector settings")->check(CLI::ExistingFile);
    agenth_build->add_option("--log", ah_build_log, "Skipped and ambiguous items");
    auto* agenth_score = agenth->add_subcommand("score", "Score predictions");
    std::string ah_bench, ah_preds;
    std::optional<std::string> ah_score_config, ah_report, ah_audit;
    agenth_score->add_option("--benchmark", ah_bench, "Benchmark file")->required()->check(CLI::ExistingFile);
    agenth_score->add_option("--predictions", ah_preds, "Predictions file")->required()->check(CLI::ExistingFile);
    agenth_score->add_option("--config", ah_score_config, "Detector settings")->check(CLI::ExistingFile);
    agenth_score->add_option("--report", ah_report, "Report (JSON; default: stdout)");
    agenth_score->add_option("--audit", ah_audit, "Per-item flags (newline-delimited)");

    // loss-curves
    auto* loss = app.add_subcommand("loss-curves", "Smooth loss logs and rank convergence");
    std::string loss_log;
    std::size_t loss_window = kDefaultLossWindow;
    double loss_threshold = 0.5, loss_gap = 5.0;
    std::optional<std::string> loss_out, loss_summary;
    loss->add_option("--log", loss_log, "Newline-delimited {step, label, loss}")->required()->check(CLI::ExistingFile);
    loss->add_option("--window", loss_window, "Centered moving-average width in steps")->check(CLI::PositiveNumber);
    loss->add_option("--threshold", loss_threshold, "Loss threshold for the convergence ranking");
    loss->add_option("--gap-ratio", loss_gap, "Format/content ratio that raises the gap flag");
    loss->add_option("--out", loss_out, "Curve table (CSV; default: stdout)");
    loss->add_option("--summary", loss_summary, "Ranking and gap report (JSON; default: stderr)");

    // run
    auto* run = app.add_subcommand("run", "Run the whole pipeline from one configuration file");
    std::string run_config;
    bool run_check = false, run_timings = false;
    run->add_option("--config", run_config, "Pipeline configuration")->required()->check(CLI::ExistingFile);
    run->add_flag("--check", run_check, "Validate the configuration and exit");
    run->add_flag("--timings", run_timings, "Record wall-clock seconds per stage in the manifest");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (*ingest) {
            FilterPolicy policy;
            policy.few_shot = few_shot_policy(ingest_few_shot);
            auto records = read_jsonl(ingest_input);
            auto r = ingest_records(records, parse_family(ingest_source), policy);
            std::vector<ordered_json> out;
            for (const auto& t : r.kept) out.push_back(trajectory_to_json(t));
            emit(ingest_out, dump_jsonl(out));
            if (ingest_drop_log) emit(ingest_drop_log, dump_jsonl(r.drop_log));
            if (ingest_stats) {
                auto stats = corpus_stats(r.kept);
                ordered_json j = ordered_json::object();
                for (const auto& [label, s] : stats.per_source) j[label] = {{"samples", s.samples}, {"tokens", s.tokens}};
                emit(ingest_stats, j.dump(2) + "\n");
            }
            std::cerr << "ingest: " << r.inputs << " in, " << r.kept.size() << " kept, " << r.drop_log.size()
                      << " dropped\n";
        } else if (*align) {
            ElicitTemplateSet templates;
            if (align_templates) templates = ElicitTemplateSet::load(*align_templates);
            if (templates.rotate) templates.seed = derive_seed(align_seed, "align/templates");
            std::vector<ReactTrajectory> trajectories;
            for (const auto& rec : read_jsonl(align_input)) trajectories.push_back(trajectory_from_json(rec));
            AlignOptions opts;
            opts.strict = align_strict;
            auto r = align_corpus(trajectories, templates, opts);
            auto convs = align_style == "chat" ? r.chat : r.react;
            if (align_format_pairs > 0) {
                for (auto& c : build_format_instruction_pairs(align_format_pairs, derive_seed(align_seed, "align/format"))) {
                    convs.push_back(std::move(c));
                }
            }
            emit(align_out, dump_conversations(convs));
            if (align_drop_log) emit(align_drop_log, dump_jsonl(r.drop_log));
            std::cerr << "align: " << trajectories.size() << " in, " << convs.size() << " out, "
                      << r.drop_log.size() << " dropped\n";
        } else if (*decompose) {
            std::vector<ChatConversation> convs;
            for (const auto& path : decompose_inputs) {
                for (auto& c : read_conversations(path)) convs.push_back(std::move(c));
            }
            auto r = decompose_corpus(convs);
            write_decompose_outputs(decompose_out, r);
            if (!r.drop_log.empty()) emit(fs::path(decompose_out) / "drops.jsonl", dump_jsonl(r.drop_log));
            std::cerr << "decompose: " << r.counts_json().dump() << "\n";
        } else if (*mix) {
            auto cfg = KeyValueConfig::load(mix_spec_path);
            auto spec = MixSpec::from_config(cfg);
            auto problems = spec.validate();
            for (const auto& [name, path] : spec.source_paths) {
                (void)path;
                if (name != channel::kReasoning && name != channel::kRetrieval && name != channel::kUnderstanding &&
                    name != channel::kInstructionFollowing && name != channel::kReact &&
                    name != channel::kNegatives && name != channel::kGeneral) {
                    problems.push_back("source." + name + ": unknown channel");
                }
            }
            if (!problems.empty()) {
                for (const auto& p : problems) std::cerr << mix_spec_path << ": " << p << "\n";
                return kExitValidation;
            }
            auto r = mix_from_spec(spec, fs::path(mix_spec_path).parent_path());
            emit(mix_out, dump_jsonl(r.records));
            emit(mix_manifest, r.manifest.to_json().dump(2) + "\n");
            std::cerr << "mix: " << r.records.size() << " records\n";
        } else if (*negatives) {
            NegativeSettings settings;
            settings.queries = neg_queries;
            settings.tools_per_sample = neg_k;
            settings.generator = parse_generator_kind(neg_generator);
            DetectorConfig detector;
            if (neg_config) {
                auto cfg = KeyValueConfig::load(*neg_config);
                settings.external = ExternalGeneratorConfig::from_config(cfg, "negatives.external.");
                detector = DetectorConfig::from_config(cfg, "detector.");
            }
            if (settings.generator == GeneratorKind::External) {
                auto problems = settings.external.validate();
                if (!problems.empty()) throw UsageError("negatives.external." + problems.front());
            }
            std::vector<ReactTrajectory> trajectories;
            for (const auto& rec : read_jsonl(neg_input)) trajectories.push_back(trajectory_from_json(rec));
            auto r = synthesize_negatives(trajectories, settings, detector, neg_seed);
            std::vector<ChatConversation> convs;
            for (const auto& s : r.run.samples) convs.push_back(negative_to_conversation(s));
            emit(neg_out, dump_conversations(convs));
            std::string log;
            for (const auto& w : r.assignment.warnings) log += "warning: " + w + "\n";
            for (const auto& l : r.run.log) log += l + "\n";
            for (const auto& d : r.run.drops) log += d.id + ": dropped: " + d.reason + "\n";
            if (neg_log) emit(neg_log, log);
            else std::cerr << log;
            std::cerr << "negatives: " << r.run.samples.size() << " samples (B " << r.count(Quadrant::B_ToolsNormalQuery)
                      << ", C " << r.count(Quadrant::C_NoToolsToolQuery) << "), " << r.run.drops.size()
                      << " dropped, " << r.run.fallbacks << " template fallbacks\n";
        } else if (*agenth_build) {
            auto det = load_detector(ah_build_config);
            auto corpus = read_jsonl(ah_corpus);
            auto b = build_benchmark(corpus, det);
            std::vector<ordered_json> items;
            for (const auto& item : b.items) items.push_back(benchmark_item_to_json(item));
            emit(ah_out, dump_jsonl(items));
            std::string log;
            for (const auto& l : b.log) log += l + "\n";
            if (ah_build_log) emit(ah_build_log, log);
            else std::cerr << log;
            std::cerr << "agenth build: " << b.items.size() << " items (" << b.raw_count << " RawResponse, "
                      << b.call_count << " FunctionCall)\n";
        } else if (*agenth_score) {
            auto det = load_detector(ah_score_config);
            std::vector<BenchmarkItem> bench;
            for (const auto& rec : read_jsonl(ah_bench)) bench.push_back(benchmark_item_from_json(rec));
            auto preds = predictions_from_json(read_jsonl(ah_preds));
            HallucinationReport report;
            try {
                report = score(preds, bench, det);
            } catch (const Error& e) {
                throw UsageError(e.what());
            }
            emit(ah_report, report.summary_json().dump(2) + "\n");
            if (ah_audit) emit(ah_audit, report.audit_jsonl());
        } else if (*loss) {
            auto log = parse_loss_log(read_file(loss_log), loss_log);
            auto curves = aggregate_curves(log, loss_window);
            auto ranking = convergence_summary(curves, loss_threshold);
            auto gap = format_content_gap(curves, loss_gap);
            emit(loss_out, curves_to_csv(curves));
            auto summary = convergence_to_json(ranking, loss_threshold, gap, loss_window).dump(2) + "\n";
            if (loss_summary) emit(loss_summary, summary);
            else std::cerr << summary;
        } else if (*run) {
            auto cfg = KeyValueConfig::load(run_config);
            auto base = fs::path(run_config).parent_path();
            auto problems = validate_config(cfg, base);
            if (!problems.empty()) {
                for (const auto& p : problems) std::cerr << run_config << ": " << p << "\n";
                return kExitValidation;
            }
            if (run_check) {
                std::cerr << run_config << ": ok\n";
                return kExitOk;
            }
            auto config = PipelineConfig::from_config(cfg, base);
            RunOptions opts;
            opts.manifest_timings = run_timings;
            opts.log = &std::cerr;
            run_pipeline(config, opts);
            std::cerr << "run: outputs in " << config.output_dir.lexically_normal().string() << "\n";
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const StageFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitStageFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitStageFailure;
    }
    return kExitOk;
}
