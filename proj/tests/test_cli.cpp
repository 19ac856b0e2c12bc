#include "doctest.h"

#include <cstdlib>
#include <sys/wait.h>

#include "aflan/util.hpp"
#include "support.hpp"

using namespace aflan;
namespace fs = std::filesystem;

namespace {

int cli(const std::string& args) {
    std::string cmd = std::string("\"") + AFLAN_CLI + "\" " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_CASE("exit codes separate success, validation and stage failure") {
    auto dir = testsupport::scratch_dir("cli-codes");
    auto configs = fs::path(AFLAN_SOURCE_DIR) / "configs";
    CHECK(cli("--help") == 0);
    CHECK(cli("no-such-command") == 2);
    CHECK(cli("run --config " + q(configs / "default.conf") + " --check") == 0);

    auto cfg = KeyValueConfig::load(configs / "default.conf");
    for (auto key : {"input.toolbench", "input.agentinstruct", "input.general", "templates"}) {
        cfg.set(key, (configs / *cfg.get(key)).lexically_normal().string());
    }
    cfg.set("output_dir", (dir / "out").string());
    cfg.set("mix.react_fraction", "1.5");
    write_file_atomic(dir / "bad.conf", cfg.serialize());
    CHECK(cli("run --config " + q(dir / "bad.conf")) == 2);
    CHECK_FALSE(fs::exists(dir / "out"));

    cfg.set("mix.react_fraction", "0.1");
    cfg.set("negatives.queries", "100000");
    write_file_atomic(dir / "fail.conf", cfg.serialize());
    CHECK(cli("run --config " + q(dir / "fail.conf")) == 3);
    CHECK(fs::exists(dir / "out" / "ingest" / "trajectories.jsonl"));
}

TEST_CASE("subcommands chain from raw records to a scored benchmark") {
    auto dir = testsupport::scratch_dir("cli-chain");
    auto fx = [](const std::string& n) { return q(testsupport::fixture(n)); };

    REQUIRE(cli("ingest --input " + fx("filter_20.jsonl") + " --few-shot drop --drop-log " + q(dir / "drops.jsonl") +
                " --out " + q(dir / "traj.jsonl") + " --stats " + q(dir / "stats.json")) == 0);
    CHECK(read_jsonl(dir / "traj.jsonl").size() == 15);
    CHECK(read_jsonl(dir / "drops.jsonl").size() == 5);

    REQUIRE(cli("align --input " + q(dir / "traj.jsonl") + " --style chat --format-pairs 6 --seed 3 --out " +
                q(dir / "chat.jsonl")) == 0);
    CHECK(read_jsonl(dir / "chat.jsonl").size() == 21);
    REQUIRE(cli("align --input " + q(dir / "traj.jsonl") + " --style react --out " + q(dir / "react.jsonl")) == 0);

    REQUIRE(cli("decompose --input " + q(dir / "chat.jsonl") + " --out-dir " + q(dir / "caps")) == 0);
    for (auto f : {"reasoning.jsonl", "retrieval.jsonl", "understanding.jsonl", "instruction_following.jsonl",
                   "counts.json"}) {
        CHECK(fs::exists(dir / "caps" / f));
    }

    REQUIRE(cli("negatives --input " + q(dir / "traj.jsonl") + " --queries 8 --generator template --seed 4 --out " +
                q(dir / "neg.jsonl")) == 0);
    auto neg = read_jsonl(dir / "neg.jsonl");
    CHECK(neg.size() == 8);
    CHECK(cli("negatives --input " + q(dir / "traj.jsonl") + " --queries 9999 --out " + q(dir / "x.jsonl")) == 3);

    std::string spec = "seed = 5\ninstruction_following_count = 6\n"
                       "source.reasoning = caps/reasoning.jsonl\nsource.retrieval = caps/retrieval.jsonl\n"
                       "source.understanding = caps/understanding.jsonl\n"
                       "source.instruction_following = caps/instruction_following.jsonl\n"
                       "source.react = react.jsonl\nsource.general = " +
                       testsupport::fixture("pipeline/general.jsonl").string() + "\nnegative_source = neg.jsonl\n";
    write_file_atomic(dir / "mix.conf", spec);
    REQUIRE(cli("mix --spec " + q(dir / "mix.conf") + " --out " + q(dir / "mix.jsonl") + " --manifest " +
                q(dir / "manifest.json")) == 0);
    auto manifest = json::parse(read_file(dir / "manifest.json"));
    CHECK(manifest["output_size"] == read_jsonl(dir / "mix.jsonl").size());
    CHECK(manifest["sources"]["negatives"]["emitted"] == 8);

    REQUIRE(cli("agenth build --corpus " + fx("agenth_50.jsonl") + " --out " + q(dir / "bench.jsonl")) == 0);
    auto bench = read_jsonl(dir / "bench.jsonl");
    CHECK(bench.size() == 50);
    std::vector<ordered_json> preds;
    for (const auto& b : bench) preds.push_back({{"id", b["id"]}, {"response", "A plain reply."}});
    write_file_atomic(dir / "preds.jsonl", dump_jsonl(preds));
    REQUIRE(cli("agenth score --benchmark " + q(dir / "bench.jsonl") + " --predictions " + q(dir / "preds.jsonl") +
                " --report " + q(dir / "report.json") + " --audit " + q(dir / "audit.jsonl")) == 0);
    auto report = json::parse(read_file(dir / "report.json"));
    CHECK(report["H_Score"].get<double>() == 100.0);
    CHECK(report["n_raw"] == 25);
    preds.pop_back();
    write_file_atomic(dir / "preds.jsonl", dump_jsonl(preds));
    CHECK(cli("agenth score --benchmark " + q(dir / "bench.jsonl") + " --predictions " + q(dir / "preds.jsonl")) == 2);

    std::string log;
    for (int s = 0; s < 100; ++s) {
        log += "{\"step\": " + std::to_string(s) + ", \"label\": \"format\", \"loss\": 0.04}\n";
        log += "{\"step\": " + std::to_string(s) + ", \"label\": \"content\", \"loss\": 0.54}\n";
    }
    write_file_atomic(dir / "loss.jsonl", log);
    REQUIRE(cli("loss-curves --log " + q(dir / "loss.jsonl") + " --window 10 --threshold 0.1 --out " +
                q(dir / "curves.csv") + " --summary " + q(dir / "summary.json")) == 0);
    CHECK(read_file(dir / "curves.csv").rfind("# smoothing: centered moving average, window 10 steps", 0) == 0);
    auto summary = json::parse(read_file(dir / "summary.json"));
    CHECK(summary["format_content_gap"]["flagged"] == true);
    write_file_atomic(dir / "bad.jsonl", "{\"step\": 0, \"label\": \"format\", \"loss\": -1}\n");
    CHECK(cli("loss-curves --log " + q(dir / "bad.jsonl")) != 0);
}
