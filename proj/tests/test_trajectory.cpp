#include "doctest.h"

#include <cmath>
#include <set>

#include "aflan/pipeline.hpp"
#include "aflan/trajectory.hpp"
#include "support.hpp"

using namespace aflan;
using testsupport::fixture;

namespace {

std::map<std::string, std::string> decisions(const std::string& file, FewShotPolicy few_shot) {
    auto records = read_jsonl(fixture(file));
    FilterPolicy policy;
    policy.few_shot = few_shot;
    auto result = ingest_records(records, std::nullopt, policy);
    std::map<std::string, std::string> out;
    for (const auto& t : result.kept) out[t.raw_id] = "kept";
    for (const auto& d : result.drop_log) out[d["id"].get<std::string>()] = d["code"].get<std::string>();
    return out;
}

// Independent word counter: alnum runs and single punctuation bytes.
std::size_t oracle_words(const std::string& s) {
    std::size_t n = 0;
    std::size_t i = 0;
    while (i < s.size()) {
        unsigned char c = s[i];
        if (std::isalnum(c) || c >= 0x80) {
            ++n;
            while (i < s.size() && (std::isalnum(static_cast<unsigned char>(s[i])) || static_cast<unsigned char>(s[i]) >= 0x80)) ++i;
        } else {
            if (std::ispunct(c)) ++n;
            ++i;
        }
    }
    return n;
}

const char* kFormat =
    "Answer in this format:\nThought: your reasoning\nAction: the tool to use\nAction Input: the input\n";
const char* kDemo =
    "Example:\nThought: I list files\nAction: bash\nAction Input: ls\nObservation: a b\n";

}  // namespace

TEST_CASE("parsing the same bytes twice gives equal trajectories") {
    for (const auto& r : read_jsonl(fixture("roundtrip_200.jsonl"))) {
        auto a = parse_react(r);
        auto b = parse_react(ordered_json::parse(r.dump()));
        REQUIRE(a.index() == b.index());
        if (auto* t = std::get_if<ReactTrajectory>(&a)) CHECK(*t == std::get<ReactTrajectory>(b));
    }
}

TEST_CASE("twenty-record filter fixture keeps 15 with per-rule counts matching labels") {
    auto labels = testsupport::load_labels("filter_20.labels.jsonl");
    auto got = decisions("filter_20.jsonl", FewShotPolicy::Drop);
    CHECK(got == labels);
    std::map<std::string, int> expected_counts, got_counts;
    for (auto& [id, v] : labels) ++expected_counts[v];
    for (auto& [id, v] : got) ++got_counts[v];
    CHECK(got_counts["kept"] == 15);
    CHECK(got_counts == expected_counts);
}

TEST_CASE("records with missing pieces are dropped as malformed") {
    CHECK(decisions("ingest_missing_input.jsonl", FewShotPolicy::Strip) ==
          testsupport::load_labels("ingest_missing_input.labels.jsonl"));
}

TEST_CASE("every input is accounted for exactly once") {
    auto records = read_jsonl(fixture("filter_fidelity_100.jsonl"));
    FilterPolicy policy;
    policy.few_shot = FewShotPolicy::Drop;
    auto result = ingest_records(records, std::nullopt, policy);
    CHECK(result.kept.size() + result.drop_log.size() == records.size());
    std::set<std::string> ids;
    for (const auto& t : result.kept) CHECK(ids.insert(t.raw_id).second);
    for (const auto& d : result.drop_log) CHECK(ids.insert(d["id"].get<std::string>()).second);
    CHECK(ids.size() == records.size());
    for (const auto& t : result.kept) {
        if (t.source.family == SourceFamily::ToolBench) CHECK(t.final_answer.has_value());
    }
}

TEST_CASE("ToolBench trajectory without a final answer is dropped") {
    auto t = testsupport::make_trajectory("tb-1", 2, false);
    auto r = apply_filters(t);
    REQUIRE(std::holds_alternative<DropReason>(r));
    CHECK(std::get<DropReason>(r).code == DropCode::NoFinalAnswer);
}

TEST_CASE("AgentInstruct trajectory without demonstrations passes untouched") {
    auto t = testsupport::make_trajectory("ai-1", 1);
    t.source = Source{SourceFamily::AgentInstruct, "os"};
    t.system_prompt = kFormat;
    auto r = apply_filters(t);
    REQUIRE(std::holds_alternative<ReactTrajectory>(r));
    CHECK(std::get<ReactTrajectory>(r) == t);
}

TEST_CASE("few-shot demonstrations are stripped or dropped per policy") {
    std::string prompt = std::string(kFormat) + kDemo;
    CHECK(count_react_cycles(prompt) == 2);
    CHECK(has_few_shot_block(prompt));
    CHECK_FALSE(has_few_shot_block(kFormat));
    auto stripped = strip_few_shot_block(prompt);
    CHECK_FALSE(has_few_shot_block(stripped));
    CHECK(stripped.find("Thought: your reasoning") != std::string::npos);

    auto t = testsupport::make_trajectory("ai-2", 1);
    t.source = Source{SourceFamily::AgentInstruct, "os"};
    t.system_prompt = prompt;
    FilterPolicy drop;
    drop.few_shot = FewShotPolicy::Drop;
    auto dropped = apply_filters(t, drop);
    REQUIRE(std::holds_alternative<DropReason>(dropped));
    CHECK(std::get<DropReason>(dropped).code == DropCode::FewShotExample);
    auto kept = apply_filters(t, FilterPolicy{});
    REQUIRE(std::holds_alternative<ReactTrajectory>(kept));
    CHECK_FALSE(has_few_shot_block(std::get<ReactTrajectory>(kept).system_prompt));
}

TEST_CASE("DFSDT restart notices are dropped at parse time") {
    ordered_json rec = {
        {"id", "tb-2"},
        {"source", "toolbench"},
        {"system", "You are AutoGPT."},
        {"tools", ordered_json::array()},
        {"conversations",
         {{{"role", "user"}, {"content", "Find me a hotel."}},
          {{"role", "assistant"},
           {"content", std::string(kDfsdtRestartPrefix) + ". Previous actions:\nFinal Answer: none"}}}}};
    auto r = parse_react(rec);
    REQUIRE(std::holds_alternative<DropReason>(r));
    CHECK(std::get<DropReason>(r).code == DropCode::DfsdtRestart);
}

TEST_CASE("action input accepts objects and bare strings") {
    CHECK(*parse_action_input("{\"a\": 1}") == json{{"a", 1}});
    CHECK(*parse_action_input("ls -la") == json{{"raw", "ls -la"}});
    CHECK(*parse_action_input("") == json::object());
    CHECK_FALSE(parse_action_input("[1, 2]").has_value());
    CHECK_FALSE(parse_action_input("{\"a\": ").has_value());
}

TEST_CASE("segmentation joins back to the same segments") {
    std::string text = "preamble\nThought: a\nb\nAction: lookup\nAction Input: {\"x\": 1}\nObservation: ok\nFinal Answer: done";
    auto seg = segment_react(text);
    CHECK(seg.leading == "preamble");
    REQUIRE(seg.segments.size() == 5);
    CHECK(seg.segments[0].body == "a\nb");
    CHECK(seg.segments[2].kind == SegmentKind::ActionInput);
    auto again = segment_react(join_segments(seg));
    CHECK(again.leading == seg.leading);
    REQUIRE(again.segments.size() == seg.segments.size());
    for (std::size_t i = 0; i < seg.segments.size(); ++i) {
        CHECK(again.segments[i].kind == seg.segments[i].kind);
        CHECK(again.segments[i].body == seg.segments[i].body);
    }
}

TEST_CASE("markers count only at line starts and aliases are honored") {
    auto seg = segment_react("Thought: mention Action: inline\nActionInput: {}");
    REQUIRE(seg.segments.size() == 2);
    CHECK(seg.segments[0].body == "mention Action: inline");
    CHECK(seg.segments[1].marker == "ActionInput:");
}

TEST_CASE("container serialization round-trips kept trajectories") {
    for (const auto& r : read_jsonl(fixture("roundtrip_200.jsonl"))) {
        auto parsed = parse_react(r);
        if (auto* t = std::get_if<ReactTrajectory>(&parsed)) {
            auto back = trajectory_from_json(ordered_json::parse(trajectory_to_json(*t).dump()));
            CHECK(back == *t);
        }
    }
}

TEST_CASE("corpus statistics group by source") {
    CHECK(corpus_stats(std::vector<ReactTrajectory>{}).total_samples() == 0);
    CHECK(corpus_stats(std::vector<ReactTrajectory>{}).total_tokens() == 0);

    std::vector<ReactTrajectory> kept;
    for (const auto& r : read_jsonl(fixture("stats_12.jsonl"))) kept.push_back(std::get<ReactTrajectory>(parse_react(r)));
    auto stats = corpus_stats(kept);
    CHECK(stats.per_source.at("toolbench").samples == 5);
    CHECK(stats.per_source.at("agentinstruct/os").samples == 4);
    CHECK(stats.per_source.at("agentinstruct/webshop").samples == 3);
    CHECK(stats.total_samples() == 12);

    std::size_t tokens = 0;
    for (const auto& t : kept) {
        tokens += (oracle_words(trajectory_text(t)) * 13 + 9) / 10;
    }
    CHECK(stats.total_tokens() == tokens);
}

TEST_CASE("token estimate is ceil(words * 1.3)") {
    ApproxTokenCounter c;
    CHECK(c.count("") == 0);
    CHECK(ApproxTokenCounter::word_count("Hello, world") == 3);
    CHECK(c.count("Hello, world") == 4);  // 3.9 rounds up
    CHECK(c.count("a b c d e f g h i j") == 13);
    for (std::string s : {"x", "two words", "punct!?", "caf\xc3\xa9 au lait"}) {
        CHECK(c.count(s) == static_cast<std::size_t>(std::ceil(oracle_words(s) * 1.3 - 1e-9)));
    }
}

TEST_CASE("source labels and drop codes round-trip through their names") {
    for (auto label : {"toolbench", "agentinstruct", "agentinstruct/os", "general"}) {
        CHECK(Source::from_label(label).label() == label);
    }
    for (auto c : {DropCode::MalformedFormat, DropCode::FewShotExample, DropCode::NoFinalAnswer,
                   DropCode::DfsdtRestart, DropCode::UnparseableArgs}) {
        CHECK(parse_drop_code(drop_code_name(c)) == c);
    }
}
