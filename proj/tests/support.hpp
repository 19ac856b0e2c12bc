#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "aflan/trajectory.hpp"
#include "aflan/util.hpp"

namespace testsupport {

inline std::filesystem::path fixture(const std::string& name) {
    return std::filesystem::path(AFLAN_SOURCE_DIR) / "tests" / "fixtures" / name;
}

// {id, expected} label files.
inline std::map<std::string, std::string> load_labels(const std::string& name) {
    std::map<std::string, std::string> out;
    for (const auto& r : aflan::read_jsonl(fixture(name))) {
        out[r["id"].get<std::string>()] = r["expected"].get<std::string>();
    }
    return out;
}

// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("aflan-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline aflan::ToolSchema make_tool(const std::string& name, std::initializer_list<std::string> params) {
    aflan::ToolSchema t;
    t.name = name;
    t.description = "tool " + name;
    for (const auto& p : params) t.parameters.push_back({p, "string", "param " + p, true});
    return t;
}

// A small trajectory with `steps` calls of one two-argument tool.
inline aflan::ReactTrajectory make_trajectory(const std::string& id, std::size_t steps, bool final_answer = true) {
    aflan::ReactTrajectory t;
    t.source = aflan::Source{aflan::SourceFamily::ToolBench, ""};
    t.raw_id = id;
    t.system_prompt = "You can use tools.";
    t.tools = {make_tool("lookup", {"city", "unit"})};
    t.query = "What is the weather in city " + id + "?";
    for (std::size_t i = 0; i < steps; ++i) {
        aflan::ReactStep s;
        s.thought = "I should look up step " + std::to_string(i) + ".";
        s.action = "lookup";
        s.action_input = {{"city", "Paris"}, {"unit", "celsius"}};
        s.observation = "{\"temp\": " + std::to_string(10 + i) + "}";
        t.steps.push_back(s);
    }
    if (final_answer) t.final_answer = "It is mild.";
    return t;
}

}  // namespace testsupport
