#ifdef AFLAN_WITH_OPENSSL
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include "httplib.h"

#include "aflan/negatives.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <set>
#include <thread>

namespace aflan {

namespace {

const std::set<std::string>& stopwords() {
    static const std::set<std::string> words{
        "a", "about", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be", "been", "but", "by",
        "can", "could", "do", "does", "each", "for", "from", "get", "give", "has", "have", "help", "hello", "hi",
        "how", "i", "if", "im", "in", "into", "is", "it", "its", "just", "know", "let", "like", "list", "me",
        "more", "my", "need", "of", "on", "or", "our", "please", "provide", "show", "so", "some", "tell", "than",
        "that", "the", "their", "them", "then", "there", "these", "they", "this", "those", "to", "up", "us",
        "want", "was", "we", "were", "what", "when", "where", "which", "who", "will", "with", "would", "you",
        "your", "find", "fetch", "great", "thanks", "thank", "also", "should", "it's", "i'm", "want", "planning",
        "help", "assist", "information", "details", "include", "well", "may", "might", "must", "shall"};
    return words;
}

constexpr std::string_view kSchemas[] = {
    "As an AI language model, I don't have real-time data, so I can't look up {topic} for you. However, you "
    "can usually find this on a website or service that specializes in it, where the latest figures are kept "
    "up to date.",
    "I'm sorry, but as an AI language model, I don't have real-time access to {topic}. I recommend checking "
    "an official website or contacting the relevant provider directly for the most current details.",
    "I'm sorry, I can't retrieve {topic} because I don't have access to real-time information or external "
    "services. A search engine or the provider's own site should have what you are looking for.",
};

std::string sample_id(const NegativeOptions& options, std::size_t index) {
    return options.id_prefix + std::to_string(index);
}

NegativeSample make_sample(const QuadrantAssignment& item, std::size_t index, const NegativeOptions& options,
                           std::string response, GeneratorKind kind) {
    NegativeSample s;
    s.id = sample_id(options, index);
    s.quadrant = item.quadrant;
    s.system_tools = item.tools;
    s.query = item.query.query;
    s.response = std::move(response);
    s.generator = kind;
    s.raw_id = item.query.raw_id;
    return s;
}

}  // namespace

std::vector<PoolQuery> extract_query_pool(std::span<const ReactTrajectory> corpus, std::size_t n, std::uint64_t seed) {
    if (n == 0) return {};
    std::vector<PoolQuery> distinct;
    std::set<std::string> seen;
    for (const auto& t : corpus) {
        std::string key = normalize_ws(t.query);
        if (key.empty() || !seen.insert(key).second) continue;
        PoolQuery q;
        q.query = t.query;
        q.raw_id = t.raw_id;
        std::set<std::string> names;
        for (const auto& tool : t.tools) names.insert(tool.name);
        for (const auto& step : t.steps) {
            if (!step.action.empty()) names.insert(step.action);
        }
        q.source_tools.assign(names.begin(), names.end());
        distinct.push_back(std::move(q));
    }
    if (distinct.size() < n) {
        throw Error("query pool: requested " + std::to_string(n) + " distinct queries but the corpus has " +
                    std::to_string(distinct.size()));
    }
    Rng rng(seed);
    auto perm = rng.permutation(distinct.size());
    std::vector<PoolQuery> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(distinct[perm[i]]);
    return out;
}

std::vector<ToolSchema> collect_tool_pool(std::span<const ReactTrajectory> corpus) {
    std::map<std::string, ToolSchema> by_name;
    for (const auto& t : corpus) {
        for (const auto& tool : t.tools) by_name.emplace(tool.name, tool);
    }
    std::vector<ToolSchema> out;
    for (auto& [name, tool] : by_name) out.push_back(tool);
    return out;
}

AssignResult assign_quadrants(const std::vector<PoolQuery>& queries, const std::vector<ToolSchema>& tool_pool,
                              std::uint64_t seed, std::size_t k) {
    AssignResult result;
    result.items.resize(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) result.items[i].query = queries[i];
    if (queries.empty()) return result;
    if (tool_pool.empty() || k == 0) {
        result.warnings.push_back("tool pool is empty or k = 0; all " + std::to_string(queries.size()) +
                                  " queries assigned quadrant C");
        return result;
    }

    // Deduplicate the pool by name, keeping the first declaration.
    std::vector<const ToolSchema*> pool;
    std::set<std::string> names;
    for (const auto& t : tool_pool) {
        if (names.insert(t.name).second) pool.push_back(&t);
    }

    Rng rng(seed);
    auto perm = rng.permutation(queries.size());
    std::size_t n_b = (queries.size() + 1) / 2;
    std::vector<bool> is_b(queries.size(), false);
    for (std::size_t i = 0; i < n_b; ++i) is_b[perm[i]] = true;

    for (std::size_t i = 0; i < queries.size(); ++i) {
        if (!is_b[i]) continue;
        auto& item = result.items[i];
        std::set<std::string> used(queries[i].source_tools.begin(), queries[i].source_tools.end());
        std::vector<const ToolSchema*> candidates;
        for (const auto* t : pool) {
            if (!used.count(t->name)) candidates.push_back(t);
        }
        if (candidates.empty()) {
            result.warnings.push_back("query '" + queries[i].raw_id +
                                      "': no irrelevant tool available; assigned quadrant C");
            continue;
        }
        if (candidates.size() < k) {
            result.warnings.push_back("query '" + queries[i].raw_id + "': only " +
                                      std::to_string(candidates.size()) + " irrelevant tool(s) available");
        }
        // Partial Fisher-Yates: the first min(k, |candidates|) picks.
        std::size_t take = std::min(k, candidates.size());
        for (std::size_t j = 0; j < take; ++j) {
            std::size_t r = j + static_cast<std::size_t>(rng.below(candidates.size() - j));
            std::swap(candidates[j], candidates[r]);
            item.tools.push_back(*candidates[j]);
        }
        item.quadrant = Quadrant::B_ToolsNormalQuery;
    }
    return result;
}

std::string_view generator_kind_name(GeneratorKind k) { return k == GeneratorKind::External ? "external" : "template"; }

GeneratorKind parse_generator_kind(std::string_view s) {
    if (s == "external") return GeneratorKind::External;
    if (s == "template") return GeneratorKind::Template;
    throw Error("unknown generator '" + std::string(s) + "' (expected external or template)");
}

// ---------------------------------------------------------------------------
// External generator
// ---------------------------------------------------------------------------

std::vector<std::string> ExternalGeneratorConfig::validate() const {
    std::vector<std::string> v;
    if (!starts_with(endpoint, "http://") && !starts_with(endpoint, "https://")) {
        v.push_back("endpoint: must start with http:// or https://");
    }
    if (model.empty()) v.push_back("model: must not be empty");
    if (!(timeout_seconds > 0.0) || !std::isfinite(timeout_seconds)) v.push_back("timeout_seconds: must be positive");
    if (max_in_flight == 0) v.push_back("max_in_flight: must be at least 1");
    if (api_key_env.empty()) v.push_back("api_key_env: must name an environment variable");
    return v;
}

ExternalGeneratorConfig ExternalGeneratorConfig::from_config(const KeyValueConfig& cfg, const std::string& prefix) {
    ExternalGeneratorConfig c;
    c.endpoint = cfg.get_or(prefix + "endpoint", c.endpoint);
    c.model = cfg.get_or(prefix + "model", c.model);
    c.api_key_env = cfg.get_or(prefix + "api_key_env", c.api_key_env);
    if (auto v = cfg.get(prefix + "timeout_seconds")) c.timeout_seconds = parse_number(prefix + "timeout_seconds", *v);
    if (auto v = cfg.get(prefix + "retries")) {
        auto r = parse_integer(prefix + "retries", *v);
        if (r < 0) throw Error(prefix + "retries: must not be negative");
        c.retries = static_cast<std::size_t>(r);
    }
    if (auto v = cfg.get(prefix + "max_in_flight")) {
        auto r = parse_integer(prefix + "max_in_flight", *v);
        if (r < 0) throw Error(prefix + "max_in_flight: must not be negative");
        c.max_in_flight = static_cast<std::size_t>(r);
    }
    return c;
}

void ExternalGeneratorConfig::to_config(KeyValueConfig& cfg, const std::string& prefix) const {
    cfg.set(prefix + "endpoint", endpoint);
    cfg.set(prefix + "model", model);
    cfg.set(prefix + "api_key_env", api_key_env);
    cfg.set(prefix + "timeout_seconds", json(timeout_seconds).dump());
    cfg.set(prefix + "retries", std::to_string(retries));
    cfg.set(prefix + "max_in_flight", std::to_string(max_in_flight));
}

HttpTextGenerator::HttpTextGenerator(ExternalGeneratorConfig config) : config_(std::move(config)) {
    auto problems = config_.validate();
    if (!problems.empty()) throw Error("external generator: " + problems.front());
    auto scheme_end = config_.endpoint.find("://") + 3;
    auto slash = config_.endpoint.find('/', scheme_end);
    base_ = config_.endpoint.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : config_.endpoint.substr(slash);
#ifndef AFLAN_WITH_OPENSSL
    if (starts_with(base_, "https://")) throw Error("external generator: built without TLS support; use http://");
#endif
}

std::string HttpTextGenerator::complete(const std::string& prompt) {
    httplib::Client client(base_);
    auto secs = static_cast<time_t>(config_.timeout_seconds);
    auto usecs = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);

    httplib::Headers headers;
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    json body{{"model", config_.model}, {"prompt", prompt}};
    auto res = client.Post(path_, headers, body.dump(), "application/json");
    if (!res) throw Error("request to " + config_.endpoint + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200) {
        throw Error("request to " + config_.endpoint + " returned HTTP " + std::to_string(res->status));
    }
    json reply;
    try {
        reply = json::parse(res->body);
    } catch (const json::parse_error& e) {
        throw Error("generator reply is not JSON: " + std::string(e.what()));
    }
    if (!reply.is_object() || !reply.contains("completion") || !reply["completion"].is_string()) {
        throw Error("generator reply lacks a string 'completion' field");
    }
    return reply["completion"].get<std::string>();
}

// ---------------------------------------------------------------------------
// Template responder
// ---------------------------------------------------------------------------

std::string TemplateResponder::topic_of(const std::string& query) {
    std::vector<std::string> words;
    std::string cur;
    auto flush = [&] {
        if (cur.size() >= 3 && !stopwords().count(cur) &&
            std::find(words.begin(), words.end(), cur) == words.end() &&
            !std::all_of(cur.begin(), cur.end(), [](unsigned char c) { return std::isdigit(c); })) {
            words.push_back(cur);
        }
        cur.clear();
    };
    for (unsigned char c : query) {
        if (std::isalnum(c)) cur.push_back(static_cast<char>(std::tolower(c)));
        else if (c == '\'') continue;
        else flush();
        if (words.size() == 4) break;
    }
    flush();
    if (words.size() > 4) words.resize(4);
    if (words.empty()) return "that information";
    std::string topic = "information about";
    for (const auto& w : words) topic += " " + w;
    return topic;
}

std::size_t TemplateResponder::schema_count() { return std::size(kSchemas); }

std::string TemplateResponder::respond(const std::string& query) const {
    auto pick = splitmix64(fnv1a64(normalize_ws(query)) ^ seed_) % schema_count();
    return replace_all(std::string(kSchemas[pick]), "{topic}", topic_of(query));
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

std::string negative_prompt(const QuadrantAssignment& item) { return item.query.query; }

std::optional<std::string> reject_reason(const std::string& response, const DetectorConfig& detector) {
    if (trim(response).empty()) return "empty response";
    auto flags = detect_hallucination(response, TruthKind::RawResponse, detector);
    if (flags.react) return "response contains a ReAct keyword";
    if (flags.general) return "response contains a tool-use phrase";
    if (contains_call_object(response)) return "response contains a call object";
    return std::nullopt;
}

GenerateResult generate_response(const QuadrantAssignment& item, std::size_t index, TextGenerator* external,
                                 const NegativeOptions& options, std::vector<std::string>* log) {
    std::string id = sample_id(options, index);
    auto note = [&](std::string msg) {
        if (log) log->push_back(id + ": " + std::move(msg));
    };

    if (options.generator == GeneratorKind::External) {
        if (!external) throw Error("external generator requested but none configured");
        std::string prompt = negative_prompt(item);
        for (std::size_t attempt = 0; attempt <= options.retries; ++attempt) {
            try {
                std::string text = trim(external->complete(prompt));
                auto why = reject_reason(text, options.detector);
                if (!why) return make_sample(item, index, options, std::move(text), GeneratorKind::External);
                note("attempt " + std::to_string(attempt + 1) + " rejected: " + *why);
            } catch (const std::exception& e) {
                note("attempt " + std::to_string(attempt + 1) + " failed: " + e.what());
            }
        }
        note("retry budget exhausted; using template response");
    }

    TemplateResponder responder(derive_seed(options.seed, "negatives/template"));
    std::string text = responder.respond(item.query.query);
    if (auto why = reject_reason(text, options.detector)) {
        note("dropped: template response rejected: " + *why);
        return NegativeDrop{id, "template response rejected: " + *why};
    }
    return make_sample(item, index, options, std::move(text), GeneratorKind::Template);
}

NegativeRun generate_negatives(const std::vector<QuadrantAssignment>& items, TextGenerator* external,
                               const NegativeOptions& options) {
    std::vector<std::optional<GenerateResult>> results(items.size());
    std::vector<std::vector<std::string>> logs(items.size());

    if (options.generator == GeneratorKind::External && items.size() > 1 && options.max_in_flight > 1) {
        std::atomic<std::size_t> next{0};
        std::mutex error_mutex;
        std::exception_ptr failure;
        auto worker = [&] {
            for (std::size_t i = next++; i < items.size(); i = next++) {
                try {
                    results[i] = generate_response(items[i], i, external, options, &logs[i]);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        };
        std::size_t n_threads = std::min(options.max_in_flight, items.size());
        std::vector<std::thread> threads;
        for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
        for (auto& th : threads) th.join();
        if (failure) std::rethrow_exception(failure);
    } else {
        for (std::size_t i = 0; i < items.size(); ++i) {
            results[i] = generate_response(items[i], i, external, options, &logs[i]);
        }
    }

    NegativeRun run;
    for (std::size_t i = 0; i < items.size(); ++i) {
        for (auto& line : logs[i]) run.log.push_back(std::move(line));
        if (auto* s = std::get_if<NegativeSample>(&*results[i])) {
            if (options.generator == GeneratorKind::External && s->generator == GeneratorKind::Template) {
                ++run.fallbacks;
            }
            run.samples.push_back(std::move(*s));
        } else {
            run.drops.push_back(std::get<NegativeDrop>(*results[i]));
        }
    }
    return run;
}

ChatConversation negative_to_conversation(const NegativeSample& sample) {
    ChatConversation c;
    c.id = sample.id;
    c.source = "negatives";
    c.style = Style::Negative;
    c.system_prompt = std::string(kNegativeSystemPrompt);
    c.tools = sample.system_tools;
    c.quadrant = sample.quadrant;
    c.origin.raw_id = sample.raw_id;
    c.origin.transform = "negative/" + std::string(generator_kind_name(sample.generator));

    std::string system = c.system_prompt;
    if (!c.tools.empty()) system += " You can use the following tools:\n" + render_tool_block(c.tools);

    auto turn = [](Role role, std::string content, TurnKind kind) {
        ChatTurn t;
        t.role = role;
        t.content = std::move(content);
        t.loss_mask = role == Role::Assistant;
        TurnMeta m;
        m.kind = kind;
        t.meta = m;
        return t;
    };
    c.turns.push_back(turn(Role::System, system, TurnKind::System));
    c.turns.push_back(turn(Role::User, sample.query, TurnKind::Query));
    c.turns.push_back(turn(Role::Assistant, sample.response, TurnKind::Response));
    return c;
}

}  // namespace aflan
