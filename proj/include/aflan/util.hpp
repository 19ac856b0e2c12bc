#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace aflan {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// Thrown for malformed input files and invalid arguments.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Hashing and seeded randomness
// ---------------------------------------------------------------------------

std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t splitmix64(std::uint64_t x);

// Per-stage seed derivation: stages hash their name into the root seed, so a
// stage re-run in isolation sees the same stream as inside a full run.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stage);

std::string hex64(std::uint64_t v);

// mt19937_64 is fully specified by the standard; the distributions are not,
// so bounded draws and shuffles are implemented here to keep outputs
// identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    // Uniform in [0, bound). bound must be > 0.
    std::uint64_t below(std::uint64_t bound);
    // Uniform in [0, 1).
    double unit();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::vector<std::size_t> permutation(std::size_t n);

private:
    std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Strings
// ---------------------------------------------------------------------------

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
bool starts_with(std::string_view s, std::string_view prefix);
std::vector<std::string> split_lines(std::string_view text);
// Collapses every whitespace run to a single space and trims the ends.
std::string normalize_ws(std::string_view s);
std::string replace_all(std::string s, std::string_view from, std::string_view to);

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

std::string read_file(const std::filesystem::path& path);

// Writes through a sibling temporary and renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// Newline-delimited JSON. Blank lines are skipped; a malformed line raises
// Error naming the file and 1-based line number.
std::vector<ordered_json> read_jsonl(const std::filesystem::path& path);
std::vector<ordered_json> parse_jsonl(std::string_view text, std::string_view origin = "<memory>");
std::string dump_jsonl(const std::vector<ordered_json>& records);

// ---------------------------------------------------------------------------
// Plain key-value configuration
// ---------------------------------------------------------------------------

// `key = value` per line, `#` starts a comment line. List values are written
// as JSON arrays. Keys keep file order.
class KeyValueConfig {
public:
    static KeyValueConfig parse(std::string_view text, std::string_view origin = "<memory>");
    static KeyValueConfig load(const std::filesystem::path& path);

    bool has(const std::string& key) const;
    std::optional<std::string> get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    void set(const std::string& key, std::string value);
    void erase(const std::string& key);

    // Keys beginning with prefix, in file order.
    std::vector<std::string> keys_with_prefix(std::string_view prefix) const;
    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

    std::string serialize() const;

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

// Typed value parsing for config values; errors name the key.
double parse_number(const std::string& key, const std::string& value);
std::int64_t parse_integer(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);
// Accepts "a/b", "a:b" (as a/b) or a decimal.
double parse_ratio(const std::string& key, const std::string& value);
std::vector<std::string> parse_string_list(const std::string& key, const std::string& value);

}  // namespace aflan
