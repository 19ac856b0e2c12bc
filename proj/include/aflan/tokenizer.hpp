#pragma once

#include <cstddef>
#include <string_view>

namespace aflan {

class TokenCounter {
public:
    virtual ~TokenCounter() = default;
    virtual std::size_t count(std::string_view text) const = 0;
};

// Tokenizer-free estimate: words are maximal runs of alphanumeric (or
// non-ASCII) bytes and every punctuation byte counts as its own word. The
// token estimate is ceil(words * 1.3).
class ApproxTokenCounter final : public TokenCounter {
public:
    static constexpr std::size_t kNumerator = 13;
    static constexpr std::size_t kDenominator = 10;

    std::size_t count(std::string_view text) const override;
    static std::size_t word_count(std::string_view text);
};

const TokenCounter& default_token_counter();

}  // namespace aflan
