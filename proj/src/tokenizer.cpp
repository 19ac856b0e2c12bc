#include "aflan/tokenizer.hpp"

#include <cctype>

namespace aflan {

std::size_t ApproxTokenCounter::word_count(std::string_view text) {
    std::size_t words = 0;
    bool in_word = false;
    for (char ch : text) {
        auto c = static_cast<unsigned char>(ch);
        if (c >= 0x80 || std::isalnum(c)) {
            if (!in_word) ++words;
            in_word = true;
        } else {
            in_word = false;
            if (std::ispunct(c)) ++words;
        }
    }
    return words;
}

std::size_t ApproxTokenCounter::count(std::string_view text) const {
    return (word_count(text) * kNumerator + kDenominator - 1) / kDenominator;
}

const TokenCounter& default_token_counter() {
    static const ApproxTokenCounter counter;
    return counter;
}

}  // namespace aflan
