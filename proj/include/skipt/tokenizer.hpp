#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace skipt {

// Character-level tokenizer. Id 0 is the reserved unknown token; unknown
// characters map there rather than being dropped. Every sequence ends with
// the terminal aggregation token (eos), whose encoder output becomes the
// text feature.
inline constexpr std::int64_t kUnkToken = 0;
inline constexpr std::int64_t kEosToken = 1;

struct TokenSequence {
    std::vector<std::int64_t> ids;

    std::size_t length() const { return ids.size(); }
    bool operator==(const TokenSequence& other) const = default;
};

inline std::int64_t char_token(char c) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    if (c == ' ') return 2;
    if (c >= 'a' && c <= 'z') return 3 + (c - 'a');
    if (c >= '0' && c <= '9') return 29 + (c - '0');
    if (c == '.') return 39;
    if (c == '-') return 40;
    return kUnkToken;
}

inline constexpr std::int64_t kTokenAlphabetSize = 41;

inline TokenSequence encode_text(const std::string& text, std::size_t max_len) {
    if (text.size() + 1 > max_len)
        throw std::invalid_argument("encode_text: '" + text + "' needs " +
                                    std::to_string(text.size() + 1) + " tokens, max_text_len is " +
                                    std::to_string(max_len));
    TokenSequence seq;
    seq.ids.reserve(text.size() + 1);
    for (char c : text) seq.ids.push_back(char_token(c));
    seq.ids.push_back(kEosToken);
    return seq;
}

// Substitute each class name into the prompt template (exactly one [CLS]
// placeholder) and tokenize.
inline std::vector<TokenSequence> encode_class_names(const std::vector<std::string>& names,
                                                     const std::string& prompt_template,
                                                     std::size_t max_len) {
    const std::string placeholder = "[CLS]";
    std::size_t pos = prompt_template.find(placeholder);
    if (pos == std::string::npos)
        throw std::invalid_argument("prompt template '" + prompt_template + "' lacks a [CLS] placeholder");
    if (prompt_template.find(placeholder, pos + 1) != std::string::npos)
        throw std::invalid_argument("prompt template '" + prompt_template + "' has more than one [CLS]");

    std::vector<TokenSequence> out;
    out.reserve(names.size());
    for (const std::string& name : names) {
        std::string text = prompt_template;
        text.replace(pos, placeholder.size(), name);
        out.push_back(encode_text(text, max_len));
    }
    return out;
}

}  // namespace skipt
