#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "harp/model.hpp"

namespace harp {

/// Byte-level vocabulary: token id == byte value.
inline constexpr int kByteVocab = 256;

struct Corpus {
    std::vector<TokenId> ids;
    std::string digest;  // SHA-256 of the source bytes
    std::string name;

    std::size_t size() const { return ids.size(); }
};

/// Throws InputError on empty text.
Corpus tokenize(std::string_view text, std::string name = "inline");
std::string detokenize(std::span<const TokenId> ids);

Corpus load_corpus(const std::string& path);

/// Fails unless every id fits the model's vocabulary.
void check_corpus(const Corpus& corpus, const ModelConfig& config);

/// First `max_tokens` ids (all when 0); the digest follows the kept bytes.
Corpus truncate_corpus(const Corpus& corpus, std::size_t max_tokens);

}  // namespace harp
