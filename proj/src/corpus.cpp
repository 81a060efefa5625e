#include "harp/corpus.hpp"

#include <fstream>
#include <iterator>

#include "harp/digest.hpp"
#include "harp/errors.hpp"

namespace harp {

Corpus tokenize(std::string_view text, std::string name) {
    if (text.empty()) throw InputError("corpus '" + name + "' is empty");
    Corpus c;
    c.ids.reserve(text.size());
    for (char ch : text) c.ids.push_back(static_cast<TokenId>(static_cast<unsigned char>(ch)));
    c.digest = sha256_hex(text);
    c.name = std::move(name);
    return c;
}

std::string detokenize(std::span<const TokenId> ids) {
    std::string out;
    out.reserve(ids.size());
    for (TokenId id : ids) {
        if (id < 0 || id >= kByteVocab) {
            throw ContractError("token id " + std::to_string(id) + " is not a byte");
        }
        out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    }
    return out;
}

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read corpus " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return tokenize(text, path);
}

void check_corpus(const Corpus& corpus, const ModelConfig& config) {
    if (config.vocab_size < kByteVocab) {
        throw ContractError("byte-level corpus needs vocab_size >= 256, model has " +
                            std::to_string(config.vocab_size));
    }
    if (corpus.ids.empty()) throw InputError("corpus '" + corpus.name + "' is empty");
    for (TokenId id : corpus.ids) {
        if (id < 0 || id >= config.vocab_size) {
            throw InputError("corpus token " + std::to_string(id) + " outside vocabulary");
        }
    }
}

Corpus truncate_corpus(const Corpus& corpus, std::size_t max_tokens) {
    Corpus out = corpus;
    if (max_tokens != 0 && out.ids.size() > max_tokens) {
        out.ids.resize(max_tokens);
        out.digest = sha256_hex(detokenize(out.ids));
    }
    return out;
}

}  // namespace harp
