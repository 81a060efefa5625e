#include "harp/config.hpp"

#include <cmath>

#include "harp/errors.hpp"

namespace harp {

void ModelConfig::validate() const {
    auto require_positive = [](int v, const char* name) {
        if (v <= 0) throw ContractError(std::string("config: ") + name + " must be positive");
    };
    require_positive(num_layers, "num_layers");
    require_positive(hidden_size, "hidden_size");
    require_positive(ffn_size, "ffn_size");
    require_positive(num_query_heads, "num_query_heads");
    require_positive(num_kv_heads, "num_kv_heads");
    require_positive(head_dim, "head_dim");
    require_positive(vocab_size, "vocab_size");
    require_positive(max_seq_len, "max_seq_len");
    if (!(rope_base > 0.0) || !std::isfinite(rope_base)) {
        throw ContractError("config: rope_base must be positive");
    }
    if (num_query_heads % num_kv_heads != 0) {
        throw ContractError("config: num_query_heads must be a multiple of num_kv_heads");
    }
    if (num_query_heads * head_dim != hidden_size) {
        throw ContractError("config: num_query_heads * head_dim must equal hidden_size");
    }
    if (head_dim % 2 != 0) throw ContractError("config: head_dim must be even for RoPE");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"num_layers", c.num_layers},
                       {"hidden_size", c.hidden_size},
                       {"ffn_size", c.ffn_size},
                       {"num_query_heads", c.num_query_heads},
                       {"num_kv_heads", c.num_kv_heads},
                       {"head_dim", c.head_dim},
                       {"vocab_size", c.vocab_size},
                       {"max_seq_len", c.max_seq_len},
                       {"rope_base", c.rope_base}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("num_layers").get_to(c.num_layers);
    j.at("hidden_size").get_to(c.hidden_size);
    j.at("ffn_size").get_to(c.ffn_size);
    j.at("num_query_heads").get_to(c.num_query_heads);
    j.at("num_kv_heads").get_to(c.num_kv_heads);
    j.at("head_dim").get_to(c.head_dim);
    j.at("vocab_size").get_to(c.vocab_size);
    j.at("max_seq_len").get_to(c.max_seq_len);
    c.rope_base = j.value("rope_base", 10000.0);
}

bool is_preset(std::string_view name) {
    return name == "tiny" || name == "desk" || name == "llama3.1-8b";
}

ModelConfig preset_config(std::string_view name) {
    if (name == "tiny") return {4, 64, 256, 8, 2, 8, 256, 512, 10000.0};
    if (name == "desk") return {8, 256, 512, 8, 2, 32, 256, 4096, 10000.0};
    if (name == "llama3.1-8b") return {32, 4096, 14336, 32, 8, 128, 128256, 131072, 500000.0};
    throw ContractError("unknown config preset '" + std::string(name) + "'");
}

ParameterCount count_parameters(const ModelConfig& c, bool tied_output) {
    using u64 = std::uint64_t;
    const u64 d = c.hidden_size;
    ParameterCount p;
    p.embedding = u64(c.vocab_size) * d;
    p.per_layer_qk = d * u64(c.q_dim()) + d * u64(c.kv_dim());
    p.per_layer_total = p.per_layer_qk + d * u64(c.kv_dim()) + u64(c.q_dim()) * d +
                        3 * d * u64(c.ffn_size) + 2 * d;
    p.final_norm = d;
    p.output = tied_output ? 0 : u64(c.vocab_size) * d;
    p.total = p.embedding + u64(c.num_layers) * p.per_layer_total + p.final_norm + p.output;
    return p;
}

}  // namespace harp
