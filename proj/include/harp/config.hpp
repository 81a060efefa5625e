#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

namespace harp {

/// Architecture hyperparameters of a decoder-only GQA transformer.
struct ModelConfig {
    int num_layers = 0;
    int hidden_size = 0;
    int ffn_size = 0;
    int num_query_heads = 0;
    int num_kv_heads = 0;
    int head_dim = 0;
    int vocab_size = 0;
    int max_seq_len = 0;
    double rope_base = 10000.0;

    /// Query heads sharing one key/value head.
    int group_size() const { return num_query_heads / num_kv_heads; }
    int q_dim() const { return num_query_heads * head_dim; }
    int kv_dim() const { return num_kv_heads * head_dim; }

    /// Throws ContractError naming the first violated invariant.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Named configurations: "tiny", "desk", "llama3.1-8b" (shapes only; far too
/// large to materialize).
ModelConfig preset_config(std::string_view name);
bool is_preset(std::string_view name);

struct ParameterCount {
    std::uint64_t embedding = 0;
    std::uint64_t per_layer_qk = 0;
    std::uint64_t per_layer_total = 0;
    std::uint64_t output = 0;
    std::uint64_t final_norm = 0;
    std::uint64_t total = 0;
};

/// Parameter count from shape arithmetic alone.
ParameterCount count_parameters(const ModelConfig& config, bool tied_output);

}  // namespace harp
