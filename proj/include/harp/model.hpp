#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "harp/checkpoint.hpp"
#include "harp/schedule.hpp"
#include "harp/tensor.hpp"

namespace harp {

using TokenId = std::int32_t;

struct AttentionOptions {
    /// Added to every diagonal score before the softmax. A large value
    /// forces one-hot (identity) attention.
    float diagonal_bias = 0.0f;
    /// Keep the per-head N×N attention probabilities.
    bool keep_probs = false;
};

struct AttentionOutput {
    Matrix out;                // N × d, before the residual add
    std::vector<Matrix> probs; // one N×N row-stochastic matrix per query head
};

/// Causal grouped-query attention with RoPE on queries and keys. `x` is the
/// already-normalized block input. Query head h reads kv head h / g.
AttentionOutput gqa_attention(const Matrix& x, const LayerWeights& w, const ModelConfig& config,
                              const AttentionOptions& opts = {});

/// Expands N×(n_kv·head_dim) values to N×(n_q·head_dim): kv head h fills
/// the g adjacent query-head slots h·g … h·g+g-1.
Matrix replicate_kv(const Matrix& v, const ModelConfig& config);

/// h + alpha · replicate(norm(h)·W_V)·W_O. No scores, no softmax, no RoPE.
/// With `prenorm` false the value projection reads h directly.
Matrix skipped_attention(const Matrix& h, const LayerWeights& w, float alpha, const ModelConfig& config,
                         bool prenorm = true);

/// h + gqa_attention(norm(h)).out
Matrix attention_block(const Matrix& h, const LayerWeights& w, const ModelConfig& config,
                       const AttentionOptions& opts = {}, std::vector<Matrix>* probs = nullptr);

/// h + down(silu(gate(norm h)) ⊙ up(norm h))
Matrix ffn_block(const Matrix& h, const LayerWeights& w, const ModelConfig& config);

/// Checks ids and length, then gathers embedding rows.
Matrix embed(const Checkpoint& ckpt, std::span<const TokenId> tokens);

/// Final RMSNorm followed by the output projection: N × V logits.
Matrix lm_head(const Checkpoint& ckpt, const Matrix& h);

struct CaptureFlags {
    bool hidden_states = false;  // block inputs, attention sub-block outputs, final state
    bool attention = false;      // per-head probabilities of unpruned layers
};

struct ForwardOptions {
    bool prenorm_in_skipped = true;
    CaptureFlags capture;
};

struct HiddenState {
    int layer_index = 0;
    Matrix h;
};

struct LayerAttention {
    int layer_index = 0;
    std::vector<Matrix> heads;
};

struct ForwardResult {
    Matrix logits;
    /// hidden[l] is the input of block l; hidden[L] is the last block's output.
    std::vector<HiddenState> hidden;
    /// attention_out[l] is block l's state after the attention residual.
    std::vector<HiddenState> attention_out;
    std::vector<LayerAttention> attention;
};

/// Runs blocks [first, last) in place on `h`. Captured values, if requested,
/// are appended to `capture`.
void run_layers(const Checkpoint& ckpt, Matrix& h, int first, int last, const SkipPlan& plan,
                const ForwardOptions& opts = {}, ForwardResult* capture = nullptr);

ForwardResult forward(const Checkpoint& ckpt, std::span<const TokenId> tokens, const SkipPlan& plan,
                      const ForwardOptions& opts = {});

ForwardResult forward(const Checkpoint& ckpt, std::span<const TokenId> tokens, const PruneSpec& spec,
                      const AlphaSchedule& alphas, const ForwardOptions& opts = {});

}  // namespace harp
