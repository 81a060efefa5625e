#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "harp/config.hpp"
#include "harp/schedule.hpp"
#include "harp/tensor.hpp"

namespace harp {

/// Weights of one transformer block. Projections are stored so that a
/// hidden state multiplies from the left: q = x · wq.
struct LayerWeights {
    Matrix wq;      // d × (n_q·head_dim), empty once stripped
    Matrix wk;      // d × (n_kv·head_dim), empty once stripped
    Matrix wv;      // d × (n_kv·head_dim)
    Matrix wo;      // (n_q·head_dim) × d
    Matrix w_gate;  // d × d_ff
    Matrix w_up;    // d × d_ff
    Matrix w_down;  // d_ff × d
    std::vector<float> attn_norm;
    std::vector<float> ffn_norm;

    bool qk_stripped() const { return wq.empty() && wk.empty(); }

    friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

struct Checkpoint {
    static constexpr int kFormatVersion = 1;

    ModelConfig config;
    Matrix embedding;  // V × d
    std::vector<LayerWeights> layers;
    std::vector<float> final_norm;
    Matrix output;  // V × d, empty when tied to the embedding
    bool tied_output = false;
    int format_version = kFormatVersion;
    std::optional<std::uint64_t> seed;
    std::vector<int> attention_skipped;  // layers whose W_Q/W_K were stripped

    const Matrix& output_projection() const { return tied_output ? embedding : output; }

    /// Shapes, finiteness and strip markers agree with the config.
    void validate() const;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Seeded Gaussian initialization (std 0.02, residual-output matrices
/// scaled by 1/sqrt(2L)), unit norm gains.
Checkpoint generate_model(const ModelConfig& config, std::uint64_t seed, bool tied_output = false);

inline constexpr char kCheckpointMagic[8] = {'H', 'A', 'R', 'P', 'C', 'K', 'P', 'T'};

/// "HARPCKPT" | u64 LE header length | JSON header | f32 LE payload.
std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize(std::span<const std::uint8_t> bytes);

void save(const Checkpoint& ckpt, const std::string& path);
Checkpoint load(const std::string& path);

/// SHA-256 of the serialized checkpoint.
std::string content_hash(const Checkpoint& ckpt);

struct StripReport {
    std::vector<int> layers;
    std::uint64_t total_parameters = 0;  // before stripping
    std::uint64_t removed_parameters = 0;
    double ratio() const {
        return total_parameters == 0 ? 0.0
                                     : static_cast<double>(removed_parameters) / total_parameters;
    }
};

/// Query/key parameter reduction of pruning `spec`, from shapes only.
StripReport qk_reduction(const ModelConfig& config, bool tied_output, const PruneSpec& spec);

struct StripResult {
    Checkpoint checkpoint;
    StripReport report;
};

/// Drops W_Q and W_K of the pruned layers and marks them attention-skipped.
StripResult strip(const Checkpoint& ckpt, const PruneSpec& spec);

}  // namespace harp
