#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "harp/corpus.hpp"
#include "harp/model.hpp"

namespace harp {

struct Windowing {
    int window_size = 256;
    int stride = 256;
};

/// One forward pass over tokens [input_begin, input_end) scoring the targets
/// [target_begin, target_end); target t is predicted from position t-1.
struct WindowSpan {
    std::size_t input_begin = 0;
    std::size_t input_end = 0;
    std::size_t target_begin = 0;
    std::size_t target_end = 0;
};

/// Windows of at most `window` inputs whose scored targets tile 1..T-1
/// exactly once. Each window after the first scores `stride` new targets
/// (fewer in the last one).
std::vector<WindowSpan> plan_windows(std::size_t corpus_len, int window, int stride);

/// Sum of -log softmax(logits)[target] over the window's scored targets.
double window_nll(const Matrix& logits, std::span<const TokenId> corpus, const WindowSpan& span);

struct PerplexityResult {
    double ppl = 0.0;
    std::size_t token_count = 0;
    int window_size = 0;
    int stride = 0;
    std::vector<double> window_nll;

    double mean_nll() const;
};

PerplexityResult perplexity(const Checkpoint& ckpt, const SkipPlan& plan, const Corpus& corpus,
                            const Windowing& windowing, const ForwardOptions& opts = {});
PerplexityResult perplexity(const Checkpoint& ckpt, const PruneSpec& spec, const AlphaSchedule& alphas,
                            const Corpus& corpus, const Windowing& windowing);

/// Hidden states entering block `layer` for every window of a corpus.
/// Blocks below `layer` are fixed, so evaluations that only vary blocks at
/// or above it can restart from here.
struct WindowStates {
    int layer = 0;
    std::vector<WindowSpan> spans;
    std::vector<Matrix> states;
};

WindowStates states_at_layer(const Checkpoint& ckpt, const Corpus& corpus, const Windowing& windowing,
                             const SkipPlan& plan, int layer, const ForwardOptions& opts = {});

/// Runs blocks [states.layer, layer) on top of cached states.
WindowStates advance_states(const Checkpoint& ckpt, const WindowStates& states, const SkipPlan& plan, int layer,
                            const ForwardOptions& opts = {});

/// Runs blocks [states.layer, L) and the head for each window.
PerplexityResult perplexity_from_states(const Checkpoint& ckpt, const Corpus& corpus,
                                        const WindowStates& states, const Windowing& windowing,
                                        const SkipPlan& plan, const ForwardOptions& opts = {});

/// 1 - mean_t cos(x_t, y_t). Throws ContractError on zero-norm rows.
double one_minus_mean_cosine(const Matrix& x, const Matrix& y);

/// Average pairwise cosine similarity between token rows.
double sim_metric(const Matrix& h);

/// Frobenius distance from h to the nearest matrix with identical rows.
double dm_distance(const Matrix& h);

/// ‖A·H‖_F / ‖H‖_F for row-stochastic A.
double frobenius_ratio(const Matrix& attention, const Matrix& h);

/// Mean over rows i ≥ 1 of the row entropy on the causal support j ≤ i,
/// divided by ln(i+1). In [0, 1].
double attention_entropy(const Matrix& attention);

/// Causal softmax(q kᵀ / sqrt(width)) for a single head.
Matrix causal_attention_probs(const Matrix& q, const Matrix& k);

struct DiagnosticsRecord {
    int layer = 0;
    double sim = 0.0;
    double d_m = 0.0;
    std::optional<double> entropy;          // absent for pruned layers
    std::optional<double> frobenius_ratio;  // absent for pruned layers
};

/// Per-layer probes from one captured forward pass over `tokens`.
std::vector<DiagnosticsRecord> layer_diagnostics(const Checkpoint& ckpt, std::span<const TokenId> tokens,
                                                 const SkipPlan& plan);

std::string to_jsonl(const std::vector<DiagnosticsRecord>& records);

}  // namespace harp
