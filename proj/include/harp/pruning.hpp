#pragma once

#include <functional>
#include <string>
#include <vector>

#include "harp/evaluation.hpp"

namespace harp {

/// 1 - mean_t cos(H_l[t], H_{l+1}[t]); low values mark a redundant block.
double bi_score(const Matrix& h_in, const Matrix& h_out);

/// S_A of one layer: 1 - mean cosine between the attention sub-block's
/// input and its post-residual output, over all corpus windows.
double similarity_score(const Checkpoint& ckpt, int layer, const Corpus& corpus, const Windowing& windowing,
                        const SkipPlan& plan);

/// [f(x(1+ε)) - f(x(1-ε))] / 2ε evaluated at x = 1: the derivative of f
/// along its own scale.
double scale_derivative(const std::function<double(double)>& loss, double epsilon);

/// Σ_{s∈{q,k,v}} (Σ_ij ∂L/∂W_ij · W_ij)², each inner sum taken as the
/// central-difference derivative of the mean cross-entropy under W_s ↦ c·W_s.
double hessian_importance(const Checkpoint& ckpt, int layer, const Corpus& corpus, double epsilon,
                          const Windowing& windowing, const SkipPlan& plan);

struct LayerImportance {
    int layer = 0;
    double bi = 0.0;
    double similarity = 0.0;
    double hessian = 0.0;
    double sim = 0.0;
};

struct ImportanceOptions {
    Windowing windowing{128, 128};
    double epsilon = 1e-2;
};

struct LayerImportanceReport {
    std::vector<LayerImportance> records;

    /// Layers ordered least-important first (ascending metric, ties to the
    /// higher layer). `metric` is one of "bi", "similarity", "hessian", "sim".
    std::vector<int> order(const std::string& metric) const;
    /// rank[l] = position of layer l in order(metric).
    std::vector<int> ranks(const std::string& metric) const;
};

/// Every metric for every layer of an unpruned model.
LayerImportanceReport layer_importance(const Checkpoint& ckpt, const Corpus& corpus,
                                       const ImportanceOptions& opts = {});

std::string to_jsonl(const LayerImportanceReport& report);

/// Indices sorted by ascending value, ties broken toward the higher index.
std::vector<int> ascending_order(const std::vector<double>& values);

/// top_p / bottom_p ignore the corpus; hessian / similarity require it.
PruneSpec select_layers(Strategy strategy, int count, const Checkpoint& ckpt, const Corpus* corpus,
                        const ImportanceOptions& opts = {});

struct TraceRow {
    int layer = 0;
    double alpha = 0.0;
    double ppl = 0.0;  // NaN when the candidate failed
};

struct SearchOptions {
    std::vector<double> grid = default_alpha_grid();
    Windowing windowing;
    ForwardOptions forward;
};

struct SearchResult {
    AlphaSchedule schedule;
    std::vector<TraceRow> trace;
    double ppl_all_ones = 0.0;  // every pruned layer at alpha = 1
    double ppl_final = 0.0;
    std::vector<std::string> warnings;
};

/// Greedy top-down alpha search. Pruned layers are visited from the highest
/// down; each sweeps the grid in the given order with higher layers fixed at
/// their chosen values and lower ones at 1.0, keeping the first strict
/// perplexity improvement.
SearchResult search_alpha(const Checkpoint& ckpt, const PruneSpec& spec, const Corpus& corpus,
                          const SearchOptions& opts = {});

}  // namespace harp
