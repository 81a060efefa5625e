#include "harp/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "harp/errors.hpp"

namespace harp {

double bi_score(const Matrix& h_in, const Matrix& h_out) { return one_minus_mean_cosine(h_in, h_out); }

namespace {

double sum_row_cosines(const Matrix& x, const Matrix& y) {
    double total = 0.0;
    for (std::size_t t = 0; t < x.rows(); ++t) total += cosine(x.row(t), y.row(t));
    return total;
}

void check_layer(const Checkpoint& ckpt, int layer) {
    if (layer < 0 || layer >= ckpt.config.num_layers) {
        throw ContractError("layer " + std::to_string(layer) + " out of range");
    }
}

std::vector<WindowSpan> metric_windows(const Corpus& corpus, const Windowing& w) {
    return plan_windows(corpus.size(), w.window_size, w.window_size);
}

}  // namespace

double similarity_score(const Checkpoint& ckpt, int layer, const Corpus& corpus, const Windowing& windowing,
                        const SkipPlan& plan) {
    check_layer(ckpt, layer);
    if (plan.at(static_cast<std::size_t>(layer))) {
        throw ContractError("similarity_score: layer " + std::to_string(layer) + " is pruned");
    }
    const Windowing w{windowing.window_size, windowing.window_size};
    const auto states = states_at_layer(ckpt, corpus, w, plan, layer);
    const auto& weights = ckpt.layers[static_cast<std::size_t>(layer)];
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& x : states.states) {
        const Matrix y = attention_block(x, weights, ckpt.config);
        total += sum_row_cosines(x, y);
        count += x.rows();
    }
    return 1.0 - total / static_cast<double>(count);
}

double scale_derivative(const std::function<double(double)>& loss, double epsilon) {
    if (!(epsilon > 0.0) || epsilon > 0.5) throw ContractError("epsilon must be in (0, 0.5]");
    const double up = loss(1.0 + epsilon);
    const double down = loss(1.0 - epsilon);
    if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("non-finite loss at a perturbed point");
    }
    return (up - down) / (2.0 * epsilon);
}

double hessian_importance(const Checkpoint& ckpt, int layer, const Corpus& corpus, double epsilon,
                          const Windowing& windowing, const SkipPlan& plan) {
    check_layer(ckpt, layer);
    if (!(epsilon > 0.0) || epsilon > 0.5) throw ContractError("epsilon must be in (0, 0.5]");
    const auto prefix = states_at_layer(ckpt, corpus, windowing, plan, layer);
    Checkpoint work = ckpt;
    auto& lw = work.layers[static_cast<std::size_t>(layer)];
    double importance = 0.0;
    for (Matrix* target : {&lw.wq, &lw.wk, &lw.wv}) {
        const Matrix original = *target;
        auto loss = [&](double c) {
            const auto factor = static_cast<float>(c);
            for (std::size_t i = 0; i < target->size(); ++i) target->values()[i] = original.values()[i] * factor;
            try {
                return perplexity_from_states(work, corpus, prefix, windowing, plan).mean_nll();
            } catch (const NumericError&) {
                return std::numeric_limits<double>::quiet_NaN();
            }
        };
        const double deriv = scale_derivative(loss, epsilon);
        *target = original;
        importance += deriv * deriv;
    }
    return importance;
}

std::vector<int> ascending_order(const std::vector<double>& values) {
    std::vector<int> idx(values.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        const double va = values[static_cast<std::size_t>(a)];
        const double vb = values[static_cast<std::size_t>(b)];
        if (va != vb) return va < vb;
        return a > b;
    });
    return idx;
}

std::vector<int> LayerImportanceReport::order(const std::string& metric) const {
    std::vector<double> v;
    for (const auto& r : records) {
        if (metric == "bi") v.push_back(r.bi);
        else if (metric == "similarity") v.push_back(r.similarity);
        else if (metric == "hessian") v.push_back(r.hessian);
        else if (metric == "sim") v.push_back(r.sim);
        else throw ContractError("unknown metric '" + metric + "'");
    }
    return ascending_order(v);
}

std::vector<int> LayerImportanceReport::ranks(const std::string& metric) const {
    const auto ord = order(metric);
    std::vector<int> rank(ord.size());
    for (std::size_t pos = 0; pos < ord.size(); ++pos) rank[static_cast<std::size_t>(ord[pos])] = static_cast<int>(pos);
    return rank;
}

LayerImportanceReport layer_importance(const Checkpoint& ckpt, const Corpus& corpus, const ImportanceOptions& opts) {
    check_corpus(corpus, ckpt.config);
    const int num_layers = ckpt.config.num_layers;
    const auto plan = dense_plan(num_layers);
    const auto spans = metric_windows(corpus, opts.windowing);

    const auto L = static_cast<std::size_t>(num_layers);
    std::vector<double> bi_sum(L, 0.0), sa_sum(L, 0.0), sim_sum(L, 0.0);
    std::size_t token_count = 0, sim_windows = 0;
    ForwardOptions fo;
    fo.capture.hidden_states = true;
    for (const auto& span : spans) {
        const auto tokens = std::span<const TokenId>(corpus.ids).subspan(span.input_begin, span.input_end - span.input_begin);
        const auto fwd = forward(ckpt, tokens, plan, fo);
        token_count += tokens.size();
        const bool sim_ok = tokens.size() >= 2;
        if (sim_ok) ++sim_windows;
        for (std::size_t l = 0; l < L; ++l) {
            bi_sum[l] += sum_row_cosines(fwd.hidden[l].h, fwd.hidden[l + 1].h);
            sa_sum[l] += sum_row_cosines(fwd.hidden[l].h, fwd.attention_out[l].h);
            if (sim_ok) sim_sum[l] += sim_metric(fwd.hidden[l].h);
        }
    }

    LayerImportanceReport report;
    for (int l = 0; l < num_layers; ++l) {
        const auto i = static_cast<std::size_t>(l);
        LayerImportance rec;
        rec.layer = l;
        rec.bi = 1.0 - bi_sum[i] / static_cast<double>(token_count);
        rec.similarity = 1.0 - sa_sum[i] / static_cast<double>(token_count);
        rec.sim = sim_windows ? sim_sum[i] / static_cast<double>(sim_windows) : 0.0;
        rec.hessian = hessian_importance(ckpt, l, corpus, opts.epsilon, opts.windowing, plan);
        report.records.push_back(rec);
    }
    return report;
}

std::string to_jsonl(const LayerImportanceReport& report) {
    std::string out;
    for (const auto& r : report.records) {
        nlohmann::json j = {{"layer", r.layer},
                            {"bi_score", r.bi},
                            {"similarity_score", r.similarity},
                            {"hessian_importance", r.hessian},
                            {"sim", r.sim}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

PruneSpec select_layers(Strategy strategy, int count, const Checkpoint& ckpt, const Corpus* corpus,
                        const ImportanceOptions& opts) {
    const int num_layers = ckpt.config.num_layers;
    if (count < 0 || count > num_layers) {
        throw ContractError("cannot prune " + std::to_string(count) + " of " + std::to_string(num_layers) + " layers");
    }
    switch (strategy) {
        case Strategy::top_p: return PruneSpec::top(count, num_layers);
        case Strategy::bottom_p: return PruneSpec::bottom(count, num_layers);
        case Strategy::explicit_set: throw ContractError("explicit layer sets are not selected by a strategy");
        case Strategy::hessian:
        case Strategy::similarity: break;
    }
    PruneSpec spec;
    spec.strategy = strategy;
    if (count == 0) return spec;
    if (!corpus) throw ContractError(std::string(to_string(strategy)) + " strategy needs a corpus");

    const auto plan = dense_plan(num_layers);
    std::vector<double> scores;
    for (int l = 0; l < num_layers; ++l) {
        scores.push_back(strategy == Strategy::hessian
                             ? hessian_importance(ckpt, l, *corpus, opts.epsilon, opts.windowing, plan)
                             : similarity_score(ckpt, l, *corpus, opts.windowing, plan));
    }
    const auto ord = ascending_order(scores);
    spec.layers.assign(ord.begin(), ord.begin() + count);
    std::sort(spec.layers.begin(), spec.layers.end());
    spec.validate(num_layers);
    return spec;
}

SearchResult search_alpha(const Checkpoint& ckpt, const PruneSpec& spec, const Corpus& corpus,
                          const SearchOptions& opts) {
    const int num_layers = ckpt.config.num_layers;
    spec.validate(num_layers);
    check_corpus(corpus, ckpt.config);
    if (opts.grid.empty()) throw ContractError("alpha grid is empty");
    for (double a : opts.grid) {
        if (!std::isfinite(a)) throw ContractError("alpha grid contains a non-finite value");
    }

    SearchResult result;
    auto& schedule = result.schedule;
    schedule.layer_indices.assign(spec.layers.rbegin(), spec.layers.rend());
    schedule.alphas.assign(spec.layers.size(), 1.0);
    schedule.grid = opts.grid;
    schedule.corpus_digest = corpus.digest;
    schedule.checkpoint_digest = content_hash(ckpt);
    result.ppl_all_ones = std::numeric_limits<double>::quiet_NaN();
    result.ppl_final = std::numeric_limits<double>::quiet_NaN();
    if (spec.layers.empty()) {
        result.ppl_all_ones = perplexity(ckpt, dense_plan(num_layers), corpus, opts.windowing, opts.forward).ppl;
        result.ppl_final = result.ppl_all_ones;
        return result;
    }

    SkipPlan plan = dense_plan(num_layers);
    for (int l : spec.layers) plan[static_cast<std::size_t>(l)] = 1.0f;

    // Blocks below a pruned layer stay fixed until that layer is visited, so
    // every prefix can be taken in one upward pass with all alphas at 1.
    std::vector<WindowStates> prefixes;
    prefixes.reserve(spec.layers.size());
    for (int layer : spec.layers) {
        prefixes.push_back(prefixes.empty()
                               ? states_at_layer(ckpt, corpus, opts.windowing, plan, layer, opts.forward)
                               : advance_states(ckpt, prefixes.back(), plan, layer, opts.forward));
    }

    double best = std::numeric_limits<double>::infinity();
    for (std::size_t idx = 0; idx < schedule.layer_indices.size(); ++idx) {
        const int layer = schedule.layer_indices[idx];
        const auto slot = static_cast<std::size_t>(layer);
        const WindowStates prefix = std::move(prefixes.back());
        prefixes.pop_back();
        best = std::numeric_limits<double>::infinity();
        std::optional<double> chosen;
        for (double alpha : opts.grid) {
            plan[slot] = static_cast<float>(alpha);
            double ppl = std::numeric_limits<double>::quiet_NaN();
            try {
                ppl = perplexity_from_states(ckpt, corpus, prefix, opts.windowing, plan, opts.forward).ppl;
            } catch (const NumericError& e) {
                result.warnings.push_back("layer " + std::to_string(layer) + " alpha " + std::to_string(alpha) +
                                          " discarded: " + e.what());
            }
            result.trace.push_back({layer, alpha, ppl});
            if (idx == 0 && alpha == 1.0) result.ppl_all_ones = ppl;
            if (ppl < best) {
                best = ppl;
                chosen = alpha;
            }
        }
        if (!chosen) throw SearchError("alpha search failed: every candidate for layer " + std::to_string(layer) + " was non-finite");
        plan[slot] = static_cast<float>(*chosen);
        schedule.alphas[idx] = *chosen;
    }
    result.ppl_final = best;
    if (std::isnan(result.ppl_all_ones)) {
        SkipPlan ones = dense_plan(num_layers);
        for (int l : spec.layers) ones[static_cast<std::size_t>(l)] = 1.0f;
        result.ppl_all_ones = perplexity(ckpt, ones, corpus, opts.windowing, opts.forward).ppl;
    }
    return result;
}

}  // namespace harp
