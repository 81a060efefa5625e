#include "harp/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>

#include <json.hpp>

#include "harp/errors.hpp"

namespace harp {

std::vector<WindowSpan> plan_windows(std::size_t corpus_len, int window, int stride) {
    if (corpus_len < 2) throw ContractError("perplexity needs at least 2 tokens");
    if (window < 1) throw ContractError("window_size must be positive");
    if (stride < 1 || stride > window) throw ContractError("stride must be in [1, window_size]");
    const std::size_t w = static_cast<std::size_t>(window);
    const std::size_t s = static_cast<std::size_t>(stride);
    const std::size_t last_target = corpus_len - 1;

    std::vector<WindowSpan> spans;
    std::size_t scored = 0;  // highest target scored so far
    std::size_t end = std::min(w, last_target);
    while (true) {
        WindowSpan span;
        span.input_end = end;
        span.input_begin = end > w ? end - w : 0;
        span.target_begin = scored + 1;
        span.target_end = end + 1;
        spans.push_back(span);
        scored = end;
        if (end == last_target) break;
        end = std::min(end + s, last_target);
    }
    return spans;
}

double window_nll(const Matrix& logits, std::span<const TokenId> corpus, const WindowSpan& span) {
    if (logits.rows() != span.input_end - span.input_begin) {
        throw ContractError("window_nll: logits rows do not match the window");
    }
    double total = 0.0;
    for (std::size_t t = span.target_begin; t < span.target_end; ++t) {
        auto row = logits.row(t - 1 - span.input_begin);
        double mx = -std::numeric_limits<double>::infinity();
        for (float v : row) mx = std::max(mx, static_cast<double>(v));
        double sum = 0.0;
        for (float v : row) sum += std::exp(static_cast<double>(v) - mx);
        const auto target = static_cast<std::size_t>(corpus[t]);
        total += (mx + std::log(sum)) - static_cast<double>(row[target]);
    }
    return total;
}

double PerplexityResult::mean_nll() const {
    double total = 0.0;
    for (double v : window_nll) total += v;
    return token_count == 0 ? 0.0 : total / static_cast<double>(token_count);
}

namespace {

void check_windowing(const Checkpoint& ckpt, const Corpus& corpus, const Windowing& windowing) {
    if (windowing.window_size > ckpt.config.max_seq_len) {
        throw ContractError("window_size " + std::to_string(windowing.window_size) + " exceeds max_seq_len " +
                            std::to_string(ckpt.config.max_seq_len));
    }
    check_corpus(corpus, ckpt.config);
}

std::span<const TokenId> window_tokens(const Corpus& corpus, const WindowSpan& span) {
    return std::span<const TokenId>(corpus.ids).subspan(span.input_begin, span.input_end - span.input_begin);
}

// Runs fn(i) for every window, possibly in parallel, and rethrows the
// failure of the lowest-indexed window so errors are deterministic.
template <class Fn>
void for_each_window(std::size_t n, Fn&& fn) {
    std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < n; ++i) {
        try {
            fn(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace

WindowStates states_at_layer(const Checkpoint& ckpt, const Corpus& corpus, const Windowing& windowing,
                             const SkipPlan& plan, int layer, const ForwardOptions& opts) {
    check_windowing(ckpt, corpus, windowing);
    if (layer < 0 || layer > ckpt.config.num_layers) throw ContractError("states_at_layer: bad layer");
    WindowStates ws;
    ws.layer = layer;
    ws.spans = plan_windows(corpus.size(), windowing.window_size, windowing.stride);
    ws.states.resize(ws.spans.size());
    for_each_window(ws.spans.size(), [&](std::size_t i) {
        Matrix h = embed(ckpt, window_tokens(corpus, ws.spans[i]));
        run_layers(ckpt, h, 0, layer, plan, opts);
        ws.states[i] = std::move(h);
    });
    return ws;
}

WindowStates advance_states(const Checkpoint& ckpt, const WindowStates& states, const SkipPlan& plan, int layer,
                            const ForwardOptions& opts) {
    if (layer < states.layer || layer > ckpt.config.num_layers) throw ContractError("advance_states: bad layer");
    WindowStates ws;
    ws.layer = layer;
    ws.spans = states.spans;
    ws.states.resize(states.states.size());
    for_each_window(ws.spans.size(), [&](std::size_t i) {
        Matrix h = states.states[i];
        run_layers(ckpt, h, states.layer, layer, plan, opts);
        ws.states[i] = std::move(h);
    });
    return ws;
}

PerplexityResult perplexity_from_states(const Checkpoint& ckpt, const Corpus& corpus, const WindowStates& states,
                                        const Windowing& windowing, const SkipPlan& plan,
                                        const ForwardOptions& opts) {
    PerplexityResult r;
    r.window_size = windowing.window_size;
    r.stride = windowing.stride;
    r.window_nll.assign(states.spans.size(), 0.0);
    const ForwardOptions no_capture{opts.prenorm_in_skipped, {}};
    for_each_window(states.spans.size(), [&](std::size_t i) {
        Matrix h = states.states[i];
        run_layers(ckpt, h, states.layer, ckpt.config.num_layers, plan, no_capture);
        const Matrix logits = lm_head(ckpt, h);
        r.window_nll[i] = window_nll(logits, corpus.ids, states.spans[i]);
    });
    for (const auto& s : states.spans) r.token_count += s.target_end - s.target_begin;
    const double mean = r.mean_nll();
    if (!std::isfinite(mean)) throw NumericError("perplexity: non-finite loss");
    r.ppl = std::exp(mean);
    return r;
}

PerplexityResult perplexity(const Checkpoint& ckpt, const SkipPlan& plan, const Corpus& corpus,
                            const Windowing& windowing, const ForwardOptions& opts) {
    const auto states = states_at_layer(ckpt, corpus, windowing, plan, 0, opts);
    return perplexity_from_states(ckpt, corpus, states, windowing, plan, opts);
}

PerplexityResult perplexity(const Checkpoint& ckpt, const PruneSpec& spec, const AlphaSchedule& alphas,
                            const Corpus& corpus, const Windowing& windowing) {
    return perplexity(ckpt, make_skip_plan(spec, alphas, ckpt.config.num_layers), corpus, windowing);
}

double one_minus_mean_cosine(const Matrix& x, const Matrix& y) {
    if (x.rows() != y.rows() || x.cols() != y.cols()) throw ContractError("cosine distance: shape mismatch");
    if (x.rows() == 0) throw ContractError("cosine distance: no rows");
    double total = 0.0;
    for (std::size_t t = 0; t < x.rows(); ++t) total += cosine(x.row(t), y.row(t));
    return 1.0 - total / static_cast<double>(x.rows());
}

double sim_metric(const Matrix& h) {
    const std::size_t n = h.rows(), d = h.cols();
    if (n < 2) throw ContractError("sim_metric needs at least 2 rows");
    std::vector<double> unit(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        double norm = 0.0;
        for (float v : h.row(i)) norm += static_cast<double>(v) * v;
        if (norm == 0.0) throw ContractError("sim_metric: zero-norm row " + std::to_string(i));
        norm = std::sqrt(norm);
        for (std::size_t c = 0; c < d; ++c) unit[i * d + c] = h(i, c) / norm;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += unit[i * d + c] * unit[j * d + c];
            total += dot;
        }
    }
    return 2.0 * total / (static_cast<double>(n) * static_cast<double>(n - 1));
}

double dm_distance(const Matrix& h) {
    const std::size_t n = h.rows(), d = h.cols();
    if (n == 0) throw ContractError("dm_distance needs at least 1 row");
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < d; ++c) mean[c] += h(i, c);
    }
    for (double& m : mean) m /= static_cast<double>(n);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
            const double r = h(i, c) - mean[c];
            s += r * r;
        }
    }
    return std::sqrt(s);
}

namespace {

void check_row_stochastic(const Matrix& a) {
    if (a.rows() != a.cols()) throw ContractError("attention matrix must be square");
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double sum = 0.0;
        for (float v : a.row(i)) {
            if (v < 0.0f) throw ContractError("attention matrix has a negative entry");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-5) {
            throw ContractError("attention row " + std::to_string(i) + " sums to " + std::to_string(sum));
        }
    }
}

}  // namespace

double frobenius_ratio(const Matrix& attention, const Matrix& h) {
    check_row_stochastic(attention);
    if (attention.cols() != h.rows()) throw ContractError("frobenius_ratio: shape mismatch");
    const double hn = frobenius_norm(h);
    if (hn == 0.0) throw ContractError("frobenius_ratio: H is zero");
    // Double accumulation keeps identity rows exact.
    double s = 0.0;
    for (std::size_t i = 0; i < attention.rows(); ++i) {
        for (std::size_t c = 0; c < h.cols(); ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < attention.cols(); ++j) acc += static_cast<double>(attention(i, j)) * h(j, c);
            s += acc * acc;
        }
    }
    return std::sqrt(s) / hn;
}

double attention_entropy(const Matrix& attention) {
    check_row_stochastic(attention);
    const std::size_t n = attention.rows();
    if (n < 2) return 0.0;
    double total = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
        double ent = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
            const double a = attention(i, j);
            if (a > 0.0) ent -= a * std::log(a);
        }
        total += ent / std::log(static_cast<double>(i + 1));
    }
    return total / static_cast<double>(n - 1);
}

Matrix causal_attention_probs(const Matrix& q, const Matrix& k) {
    if (q.rows() != k.rows() || q.cols() != k.cols()) throw ContractError("causal_attention_probs: shape mismatch");
    const std::size_t n = q.rows();
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Matrix a(n, n);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < q.cols(); ++c) dot += static_cast<double>(q(i, c)) * k(j, c);
            s[j] = dot * scale;
            mx = std::max(mx, s[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
            s[j] = std::exp(s[j] - mx);
            sum += s[j];
        }
        for (std::size_t j = 0; j <= i; ++j) a(i, j) = static_cast<float>(s[j] / sum);
    }
    return a;
}

std::vector<DiagnosticsRecord> layer_diagnostics(const Checkpoint& ckpt, std::span<const TokenId> tokens,
                                                 const SkipPlan& plan) {
    ForwardOptions opts;
    opts.capture = {true, true};
    const auto fwd = forward(ckpt, tokens, plan, opts);
    std::vector<DiagnosticsRecord> out;
    for (int l = 0; l < ckpt.config.num_layers; ++l) {
        const Matrix& h = fwd.hidden[static_cast<std::size_t>(l)].h;
        DiagnosticsRecord rec;
        rec.layer = l;
        rec.sim = sim_metric(h);
        rec.d_m = dm_distance(h);
        for (const auto& la : fwd.attention) {
            if (la.layer_index != l) continue;
            double ent = 0.0, ratio = 0.0;
            for (const auto& a : la.heads) {
                ent += attention_entropy(a);
                ratio += frobenius_ratio(a, h);
            }
            rec.entropy = ent / static_cast<double>(la.heads.size());
            rec.frobenius_ratio = ratio / static_cast<double>(la.heads.size());
        }
        out.push_back(rec);
    }
    return out;
}

std::string to_jsonl(const std::vector<DiagnosticsRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        nlohmann::json j = {{"layer", r.layer}, {"sim", r.sim}, {"d_m", r.d_m}};
        j["entropy"] = r.entropy ? nlohmann::json(*r.entropy) : nlohmann::json(nullptr);
        j["frobenius_ratio"] = r.frobenius_ratio ? nlohmann::json(*r.frobenius_ratio) : nlohmann::json(nullptr);
        out += j.dump();
        out += '\n';
    }
    return out;
}

}  // namespace harp
