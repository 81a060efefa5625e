#include "harp/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "harp/errors.hpp"

namespace harp {

namespace {

struct RopeTable {
    std::size_t half = 0;
    std::vector<float> cos;  // N × half
    std::vector<float> sin;
};

RopeTable make_rope(std::size_t n, const ModelConfig& c) {
    RopeTable t;
    t.half = static_cast<std::size_t>(c.head_dim) / 2;
    t.cos.resize(n * t.half);
    t.sin.resize(n * t.half);
    for (std::size_t i = 0; i < t.half; ++i) {
        const double inv_freq = std::pow(c.rope_base, -2.0 * static_cast<double>(i) / c.head_dim);
        for (std::size_t p = 0; p < n; ++p) {
            const double angle = static_cast<double>(p) * inv_freq;
            t.cos[p * t.half + i] = static_cast<float>(std::cos(angle));
            t.sin[p * t.half + i] = static_cast<float>(std::sin(angle));
        }
    }
    return t;
}

// Rotates consecutive pairs (2i, 2i+1) of every head in place.
void apply_rope(Matrix& m, int heads, int head_dim, const RopeTable& t) {
    for (std::size_t p = 0; p < m.rows(); ++p) {
        auto row = m.row(p);
        const float* cs = t.cos.data() + p * t.half;
        const float* sn = t.sin.data() + p * t.half;
        for (int h = 0; h < heads; ++h) {
            float* x = row.data() + static_cast<std::size_t>(h) * head_dim;
            for (std::size_t i = 0; i < t.half; ++i) {
                const float a = x[2 * i];
                const float b = x[2 * i + 1];
                x[2 * i] = a * cs[i] - b * sn[i];
                x[2 * i + 1] = a * sn[i] + b * cs[i];
            }
        }
    }
}

void require_cols(const Matrix& m, std::size_t r, std::size_t c, const char* what) {
    if (m.rows() != r || m.cols() != c) {
        throw ContractError(std::string(what) + " has shape " + std::to_string(m.rows()) + "x" +
                            std::to_string(m.cols()) + ", expected " + std::to_string(r) + "x" +
                            std::to_string(c));
    }
}

void check_input(const Matrix& h, const ModelConfig& c) {
    if (h.rows() == 0) throw ContractError("hidden state has no rows");
    if (h.cols() != static_cast<std::size_t>(c.hidden_size)) {
        throw ContractError("hidden state width " + std::to_string(h.cols()) + " != hidden_size " +
                            std::to_string(c.hidden_size));
    }
}

}  // namespace

AttentionOutput gqa_attention(const Matrix& x, const LayerWeights& w, const ModelConfig& c,
                              const AttentionOptions& opts) {
    check_input(x, c);
    const std::size_t d = c.hidden_size, qd = c.q_dim(), kvd = c.kv_dim();
    if (w.qk_stripped()) throw ContractError("gqa_attention on a layer whose W_Q/W_K were stripped");
    require_cols(w.wq, d, qd, "W_Q");
    require_cols(w.wk, d, kvd, "W_K");
    require_cols(w.wv, d, kvd, "W_V");
    require_cols(w.wo, qd, d, "W_O");

    const std::size_t n = x.rows();
    const std::size_t hd = c.head_dim;
    const int g = c.group_size();

    Matrix q = matmul(x, w.wq);
    Matrix k = matmul(x, w.wk);
    const Matrix v = matmul(x, w.wv);
    const RopeTable rope = make_rope(n, c);
    apply_rope(q, c.num_query_heads, c.head_dim, rope);
    apply_rope(k, c.num_kv_heads, c.head_dim, rope);

    // Keys transposed per kv head (head_dim × N) so score rows accumulate
    // over head_dim with contiguous access.
    std::vector<Matrix> keys_t(static_cast<std::size_t>(c.num_kv_heads), Matrix(hd, n));
    for (std::size_t kh = 0; kh < keys_t.size(); ++kh) {
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t e = 0; e < hd; ++e) keys_t[kh](e, j) = k(j, kh * hd + e);
        }
    }

    AttentionOutput result;
    Matrix heads_out(n, qd);
    if (opts.keep_probs) result.probs.assign(static_cast<std::size_t>(c.num_query_heads), Matrix(n, n));

    // Query rows are processed in blocks. Scores for a block come from one
    // strided GEMM against keys [0, block end); entries above the diagonal are
    // masked to exactly zero probability, so they add nothing to the output.
    constexpr std::size_t kRowBlock = 64;
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
    const std::size_t blocks = (n + kRowBlock - 1) / kRowBlock;
    const std::size_t tasks = static_cast<std::size_t>(c.num_query_heads) * blocks;
    const bool big = n * n * qd > (std::size_t{1} << 20);
#pragma omp parallel if (big)
    {
        std::vector<float> s(kRowBlock * n);
#pragma omp for schedule(dynamic)
        for (std::size_t t = 0; t < tasks; ++t) {
            const std::size_t h = t / blocks;
            const std::size_t i0 = (t % blocks) * kRowBlock;
            const std::size_t i1 = std::min(n, i0 + kRowBlock);
            const std::size_t rows = i1 - i0;
            const std::size_t kh = h / static_cast<std::size_t>(g);
            std::fill(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(rows * i1), 0.0f);
            gemm_accumulate(q.data() + i0 * qd + h * hd, qd, keys_t[kh].data(), n, s.data(), i1, rows, hd, i1);
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t i = i0 + r;
                const std::size_t len = i + 1;
                float* sr = s.data() + r * i1;
                for (std::size_t j = 0; j < len; ++j) sr[j] *= scale;
                sr[i] += opts.diagonal_bias;
                float mx = -std::numeric_limits<float>::infinity();
                for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, sr[j]);
                float sum = 0.0f;
                for (std::size_t j = 0; j < len; ++j) {
                    sr[j] = std::exp(sr[j] - mx);
                    sum += sr[j];
                }
                const float inv = 1.0f / sum;
                for (std::size_t j = 0; j < len; ++j) sr[j] *= inv;
                std::fill(sr + len, sr + i1, 0.0f);
                if (opts.keep_probs) std::copy(sr, sr + len, result.probs[h].row(i).begin());
            }
            gemm_accumulate(s.data(), i1, v.data() + kh * hd, kvd, heads_out.data() + i0 * qd + h * hd, qd, rows,
                            i1, hd);
        }
    }
    result.out = matmul(heads_out, w.wo);
    return result;
}

Matrix replicate_kv(const Matrix& v, const ModelConfig& c) {
    const std::size_t hd = c.head_dim, kvd = c.kv_dim(), qd = c.q_dim();
    if (v.cols() != kvd) throw ContractError("replicate_kv: value width != n_kv·head_dim");
    const std::size_t g = static_cast<std::size_t>(c.group_size());
    Matrix out(v.rows(), qd);
    for (std::size_t r = 0; r < v.rows(); ++r) {
        for (std::size_t kh = 0; kh < static_cast<std::size_t>(c.num_kv_heads); ++kh) {
            const float* src = v.data() + r * kvd + kh * hd;
            for (std::size_t j = 0; j < g; ++j) {
                std::copy(src, src + hd, out.data() + r * qd + (kh * g + j) * hd);
            }
        }
    }
    return out;
}

Matrix skipped_attention(const Matrix& h, const LayerWeights& w, float alpha, const ModelConfig& c,
                         bool prenorm) {
    check_input(h, c);
    if (!std::isfinite(alpha)) throw ContractError("skipped_attention: alpha is not finite");
    require_cols(w.wv, c.hidden_size, c.kv_dim(), "W_V");
    require_cols(w.wo, c.q_dim(), c.hidden_size, "W_O");
    const Matrix values = prenorm ? matmul(rms_norm(h, w.attn_norm, kRmsNormEps), w.wv) : matmul(h, w.wv);
    const Matrix update = matmul(replicate_kv(values, c), w.wo);
    Matrix out = h;
    for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] += alpha * update.values()[i];
    return out;
}

Matrix attention_block(const Matrix& h, const LayerWeights& w, const ModelConfig& c,
                       const AttentionOptions& opts, std::vector<Matrix>* probs) {
    check_input(h, c);
    AttentionOptions o = opts;
    o.keep_probs = o.keep_probs || probs != nullptr;
    auto attn = gqa_attention(rms_norm(h, w.attn_norm, kRmsNormEps), w, c, o);
    Matrix out = h;
    for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] += attn.out.values()[i];
    if (probs) *probs = std::move(attn.probs);
    return out;
}

Matrix ffn_block(const Matrix& h, const LayerWeights& w, const ModelConfig& c) {
    check_input(h, c);
    require_cols(w.w_gate, c.hidden_size, c.ffn_size, "W_gate");
    require_cols(w.w_up, c.hidden_size, c.ffn_size, "W_up");
    require_cols(w.w_down, c.ffn_size, c.hidden_size, "W_down");
    const Matrix x = rms_norm(h, w.ffn_norm, kRmsNormEps);
    Matrix gate = matmul(x, w.w_gate);
    const Matrix up = matmul(x, w.w_up);
    for (std::size_t i = 0; i < gate.size(); ++i) gate.values()[i] = silu(gate.values()[i]) * up.values()[i];
    Matrix out = h;
    matmul_accumulate(gate, w.w_down, out);
    return out;
}

Matrix embed(const Checkpoint& ckpt, std::span<const TokenId> tokens) {
    const auto& c = ckpt.config;
    if (tokens.empty()) throw ContractError("forward: empty token sequence");
    if (tokens.size() > static_cast<std::size_t>(c.max_seq_len)) {
        throw CapacityError("sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_seq_len " +
                            std::to_string(c.max_seq_len));
    }
    const std::size_t d = c.hidden_size;
    Matrix h(tokens.size(), d);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const TokenId t = tokens[i];
        if (t < 0 || t >= c.vocab_size) {
            throw InputError("token id " + std::to_string(t) + " at position " + std::to_string(i) +
                             " outside vocabulary of " + std::to_string(c.vocab_size));
        }
        auto src = ckpt.embedding.row(static_cast<std::size_t>(t));
        std::copy(src.begin(), src.end(), h.row(i).begin());
    }
    return h;
}

Matrix lm_head(const Checkpoint& ckpt, const Matrix& h) {
    check_input(h, ckpt.config);
    const Matrix x = rms_norm(h, ckpt.final_norm, kRmsNormEps);
    return matmul(x, ckpt.output_projection().transposed());
}

void run_layers(const Checkpoint& ckpt, Matrix& h, int first, int last, const SkipPlan& plan,
                const ForwardOptions& opts, ForwardResult* capture) {
    const auto& c = ckpt.config;
    if (plan.size() != static_cast<std::size_t>(c.num_layers)) {
        throw ContractError("skip plan has " + std::to_string(plan.size()) + " entries for " +
                            std::to_string(c.num_layers) + " layers");
    }
    if (first < 0 || last > c.num_layers || first > last) throw ContractError("run_layers: bad layer range");
    const bool keep_hidden = capture && opts.capture.hidden_states;
    const bool keep_attn = capture && opts.capture.attention;
    for (int l = first; l < last; ++l) {
        const auto& w = ckpt.layers[static_cast<std::size_t>(l)];
        const auto& alpha = plan[static_cast<std::size_t>(l)];
        if (keep_hidden) capture->hidden.push_back({l, h});
        if (alpha) {
            h = skipped_attention(h, w, *alpha, c, opts.prenorm_in_skipped);
        } else {
            if (w.qk_stripped()) {
                throw ContractError("layer " + std::to_string(l) +
                                    " has stripped W_Q/W_K but is not in the prune spec");
            }
            if (keep_attn) {
                LayerAttention la{l, {}};
                h = attention_block(h, w, c, {}, &la.heads);
                capture->attention.push_back(std::move(la));
            } else {
                h = attention_block(h, w, c);
            }
        }
        if (keep_hidden) capture->attention_out.push_back({l, h});
        h = ffn_block(h, w, c);
        if (!h.all_finite()) throw NumericError("non-finite hidden state produced by layer " + std::to_string(l));
    }
    if (keep_hidden && last == c.num_layers) capture->hidden.push_back({last, h});
}

ForwardResult forward(const Checkpoint& ckpt, std::span<const TokenId> tokens, const SkipPlan& plan,
                      const ForwardOptions& opts) {
    ForwardResult result;
    Matrix h = embed(ckpt, tokens);
    run_layers(ckpt, h, 0, ckpt.config.num_layers, plan, opts, &result);
    result.logits = lm_head(ckpt, h);
    if (!result.logits.all_finite()) throw NumericError("non-finite logits produced by the output head");
    return result;
}

ForwardResult forward(const Checkpoint& ckpt, std::span<const TokenId> tokens, const PruneSpec& spec,
                      const AlphaSchedule& alphas, const ForwardOptions& opts) {
    return forward(ckpt, tokens, make_skip_plan(spec, alphas, ckpt.config.num_layers), opts);
}

}  // namespace harp
