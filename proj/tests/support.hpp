#pragma once

// Helpers shared by the unit and acceptance suites. The reference
// implementations here are written independently of the library kernels:
// plain triple loops in double precision, no tiling, no caching.

#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "harp/checkpoint.hpp"
#include "harp/config.hpp"
#include "harp/corpus.hpp"
#include "harp/model.hpp"

namespace harp::test {

inline ModelConfig make_config(int layers, int d, int ffn, int nq, int nkv, int vocab = 256, int max_len = 512) {
    ModelConfig c;
    c.num_layers = layers;
    c.hidden_size = d;
    c.ffn_size = ffn;
    c.num_query_heads = nq;
    c.num_kv_heads = nkv;
    c.head_dim = d / nq;
    c.vocab_size = vocab;
    c.max_seq_len = max_len;
    c.rope_base = 10000.0;
    return c;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double stddev = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (float& v : m.values()) v = static_cast<float>(dist(rng));
    return m;
}

inline std::vector<TokenId> random_tokens(std::size_t n, int vocab, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> dist(0, vocab - 1);
    std::vector<TokenId> t(n);
    for (auto& v : t) v = dist(rng);
    return t;
}

inline std::string data_path(const std::string& name) { return std::string(HARP_TEST_DATA_DIR) + "/" + name; }

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("harp_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

struct CliRun {
    int exit_code = -1;
    std::string output;  // stdout and stderr interleaved
};

// Runs the harp_cli binary with a shell-quoted argument string.
inline CliRun run_cli(const std::string& args) {
    const std::string cmd = std::string("\"") + HARP_CLI_PATH + "\" " + args + " 2>&1";
    CliRun r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return r;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

// Value following "<key> " on its own output line.
inline std::string output_field(const std::string& output, const std::string& key) {
    std::size_t pos = 0;
    while (pos < output.size()) {
        const auto end = output.find('\n', pos);
        const auto line = output.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
        if (line.rfind(key + " ", 0) == 0) return line.substr(key.size() + 1);
        if (end == std::string::npos) break;
        pos = end + 1;
    }
    return {};
}

using DMat = std::vector<std::vector<double>>;

inline DMat to_d(const Matrix& m) {
    DMat out(m.rows(), std::vector<double>(m.cols()));
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
    return out;
}

inline Matrix to_f(const DMat& m) {
    Matrix out(m.size(), m.empty() ? 0 : m[0].size());
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) = static_cast<float>(m[r][c]);
    return out;
}

inline DMat ref_matmul(const DMat& a, const DMat& b) {
    DMat out(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b[0].size(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < b.size(); ++k) s += a[i][k] * b[k][j];
            out[i][j] = s;
        }
    return out;
}

inline DMat ref_rms_norm(const DMat& x, const std::vector<float>& gain) {
    DMat out = x;
    for (auto& row : out) {
        double ss = 0.0;
        for (double v : row) ss += v * v;
        const double scale = 1.0 / std::sqrt(ss / row.size() + 1e-5);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] *= scale * gain[c];
    }
    return out;
}

// Rotation of pair (2i, 2i+1) by angle p · base^(-2i/head_dim).
inline void ref_rope(DMat& x, int heads, int head_dim, double base) {
    for (std::size_t p = 0; p < x.size(); ++p)
        for (int h = 0; h < heads; ++h)
            for (int i = 0; i < head_dim / 2; ++i) {
                const double theta = static_cast<double>(p) * std::pow(base, -2.0 * i / head_dim);
                double& a = x[p][h * head_dim + 2 * i];
                double& b = x[p][h * head_dim + 2 * i + 1];
                const double na = a * std::cos(theta) - b * std::sin(theta);
                const double nb = a * std::sin(theta) + b * std::cos(theta);
                a = na;
                b = nb;
            }
}

struct RefAttention {
    DMat out;                // N × d, W_O applied
    std::vector<DMat> probs; // per query head, full N×N with explicit zeros above the diagonal
};

// Materializes every per-head score matrix in full.
inline RefAttention ref_gqa_attention(const DMat& x, const LayerWeights& w, const ModelConfig& c,
                                      double diagonal_bias = 0.0) {
    const int hd = c.head_dim, g = c.num_query_heads / c.num_kv_heads;
    const std::size_t n = x.size();
    DMat q = ref_matmul(x, to_d(w.wq)), k = ref_matmul(x, to_d(w.wk)), v = ref_matmul(x, to_d(w.wv));
    ref_rope(q, c.num_query_heads, hd, c.rope_base);
    ref_rope(k, c.num_kv_heads, hd, c.rope_base);
    DMat concat(n, std::vector<double>(static_cast<std::size_t>(c.num_query_heads * hd), 0.0));
    RefAttention r;
    for (int h = 0; h < c.num_query_heads; ++h) {
        const int kh = h / g;
        DMat scores(n, std::vector<double>(n, -INFINITY));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j <= i; ++j) {
                double s = 0.0;
                for (int e = 0; e < hd; ++e) s += q[i][h * hd + e] * k[j][kh * hd + e];
                scores[i][j] = s / std::sqrt(static_cast<double>(hd)) + (i == j ? diagonal_bias : 0.0);
            }
        DMat p(n, std::vector<double>(n, 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            double mx = -INFINITY, z = 0.0;
            for (std::size_t j = 0; j <= i; ++j) mx = std::max(mx, scores[i][j]);
            for (std::size_t j = 0; j <= i; ++j) z += std::exp(scores[i][j] - mx);
            for (std::size_t j = 0; j <= i; ++j) p[i][j] = std::exp(scores[i][j] - mx) / z;
            for (int e = 0; e < hd; ++e) {
                double acc = 0.0;
                for (std::size_t j = 0; j <= i; ++j) acc += p[i][j] * v[j][kh * hd + e];
                concat[i][h * hd + e] = acc;
            }
        }
        r.probs.push_back(std::move(p));
    }
    r.out = ref_matmul(concat, to_d(w.wo));
    return r;
}

inline DMat ref_ffn_block(const DMat& h, const LayerWeights& w) {
    const DMat x = ref_rms_norm(h, w.ffn_norm);
    DMat gate = ref_matmul(x, to_d(w.w_gate));
    const DMat up = ref_matmul(x, to_d(w.w_up));
    for (std::size_t r = 0; r < gate.size(); ++r)
        for (std::size_t c = 0; c < gate[r].size(); ++c) {
            const double gv = gate[r][c];
            gate[r][c] = gv / (1.0 + std::exp(-gv)) * up[r][c];
        }
    DMat out = ref_matmul(gate, to_d(w.w_down));
    for (std::size_t r = 0; r < out.size(); ++r)
        for (std::size_t c = 0; c < out[r].size(); ++c) out[r][c] += h[r][c];
    return out;
}

inline DMat ref_logits(const Checkpoint& ckpt, const DMat& h) {
    const DMat x = ref_rms_norm(h, ckpt.final_norm);
    const DMat wt = to_d(ckpt.output_projection().transposed());
    return ref_matmul(x, wt);
}

inline double frob_rel_error(const Matrix& got, const DMat& want) {
    double num = 0.0, den = 0.0;
    for (std::size_t r = 0; r < want.size(); ++r)
        for (std::size_t c = 0; c < want[r].size(); ++c) {
            const double d = got(r, c) - want[r][c];
            num += d * d;
            den += want[r][c] * want[r][c];
        }
    return std::sqrt(num / den);
}

// Next-token NLL in nats from one logit row, in double.
inline double token_nll(std::span<const float> logits, TokenId target) {
    double mx = -INFINITY;
    for (float v : logits) mx = std::max(mx, static_cast<double>(v));
    double z = 0.0;
    for (float v : logits) z += std::exp(v - mx);
    return -(logits[static_cast<std::size_t>(target)] - mx - std::log(z));
}

// Output projection zeroed: every logit is 0, so every next-token
// distribution is uniform over the vocabulary.
inline Checkpoint uniform_logit_model(std::uint64_t seed = 1) {
    auto ck = generate_model(preset_config("tiny"), seed);
    ck.output = Matrix(ck.output.rows(), ck.output.cols());
    return ck;
}

// One layer whose blocks contribute nothing (W_O = W_down = 0). The
// embedding is the identity, and the output projection puts a +30 logit on
// (x + 1) mod 256 after the final RMSNorm scales e_x to about 16·e_x.
inline Checkpoint successor_oracle_model() {
    ModelConfig c = make_config(1, 256, 4, 4, 1, 256, 512);
    auto ck = generate_model(c, 2);
    ck.embedding = Matrix(256, 256);
    ck.output = Matrix(256, 256);
    for (std::size_t x = 0; x < 256; ++x) {
        ck.embedding(x, x) = 1.0f;
        ck.output((x + 1) % 256, x) = 30.0f / 16.0f;
    }
    ck.layers[0].wo = Matrix(c.q_dim(), 256);
    ck.layers[0].w_down = Matrix(4, 256);
    return ck;
}

// Bytes 0, 1, ..., 255, 0, 1, ...
inline Corpus cyclic_corpus(std::size_t n) {
    std::string text(n, '\0');
    for (std::size_t i = 0; i < n; ++i) text[i] = static_cast<char>(i % 256);
    return tokenize(text, "cyclic");
}

}  // namespace harp::test
