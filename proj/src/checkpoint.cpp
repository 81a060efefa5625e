#include "harp/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>

#include <json.hpp>

#include "harp/digest.hpp"
#include "harp/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written as native little-endian f32");

namespace harp {

namespace {

using nlohmann::json;

// Box-Muller on top of mt19937_64 so the stream is identical on every
// standard library (std::normal_distribution is implementation-defined).
class GaussianStream {
public:
    explicit GaussianStream(std::uint64_t seed) : engine_(seed) {}

    double next() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    void fill(Matrix& m, double stddev) {
        for (float& v : m.values()) v = static_cast<float>(next() * stddev);
    }

private:
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

struct TensorRef {
    std::string name;
    std::size_t rows;
    std::size_t cols;  // 0 for vectors
    const float* data;
    float* mut;
    std::size_t count() const { return cols == 0 ? rows : rows * cols; }
};

std::string layer_name(std::size_t l, const char* what) {
    return "layers." + std::to_string(l) + "." + what;
}

bool is_skipped(const std::vector<int>& skipped, std::size_t layer) {
    return std::find(skipped.begin(), skipped.end(), static_cast<int>(layer)) != skipped.end();
}

// Canonical tensor order. `ckpt` must already have correctly sized storage.
std::vector<TensorRef> tensor_table(Checkpoint& ckpt) {
    std::vector<TensorRef> t;
    auto add_m = [&](std::string name, Matrix& m) {
        t.push_back({std::move(name), m.rows(), m.cols(), m.data(), m.data()});
    };
    auto add_v = [&](std::string name, std::vector<float>& v) {
        t.push_back({std::move(name), v.size(), 0, v.data(), v.data()});
    };
    add_m("embedding", ckpt.embedding);
    for (std::size_t l = 0; l < ckpt.layers.size(); ++l) {
        auto& w = ckpt.layers[l];
        add_v(layer_name(l, "attn_norm"), w.attn_norm);
        if (!is_skipped(ckpt.attention_skipped, l)) {
            add_m(layer_name(l, "wq"), w.wq);
            add_m(layer_name(l, "wk"), w.wk);
        }
        add_m(layer_name(l, "wv"), w.wv);
        add_m(layer_name(l, "wo"), w.wo);
        add_v(layer_name(l, "ffn_norm"), w.ffn_norm);
        add_m(layer_name(l, "w_gate"), w.w_gate);
        add_m(layer_name(l, "w_up"), w.w_up);
        add_m(layer_name(l, "w_down"), w.w_down);
    }
    add_v("final_norm", ckpt.final_norm);
    if (!ckpt.tied_output) add_m("output", ckpt.output);
    return t;
}

// Allocates every tensor the config (plus strip markers) calls for.
void allocate(Checkpoint& ckpt) {
    const auto& c = ckpt.config;
    const std::size_t d = c.hidden_size, ff = c.ffn_size, qd = c.q_dim(), kvd = c.kv_dim(),
                      v = c.vocab_size;
    ckpt.embedding = Matrix(v, d);
    ckpt.layers.assign(static_cast<std::size_t>(c.num_layers), LayerWeights{});
    for (std::size_t l = 0; l < ckpt.layers.size(); ++l) {
        auto& w = ckpt.layers[l];
        if (!is_skipped(ckpt.attention_skipped, l)) {
            w.wq = Matrix(d, qd);
            w.wk = Matrix(d, kvd);
        }
        w.wv = Matrix(d, kvd);
        w.wo = Matrix(qd, d);
        w.w_gate = Matrix(d, ff);
        w.w_up = Matrix(d, ff);
        w.w_down = Matrix(ff, d);
        w.attn_norm.assign(d, 1.0f);
        w.ffn_norm.assign(d, 1.0f);
    }
    ckpt.final_norm.assign(d, 1.0f);
    ckpt.output = ckpt.tied_output ? Matrix() : Matrix(v, d);
}

void check_shape(const Matrix& m, std::size_t r, std::size_t c, const std::string& name) {
    if (m.rows() != r || m.cols() != c) {
        throw ContractError("tensor " + name + " has shape " + std::to_string(m.rows()) + "x" +
                            std::to_string(m.cols()) + ", expected " + std::to_string(r) + "x" +
                            std::to_string(c));
    }
    if (!m.all_finite()) throw ContractError("tensor " + name + " has non-finite entries");
}

void check_vector(const std::vector<float>& v, std::size_t n, const std::string& name) {
    if (v.size() != n) throw ContractError("tensor " + name + " has wrong length");
    for (float x : v) {
        if (!std::isfinite(x)) throw ContractError("tensor " + name + " has non-finite entries");
    }
}

std::uint64_t read_u64_le(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

}  // namespace

void Checkpoint::validate() const {
    config.validate();
    const std::size_t d = config.hidden_size, ff = config.ffn_size, qd = config.q_dim(),
                      kvd = config.kv_dim(), v = config.vocab_size;
    if (layers.size() != static_cast<std::size_t>(config.num_layers)) {
        throw ContractError("checkpoint has " + std::to_string(layers.size()) +
                            " layers, config says " + std::to_string(config.num_layers));
    }
    check_shape(embedding, v, d, "embedding");
    for (int s : attention_skipped) {
        if (s < 0 || s >= config.num_layers) throw ContractError("attention_skipped layer out of range");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& w = layers[l];
        if (is_skipped(attention_skipped, l)) {
            if (!w.qk_stripped()) throw ContractError(layer_name(l, "wq") + " present in stripped layer");
        } else {
            check_shape(w.wq, d, qd, layer_name(l, "wq"));
            check_shape(w.wk, d, kvd, layer_name(l, "wk"));
        }
        check_shape(w.wv, d, kvd, layer_name(l, "wv"));
        check_shape(w.wo, qd, d, layer_name(l, "wo"));
        check_shape(w.w_gate, d, ff, layer_name(l, "w_gate"));
        check_shape(w.w_up, d, ff, layer_name(l, "w_up"));
        check_shape(w.w_down, ff, d, layer_name(l, "w_down"));
        check_vector(w.attn_norm, d, layer_name(l, "attn_norm"));
        check_vector(w.ffn_norm, d, layer_name(l, "ffn_norm"));
    }
    check_vector(final_norm, d, "final_norm");
    if (!tied_output) check_shape(output, v, d, "output");
}

Checkpoint generate_model(const ModelConfig& config, std::uint64_t seed, bool tied_output) {
    config.validate();
    Checkpoint ckpt;
    ckpt.config = config;
    ckpt.tied_output = tied_output;
    ckpt.seed = seed;
    allocate(ckpt);

    constexpr double kStd = 0.02;
    const double residual_std = kStd / std::sqrt(2.0 * config.num_layers);
    GaussianStream rng(seed);
    rng.fill(ckpt.embedding, kStd);
    for (auto& w : ckpt.layers) {
        rng.fill(w.wq, kStd);
        rng.fill(w.wk, kStd);
        rng.fill(w.wv, kStd);
        rng.fill(w.wo, residual_std);
        rng.fill(w.w_gate, kStd);
        rng.fill(w.w_up, kStd);
        rng.fill(w.w_down, residual_std);
    }
    if (!tied_output) rng.fill(ckpt.output, kStd);
    return ckpt;
}

std::vector<std::uint8_t> serialize(const Checkpoint& in) {
    in.validate();
    auto& ckpt = const_cast<Checkpoint&>(in);  // tensor_table only reads through `data`
    const auto table = tensor_table(ckpt);

    json tensors = json::array();
    std::uint64_t offset = 0;
    for (const auto& t : table) {
        json shape = t.cols == 0 ? json::array({t.rows}) : json::array({t.rows, t.cols});
        tensors.push_back({{"name", t.name}, {"shape", shape}, {"offset", offset}, {"dtype", "f32"}});
        offset += t.count() * sizeof(float);
    }
    std::vector<int> skipped = in.attention_skipped;
    std::sort(skipped.begin(), skipped.end());
    json header = {{"format_version", in.format_version},
                   {"config", in.config},
                   {"seed", in.seed ? json(*in.seed) : json(nullptr)},
                   {"tied_output", in.tied_output},
                   {"attention_skipped", skipped},
                   {"payload_bytes", offset},
                   {"tensors", tensors}};
    const std::string h = header.dump();

    std::vector<std::uint8_t> out;
    out.reserve(16 + h.size() + offset);
    out.insert(out.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    std::uint64_t hlen = h.size();
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(hlen >> (8 * i)));
    out.insert(out.end(), h.begin(), h.end());
    for (const auto& t : table) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(t.data);
        out.insert(out.end(), p, p + t.count() * sizeof(float));
    }
    return out;
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
        throw CorruptionError("not a checkpoint: bad magic or file too short");
    }
    const std::uint64_t hlen = read_u64_le(bytes.data() + 8);
    if (hlen > bytes.size() - 16) throw CorruptionError("checkpoint header truncated");
    json header;
    try {
        header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
    } catch (const json::exception& e) {
        throw CorruptionError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }

    Checkpoint ckpt;
    try {
        ckpt.format_version = header.at("format_version").get<int>();
        if (ckpt.format_version != Checkpoint::kFormatVersion) {
            throw VersionError("checkpoint format_version " + std::to_string(ckpt.format_version) +
                               " is not supported (reader supports " +
                               std::to_string(Checkpoint::kFormatVersion) + ")");
        }
        ckpt.config = header.at("config").get<ModelConfig>();
        if (!header.at("seed").is_null()) ckpt.seed = header.at("seed").get<std::uint64_t>();
        ckpt.tied_output = header.at("tied_output").get<bool>();
        ckpt.attention_skipped = header.at("attention_skipped").get<std::vector<int>>();
    } catch (const json::exception& e) {
        throw CorruptionError(std::string("checkpoint header malformed: ") + e.what());
    }
    try {
        ckpt.config.validate();
    } catch (const ContractError& e) {
        throw CorruptionError(std::string("checkpoint header has invalid config: ") + e.what());
    }
    for (int s : ckpt.attention_skipped) {
        if (s < 0 || s >= ckpt.config.num_layers) {
            throw CorruptionError("attention_skipped layer out of range");
        }
    }
    allocate(ckpt);
    const auto expected = tensor_table(ckpt);

    const json& tensors = header.at("tensors");
    if (!tensors.is_array() || tensors.size() != expected.size()) {
        throw CorruptionError("checkpoint tensor table has " + std::to_string(tensors.size()) +
                              " entries, config requires " + std::to_string(expected.size()));
    }
    const std::size_t payload_begin = 16 + hlen;
    const std::size_t payload_size = bytes.size() - payload_begin;
    std::size_t required = 0;
    for (const auto& t : expected) required += t.count() * sizeof(float);
    if (payload_size != required) {
        throw CorruptionError("checkpoint payload is " + std::to_string(payload_size) +
                              " bytes, header requires " + std::to_string(required));
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
        const auto& want = expected[i];
        const json& entry = tensors[i];
        try {
            const auto name = entry.at("name").get<std::string>();
            const auto shape = entry.at("shape").get<std::vector<std::uint64_t>>();
            const auto offset = entry.at("offset").get<std::uint64_t>();
            const auto dtype = entry.at("dtype").get<std::string>();
            const std::vector<std::uint64_t> want_shape =
                want.cols == 0 ? std::vector<std::uint64_t>{want.rows}
                               : std::vector<std::uint64_t>{want.rows, want.cols};
            if (name != want.name) {
                throw CorruptionError("tensor " + std::to_string(i) + " is '" + name + "', expected '" +
                                      want.name + "'");
            }
            if (shape != want_shape || dtype != "f32") {
                throw CorruptionError("tensor " + name + " shape/dtype disagrees with config");
            }
            const std::size_t nbytes = want.count() * sizeof(float);
            if (offset > payload_size || nbytes > payload_size - offset) {
                throw CorruptionError("tensor " + name + " extends past the payload");
            }
            std::memcpy(want.mut, bytes.data() + payload_begin + offset, nbytes);
        } catch (const json::exception& e) {
            throw CorruptionError(std::string("checkpoint tensor entry malformed: ") + e.what());
        }
    }
    try {
        ckpt.validate();
    } catch (const ContractError& e) {
        throw CorruptionError(e.what());
    }
    return ckpt;
}

void save(const Checkpoint& ckpt, const std::string& path) {
    const auto bytes = serialize(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path);
}

Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

std::string content_hash(const Checkpoint& ckpt) { return sha256_hex(serialize(ckpt)); }

StripReport qk_reduction(const ModelConfig& config, bool tied_output, const PruneSpec& spec) {
    config.validate();
    spec.validate(config.num_layers);
    const auto count = count_parameters(config, tied_output);
    StripReport r;
    r.layers = spec.layers;
    r.total_parameters = count.total;
    r.removed_parameters = count.per_layer_qk * static_cast<std::uint64_t>(spec.count());
    return r;
}

StripResult strip(const Checkpoint& ckpt, const PruneSpec& spec) {
    spec.validate(ckpt.config.num_layers);
    StripResult result{ckpt, qk_reduction(ckpt.config, ckpt.tied_output, spec)};
    auto& out = result.checkpoint;
    for (int l : spec.layers) {
        out.layers[static_cast<std::size_t>(l)].wq = Matrix();
        out.layers[static_cast<std::size_t>(l)].wk = Matrix();
        if (!is_skipped(out.attention_skipped, static_cast<std::size_t>(l))) out.attention_skipped.push_back(l);
    }
    std::sort(out.attention_skipped.begin(), out.attention_skipped.end());
    return result;
}

}  // namespace harp
