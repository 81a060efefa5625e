#include <doctest.h>

#include <cstring>
#include <filesystem>

#include <json.hpp>

#include "harp/checkpoint.hpp"
#include "harp/digest.hpp"
#include "harp/errors.hpp"
#include "support.hpp"

using namespace harp;
using namespace harp::test;

namespace {

struct Parts {
    nlohmann::json header;
    std::vector<std::uint8_t> payload;
};

Parts split(const std::vector<std::uint8_t>& bytes) {
    std::uint64_t len = 0;
    for (int i = 7; i >= 0; --i) len = (len << 8) | bytes[8 + i];
    Parts p;
    p.header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
    p.payload.assign(bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len), bytes.end());
    return p;
}

std::vector<std::uint8_t> join(const Parts& p) {
    const std::string h = p.header.dump();
    std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(h.size() >> (8 * i)));
    out.insert(out.end(), h.begin(), h.end());
    out.insert(out.end(), p.payload.begin(), p.payload.end());
    return out;
}

float payload_float(const std::vector<std::uint8_t>& payload, std::size_t index) {
    std::uint32_t bits = 0;
    for (int i = 3; i >= 0; --i) bits = (bits << 8) | payload[index * 4 + static_cast<std::size_t>(i)];
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("generation is deterministic in the seed") {
    const auto c = preset_config("tiny");
    CHECK(content_hash(generate_model(c, 1)) == content_hash(generate_model(c, 1)));
    CHECK(content_hash(generate_model(c, 1)) != content_hash(generate_model(c, 2)));
}

TEST_CASE("generated weights follow the initialization recipe") {
    const auto c = preset_config("desk");
    const auto ck = generate_model(c, 3);
    auto stddev = [](const Matrix& m) {
        double s = 0.0, ss = 0.0;
        for (float v : m.values()) {
            s += v;
            ss += static_cast<double>(v) * v;
        }
        const double n = static_cast<double>(m.size());
        return std::sqrt(ss / n - (s / n) * (s / n));
    };
    CHECK(stddev(ck.embedding) == doctest::Approx(0.02).epsilon(0.02));
    CHECK(stddev(ck.layers[0].wq) == doctest::Approx(0.02).epsilon(0.02));
    const double residual = 0.02 / std::sqrt(2.0 * c.num_layers);
    CHECK(stddev(ck.layers[0].wo) == doctest::Approx(residual).epsilon(0.02));
    CHECK(stddev(ck.layers[7].w_down) == doctest::Approx(residual).epsilon(0.02));
    for (float g : ck.layers[0].attn_norm) CHECK(g == 1.0f);
    CHECK(ck.seed == std::optional<std::uint64_t>{3});
}

TEST_CASE("tiny preset file size follows from shape arithmetic") {
    const auto c = preset_config("tiny");
    const auto bytes = serialize(generate_model(c, 4));
    const auto params = count_parameters(c, false).total;
    const auto header = split(bytes).header.dump().size();
    CHECK(bytes.size() == 16 + header + 4 * params);
    CHECK(bytes.size() > 1'000'000);
    CHECK(bytes.size() < 2'000'000);
}

TEST_CASE("payload is little-endian f32 at the recorded offsets") {
    const auto ck = generate_model(preset_config("tiny"), 5);
    const auto parts = split(serialize(ck));
    for (const auto& t : parts.header["tensors"]) {
        CHECK(t["dtype"] == "f32");
        if (t["name"] == "layers.2.wv") {
            const std::size_t base = t["offset"].get<std::size_t>() / 4;
            CHECK(payload_float(parts.payload, base) == ck.layers[2].wv(0, 0));
            CHECK(payload_float(parts.payload, base + 17) == ck.layers[2].wv.values()[17]);
        }
    }
}

TEST_CASE("save, load and save again give identical bytes") {
    const auto dir = scratch_dir("ckpt_roundtrip");
    for (bool tied : {false, true}) {
        const auto ck = generate_model(preset_config("tiny"), 6, tied);
        const auto a = (dir / "a.ckpt").string(), b = (dir / "b.ckpt").string();
        save(ck, a);
        const auto loaded = load(a);
        CHECK(loaded == ck);
        save(loaded, b);
        CHECK(sha256_file(a) == sha256_file(b));
    }
}

TEST_CASE("truncated files are corruption errors") {
    const auto bytes = serialize(generate_model(preset_config("tiny"), 7));
    for (std::size_t cut : {std::size_t{1}, std::size_t{4}, bytes.size() - 10, bytes.size() - 20}) {
        const std::vector<std::uint8_t> shorter(bytes.begin(), bytes.end() - static_cast<std::ptrdiff_t>(cut));
        CHECK_THROWS_AS(deserialize(shorter), CorruptionError);
    }
    CHECK_THROWS_AS(deserialize(std::vector<std::uint8_t>(5, 0)), CorruptionError);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(deserialize(bad_magic), CorruptionError);
}

TEST_CASE("header declaring more layers than the payload holds is corruption") {
    auto c = preset_config("tiny");
    c.num_layers = 3;
    auto parts = split(serialize(generate_model(c, 8)));
    parts.header["config"]["num_layers"] = 4;
    CHECK_THROWS_AS(deserialize(join(parts)), CorruptionError);
}

TEST_CASE("tensor table disagreeing with the config is corruption") {
    auto parts = split(serialize(generate_model(preset_config("tiny"), 9)));
    auto renamed = parts;
    renamed.header["tensors"][3]["name"] = "layers.0.bogus";
    CHECK_THROWS_AS(deserialize(join(renamed)), CorruptionError);
    auto reshaped = parts;
    reshaped.header["tensors"][0]["shape"] = {128, 128};
    CHECK_THROWS_AS(deserialize(join(reshaped)), CorruptionError);
}

TEST_CASE("unsupported format versions are refused with both versions named") {
    auto parts = split(serialize(generate_model(preset_config("tiny"), 10)));
    parts.header["format_version"] = 99;
    try {
        deserialize(join(parts));
        FAIL("expected a version error");
    } catch (const VersionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("99") != std::string::npos);
        CHECK(msg.find("1") != std::string::npos);
    }
}

TEST_CASE("missing files are I/O errors") {
    CHECK_THROWS_AS(load("/nonexistent/model.ckpt"), IoError);
}

TEST_CASE("invalid configs are refused by the generator") {
    auto c = preset_config("tiny");
    c.num_query_heads = 3;
    CHECK_THROWS_AS(generate_model(c, 1), ContractError);
}

TEST_CASE("strip removes exactly the pruned W_Q and W_K") {
    const auto c = preset_config("tiny");
    const auto ck = generate_model(c, 11);
    const auto spec = PruneSpec::top(2, 4);
    const auto r = strip(ck, spec);
    CHECK(r.checkpoint.attention_skipped == std::vector<int>{2, 3});
    CHECK(r.checkpoint.layers[3].qk_stripped());
    CHECK_FALSE(r.checkpoint.layers[1].qk_stripped());

    const std::uint64_t d = 64, kv = 16;
    CHECK(r.report.removed_parameters == 2 * (d * d + d * kv));
    CHECK(r.report.total_parameters == count_parameters(c, false).total);
    const auto reduced = qk_reduction(c, false, spec);
    CHECK(reduced.removed_parameters == r.report.removed_parameters);

    // Retained tensors keep their bytes.
    const auto before = split(serialize(ck)), after = split(serialize(r.checkpoint));
    std::map<std::string, std::vector<std::uint8_t>> old_bytes;
    auto tensor_bytes = [](const Parts& p, const nlohmann::json& t) {
        std::size_t n = 1;
        for (auto s : t["shape"]) n *= s.get<std::size_t>();
        const auto off = t["offset"].get<std::size_t>();
        return std::vector<std::uint8_t>(p.payload.begin() + static_cast<std::ptrdiff_t>(off),
                                         p.payload.begin() + static_cast<std::ptrdiff_t>(off + 4 * n));
    };
    for (const auto& t : before.header["tensors"]) old_bytes[t["name"]] = tensor_bytes(before, t);
    std::size_t kept = 0;
    for (const auto& t : after.header["tensors"]) {
        CHECK(tensor_bytes(after, t) == old_bytes.at(t["name"]));
        ++kept;
    }
    CHECK(kept == old_bytes.size() - 4);
    CHECK(after.payload.size() == before.payload.size() - 4 * r.report.removed_parameters);
}

TEST_CASE("stripping nothing leaves the checkpoint unchanged") {
    const auto ck = generate_model(preset_config("tiny"), 12);
    const auto r = strip(ck, PruneSpec{});
    CHECK(serialize(r.checkpoint) == serialize(ck));
    CHECK(r.report.removed_parameters == 0);
}

TEST_CASE("stripped and unstripped checkpoints give identical forward passes") {
    const auto ck = generate_model(preset_config("tiny"), 13);
    const auto spec = PruneSpec::top(3, 4);
    const auto sched = AlphaSchedule::uniform(spec, 0.4);
    const auto stripped = strip(ck, spec).checkpoint;
    const auto tokens = random_tokens(40, 256, 14);
    CHECK(forward(ck, tokens, spec, sched).logits == forward(stripped, tokens, spec, sched).logits);

    const auto dir = scratch_dir("ckpt_strip");
    save(stripped, (dir / "s.ckpt").string());
    CHECK(load((dir / "s.ckpt").string()) == stripped);
}

TEST_CASE("strip rejects out-of-range layers") {
    const auto ck = generate_model(preset_config("tiny"), 15);
    PruneSpec bad;
    bad.layers = {5};
    CHECK_THROWS_AS(strip(ck, bad), ContractError);
}

TEST_CASE("top-8 of a 32-layer configuration strips layers 24 to 31") {
    const auto c = preset_config("llama3.1-8b");
    const auto r = qk_reduction(c, false, PruneSpec::top(8, 32));
    CHECK(r.layers == std::vector<int>{24, 25, 26, 27, 28, 29, 30, 31});
    const std::uint64_t d = 4096, kv = 1024;
    CHECK(r.removed_parameters == 8 * (d * d + d * kv));
}

}
