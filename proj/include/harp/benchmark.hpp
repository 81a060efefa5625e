#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "harp/checkpoint.hpp"
#include "harp/schedule.hpp"

namespace harp {

struct BenchOptions {
    std::vector<int> seq_lengths;
    int repeats = 10;
    int warmup = 2;
    std::uint64_t seed = 1234;
    std::string label = "model";
};

struct BenchPoint {
    std::string label;
    int seq_len = 0;
    std::string variant;  // "dense" or "pruned"
    int repeats = 0;
    double mean_s = 0.0;
    double std_s = 0.0;
    double ci95_s = 0.0;
    double speedup = 1.0;  // dense_mean / pruned_mean on pruned rows
    bool failed = false;
    std::string error;
};

struct BenchResult {
    std::vector<BenchPoint> points;

    /// dense/pruned speedup per sequence length, in seq_lengths order;
    /// failed points are skipped.
    std::vector<std::pair<int, double>> speedups() const;
};

struct SampleStats {
    double mean = 0.0;
    double stddev = 0.0;  // sample (n-1) standard deviation
    double ci95 = 0.0;    // t-distribution half-width
};

/// Two-sided 95% Student-t critical value.
double t_critical_95(int degrees_of_freedom);
SampleStats summarize(std::span<const double> samples);

/// Deterministic uniform token ids in [0, vocab).
std::vector<std::int32_t> bench_tokens(std::size_t n, int vocab, std::uint64_t seed);

/// Times forward passes of the dense model and of the model with `spec`
/// pruned at `alphas`. Timed region is the forward pass only; dense and
/// pruned repeats are interleaved on identical inputs.
BenchResult run_bench(const Checkpoint& ckpt, const PruneSpec& spec, const AlphaSchedule& alphas,
                      const BenchOptions& opts);

std::string to_csv(const BenchResult& result);
std::string to_svg(const BenchResult& result);

/// Writes bench.csv and bench.svg into `out_dir`; returns the paths.
std::vector<std::string> emit_report(const BenchResult& result, const std::string& out_dir);

}  // namespace harp
