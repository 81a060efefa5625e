#include "harp/benchmark.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <new>
#include <random>

#include <boost/math/distributions/students_t.hpp>

#include "harp/errors.hpp"
#include "harp/model.hpp"

namespace harp {

double t_critical_95(int dof) {
    if (dof < 1) throw ContractError("t_critical_95 needs at least one degree of freedom");
    boost::math::students_t dist(static_cast<double>(dof));
    return boost::math::quantile(dist, 0.975);
}

SampleStats summarize(std::span<const double> samples) {
    if (samples.size() < 2) throw ContractError("summarize needs at least 2 samples");
    SampleStats s;
    for (double x : samples) s.mean += x;
    s.mean /= static_cast<double>(samples.size());
    double ss = 0.0;
    for (double x : samples) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(samples.size() - 1));
    const int dof = static_cast<int>(samples.size()) - 1;
    s.ci95 = t_critical_95(dof) * s.stddev / std::sqrt(static_cast<double>(samples.size()));
    return s;
}

std::vector<std::int32_t> bench_tokens(std::size_t n, int vocab, std::uint64_t seed) {
    std::mt19937_64 engine(seed);
    std::vector<std::int32_t> out(n);
    for (auto& t : out) t = static_cast<std::int32_t>(engine() % static_cast<std::uint64_t>(vocab));
    return out;
}

std::vector<std::pair<int, double>> BenchResult::speedups() const {
    std::vector<std::pair<int, double>> out;
    for (const auto& p : points) {
        if (p.variant == "pruned" && !p.failed) out.emplace_back(p.seq_len, p.speedup);
    }
    return out;
}

namespace {

double time_forward(const Checkpoint& ckpt, std::span<const TokenId> tokens, const SkipPlan& plan) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = forward(ckpt, tokens, plan);
    const auto t1 = std::chrono::steady_clock::now();
    if (r.logits.empty()) throw NumericError("forward produced no logits");
    return std::chrono::duration<double>(t1 - t0).count();
}

BenchPoint failed_point(const std::string& label, int n, const char* variant, const std::string& why) {
    BenchPoint p;
    p.label = label;
    p.seq_len = n;
    p.variant = variant;
    p.failed = true;
    p.error = why;
    p.mean_s = p.std_s = p.ci95_s = p.speedup = std::numeric_limits<double>::quiet_NaN();
    return p;
}

}  // namespace

BenchResult run_bench(const Checkpoint& ckpt, const PruneSpec& spec, const AlphaSchedule& alphas,
                      const BenchOptions& opts) {
    if (opts.repeats < 3) throw ContractError("benchmark needs at least 3 repeats");
    if (opts.warmup < 0) throw ContractError("warmup must be non-negative");
    if (opts.seq_lengths.empty()) throw ContractError("no sequence lengths to benchmark");
    for (int n : opts.seq_lengths) {
        if (n < 1 || n > ckpt.config.max_seq_len) {
            throw ContractError("sequence length " + std::to_string(n) + " outside [1, max_seq_len]");
        }
    }
    const SkipPlan dense = dense_plan(ckpt.config.num_layers);
    const SkipPlan pruned = make_skip_plan(spec, alphas, ckpt.config.num_layers);

    BenchResult result;
    for (int n : opts.seq_lengths) {
        try {
            const auto tokens = bench_tokens(static_cast<std::size_t>(n), ckpt.config.vocab_size, opts.seed);
            for (int i = 0; i < opts.warmup; ++i) {
                time_forward(ckpt, tokens, dense);
                time_forward(ckpt, tokens, pruned);
            }
            std::vector<double> dense_s, pruned_s;
            for (int i = 0; i < opts.repeats; ++i) {
                dense_s.push_back(time_forward(ckpt, tokens, dense));
                pruned_s.push_back(time_forward(ckpt, tokens, pruned));
            }
            const auto ds = summarize(dense_s);
            const auto ps = summarize(pruned_s);
            result.points.push_back({opts.label, n, "dense", opts.repeats, ds.mean, ds.stddev, ds.ci95, 1.0, false, {}});
            result.points.push_back(
                {opts.label, n, "pruned", opts.repeats, ps.mean, ps.stddev, ps.ci95, ds.mean / ps.mean, false, {}});
        } catch (const std::bad_alloc&) {
            result.points.push_back(failed_point(opts.label, n, "dense", "out of memory"));
            result.points.push_back(failed_point(opts.label, n, "pruned", "out of memory"));
        } catch (const Error& e) {
            result.points.push_back(failed_point(opts.label, n, "dense", e.what()));
            result.points.push_back(failed_point(opts.label, n, "pruned", e.what()));
        }
    }
    return result;
}

namespace {

std::string fmt9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

std::string to_csv(const BenchResult& result) {
    std::string out = "label,N,variant,repeats,mean_s,std_s,ci95_s,speedup\n";
    for (const auto& p : result.points) {
        out += csv_field(p.label) + "," + std::to_string(p.seq_len) + "," + p.variant + "," +
               std::to_string(p.failed ? 0 : p.repeats) + "," + fmt9(p.mean_s) + "," + fmt9(p.std_s) + "," +
               fmt9(p.ci95_s) + "," + fmt9(p.speedup) + "\n";
    }
    return out;
}

std::string to_svg(const BenchResult& result) {
    constexpr double kW = 640, kH = 400, kLeft = 70, kRight = 20, kTop = 30, kBottom = 50;
    std::vector<const BenchPoint*> ok;
    for (const auto& p : result.points) {
        if (!p.failed) ok.push_back(&p);
    }
    double xmin = 1, xmax = 2, ymax = 1e-9;
    if (!ok.empty()) {
        xmin = xmax = std::log2(ok.front()->seq_len);
        for (const auto* p : ok) {
            xmin = std::min(xmin, std::log2(p->seq_len));
            xmax = std::max(xmax, std::log2(p->seq_len));
            ymax = std::max(ymax, p->mean_s + p->ci95_s);
        }
    }
    if (xmax == xmin) xmax = xmin + 1;
    ymax *= 1.1;
    auto px = [&](int n) { return kLeft + (std::log2(n) - xmin) / (xmax - xmin) * (kW - kLeft - kRight); };
    auto py = [&](double s) { return kH - kBottom - s / ymax * (kH - kTop - kBottom); };

    std::string svg = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt9(kW) + "\" height=\"" + fmt9(kH) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<line x1=\"" + fmt9(kLeft) + "\" y1=\"" + fmt9(kH - kBottom) + "\" x2=\"" + fmt9(kW - kRight) + "\" y2=\"" +
           fmt9(kH - kBottom) + "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + fmt9(kLeft) + "\" y1=\"" + fmt9(kTop) + "\" x2=\"" + fmt9(kLeft) + "\" y2=\"" +
           fmt9(kH - kBottom) + "\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + fmt9(kW / 2) + "\" y=\"" + fmt9(kH - 10) +
           "\" text-anchor=\"middle\" font-size=\"12\">sequence length N (log scale)</text>\n";
    svg += "<text x=\"15\" y=\"" + fmt9(kH / 2) + "\" font-size=\"12\" transform=\"rotate(-90 15 " + fmt9(kH / 2) +
           ")\" text-anchor=\"middle\">forward latency (s)</text>\n";
    svg += "<text x=\"" + fmt9(kLeft) + "\" y=\"" + fmt9(kTop - 10) + "\" font-size=\"10\">y max " + fmt9(ymax) +
           " s</text>\n";

    const std::pair<const char*, const char*> variants[] = {{"dense", "#1f77b4"}, {"pruned", "#d62728"}};
    int legend = 0;
    for (const auto& [name, color] : variants) {
        std::vector<const BenchPoint*> pts;
        for (const auto* p : ok) {
            if (p->variant == name) pts.push_back(p);
        }
        if (pts.empty()) continue;
        std::sort(pts.begin(), pts.end(), [](auto* a, auto* b) { return a->seq_len < b->seq_len; });
        std::string coords;
        for (const auto* p : pts) {
            if (!coords.empty()) coords += ' ';
            coords += fmt9(px(p->seq_len)) + "," + fmt9(py(p->mean_s));
        }
        svg += "<polyline class=\"" + std::string(name) + "\" fill=\"none\" stroke=\"" + color +
               "\" stroke-width=\"2\" points=\"" + coords + "\"/>\n";
        for (const auto* p : pts) {
            const std::string x = fmt9(px(p->seq_len));
            svg += "<line class=\"ci\" x1=\"" + x + "\" y1=\"" + fmt9(py(p->mean_s - p->ci95_s)) + "\" x2=\"" + x +
                   "\" y2=\"" + fmt9(py(p->mean_s + p->ci95_s)) + "\" stroke=\"" + color + "\"/>\n";
            if (legend == 0) {
                svg += "<text x=\"" + x + "\" y=\"" + fmt9(kH - kBottom + 15) +
                       "\" font-size=\"10\" text-anchor=\"middle\">" + std::to_string(p->seq_len) + "</text>\n";
            }
        }
        svg += "<text x=\"" + fmt9(kW - 150) + "\" y=\"" + fmt9(kTop + 15 * legend) + "\" font-size=\"12\" fill=\"" +
               color + "\">" + xml_escape(pts.front()->label) + " " + name + "</text>\n";
        ++legend;
    }
    svg += "</svg>\n";
    return svg;
}

std::vector<std::string> emit_report(const BenchResult& result, const std::string& out_dir) {
    if (result.points.empty()) throw ContractError("no benchmark results to report");
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    const auto csv_path = (fs::path(out_dir) / "bench.csv").string();
    const auto svg_path = (fs::path(out_dir) / "bench.svg").string();
    for (const auto& [path, body] : {std::pair{csv_path, to_csv(result)}, std::pair{svg_path, to_svg(result)}}) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + path);
        out << body;
        if (!out) throw IoError("failed writing " + path);
    }
    return {csv_path, svg_path};
}

}  // namespace harp
