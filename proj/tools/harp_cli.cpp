#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <omp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "harp/benchmark.hpp"
#include "harp/checkpoint.hpp"
#include "harp/corpus.hpp"
#include "harp/digest.hpp"
#include "harp/errors.hpp"
#include "harp/evaluation.hpp"
#include "harp/manifest.hpp"
#include "harp/pruning.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Bad flag values that CLI11 cannot see on its own.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string g17(double v) { return fmt("%.17g", v); }

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw harp::IoError("cannot write " + path.string());
    out << text;
    if (!out) throw harp::IoError("failed writing " + path.string());
}

void prepare_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw harp::IoError("cannot create output directory " + dir);
}

harp::Checkpoint load_checkpoint(const std::string& path, std::string& digest) {
    auto ckpt = harp::load(path);
    digest = harp::sha256_file(path);
    return ckpt;
}

harp::ModelConfig resolve_config(const std::string& name) {
    if (harp::is_preset(name)) return harp::preset_config(name);
    std::ifstream in(name);
    if (!in) throw harp::IoError("config is neither a preset nor a readable file: " + name);
    harp::ModelConfig c;
    try {
        c = json::parse(in).get<harp::ModelConfig>();
    } catch (const json::exception& e) {
        throw harp::InputError("bad config file " + name + ": " + e.what());
    }
    c.validate();
    return c;
}

std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> grid;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            grid.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError("bad --grid entry '" + item + "'");
        }
    }
    if (grid.empty()) throw UsageError("--grid is empty");
    return grid;
}

harp::Windowing windowing(int window, int stride) {
    if (window < 2 || stride < 1 || stride > window) {
        throw UsageError("need --window >= 2 and 1 <= --stride <= --window");
    }
    return {window, stride};
}

std::string ranks_table(const harp::LayerImportanceReport& report) {
    static const char* metrics[] = {"bi", "similarity", "hessian", "sim"};
    std::string out = "layer,bi_rank,similarity_rank,hessian_rank,sim_rank\n";
    std::vector<std::vector<int>> ranks;
    for (const char* m : metrics) ranks.push_back(report.ranks(m));
    for (std::size_t l = 0; l < report.records.size(); ++l) {
        out += std::to_string(l);
        for (const auto& r : ranks) out += "," + std::to_string(r[l]);
        out += '\n';
    }
    return out;
}

struct GenArgs {
    std::string config = "desk";
    std::uint64_t seed = 0;
    bool tied = false;
    std::string out;
};

int gen_model(const GenArgs& a) {
    const auto config = resolve_config(a.config);
    prepare_dir(a.out);
    const auto ckpt = harp::generate_model(config, a.seed, a.tied);
    const auto path = fs::path(a.out) / "model.ckpt";
    harp::save(ckpt, path.string());
    const auto count = harp::count_parameters(config, a.tied);
    const auto hash = harp::sha256_file(path.string());
    std::cout << "parameters " << count.total << "\n" << "sha256 " << hash << "\n";

    harp::RunManifest m;
    m.command = "gen-model";
    m.parameters = {{"config", a.config}, {"resolved_config", config}, {"seed", a.seed}, {"tied", a.tied}};
    m.timestamp = harp::utc_timestamp();
    m.outputs = {"model.ckpt"};
    harp::write_manifest(m, a.out);
    return 0;
}

struct MetricsArgs {
    std::string ckpt, corpus, out;
    int window = 128;
    std::size_t max_tokens = 0;
    double epsilon = 1e-2;
};

int metrics(const MetricsArgs& a) {
    std::string ckpt_digest;
    const auto ckpt = load_checkpoint(a.ckpt, ckpt_digest);
    const auto corpus = harp::truncate_corpus(harp::load_corpus(a.corpus), a.max_tokens);
    harp::ImportanceOptions opts;
    opts.windowing = windowing(a.window, a.window);
    opts.epsilon = a.epsilon;
    prepare_dir(a.out);

    const auto report = harp::layer_importance(ckpt, corpus, opts);
    write_text(fs::path(a.out) / "metrics.jsonl", harp::to_jsonl(report));
    const auto table = ranks_table(report);
    write_text(fs::path(a.out) / "ranks.csv", table);

    const std::size_t n = std::min<std::size_t>(corpus.size(), static_cast<std::size_t>(a.window));
    const std::span<const harp::TokenId> head(corpus.ids.data(), n);
    const auto diag = harp::layer_diagnostics(ckpt, head, harp::dense_plan(ckpt.config.num_layers));
    write_text(fs::path(a.out) / "diagnostics.jsonl", harp::to_jsonl(diag));
    std::cout << table;

    harp::RunManifest m;
    m.command = "metrics";
    m.parameters = {{"window", a.window}, {"max_tokens", a.max_tokens}, {"epsilon", a.epsilon}};
    m.input_digests = {{"checkpoint", ckpt_digest}, {"corpus", corpus.digest}};
    m.timestamp = harp::utc_timestamp();
    m.outputs = {"metrics.jsonl", "ranks.csv", "diagnostics.jsonl"};
    harp::write_manifest(m, a.out);
    return 0;
}

struct SearchArgs {
    std::string ckpt, corpus, out;
    int layers = 0;
    std::string strategy = "top_p";
    std::string grid;
    int window = 256;
    int stride = 256;
    std::size_t max_tokens = 0;
};

int search_alpha(const SearchArgs& a) {
    std::string ckpt_digest;
    const auto ckpt = load_checkpoint(a.ckpt, ckpt_digest);
    const auto corpus = harp::truncate_corpus(harp::load_corpus(a.corpus), a.max_tokens);
    const int num_layers = ckpt.config.num_layers;
    if (a.layers < 0 || a.layers > num_layers) {
        throw UsageError("--layers must lie in [0, " + std::to_string(num_layers) + "]");
    }
    harp::Strategy strategy;
    try {
        strategy = harp::parse_strategy(a.strategy);
    } catch (const harp::Error& e) {
        throw UsageError(e.what());
    }
    if (strategy == harp::Strategy::explicit_set) throw UsageError("--strategy explicit_set needs a layer list");

    harp::SearchOptions opts;
    if (!a.grid.empty()) opts.grid = parse_grid(a.grid);
    opts.windowing = windowing(a.window, a.stride);
    prepare_dir(a.out);

    harp::ImportanceOptions importance;
    importance.windowing = opts.windowing;
    const auto spec = harp::select_layers(strategy, a.layers, ckpt, &corpus, importance);
    const auto result = harp::search_alpha(ckpt, spec, corpus, opts);
    for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";

    harp::save_schedule(result.schedule, (fs::path(a.out) / "schedule.json").string());
    std::string trace = "layer,alpha,ppl\n";
    for (const auto& row : result.trace) {
        trace += std::to_string(row.layer) + "," + g17(row.alpha) + "," + g17(row.ppl) + "\n";
    }
    write_text(fs::path(a.out) / "trace.csv", trace);

    std::cout << "layers";
    for (int l : result.schedule.layer_indices) std::cout << " " << l;
    std::cout << "\nalphas";
    for (double v : result.schedule.alphas) std::cout << " " << fmt("%g", v);
    std::cout << "\nppl_before " << g17(result.ppl_all_ones) << "\nppl_after " << g17(result.ppl_final) << "\n";

    harp::RunManifest m;
    m.command = "search-alpha";
    m.parameters = {{"layers", a.layers},          {"strategy", a.strategy},  {"grid", opts.grid},
                    {"window", a.window},          {"stride", a.stride},      {"max_tokens", a.max_tokens},
                    {"ppl_before", result.ppl_all_ones}, {"ppl_after", result.ppl_final}};
    m.input_digests = {{"checkpoint", ckpt_digest}, {"corpus", corpus.digest}};
    m.timestamp = harp::utc_timestamp();
    m.outputs = {"schedule.json", "trace.csv"};
    harp::write_manifest(m, a.out);
    return 0;
}

struct EvalArgs {
    std::string ckpt, corpus, schedule, out;
    int window = 256;
    int stride = 256;
    std::size_t max_tokens = 0;
};

int eval(const EvalArgs& a) {
    std::string ckpt_digest;
    const auto ckpt = load_checkpoint(a.ckpt, ckpt_digest);
    const auto corpus = harp::truncate_corpus(harp::load_corpus(a.corpus), a.max_tokens);
    const auto win = windowing(a.window, a.stride);
    const int num_layers = ckpt.config.num_layers;
    harp::SkipPlan plan = harp::dense_plan(num_layers);
    std::map<std::string, std::string> digests = {{"checkpoint", ckpt_digest}, {"corpus", corpus.digest}};
    if (!a.schedule.empty()) {
        const auto sched = harp::load_schedule(a.schedule);
        plan = harp::make_skip_plan(sched.prune_spec(num_layers), sched, num_layers);
        digests["schedule"] = harp::sha256_file(a.schedule);
    }
    prepare_dir(a.out);
    const auto r = harp::perplexity(ckpt, plan, corpus, win);

    json out = {{"ppl", r.ppl},       {"mean_nll", r.mean_nll()}, {"token_count", r.token_count},
                {"window_size", r.window_size}, {"stride", r.stride}, {"windows", r.window_nll.size()}};
    write_text(fs::path(a.out) / "eval.json", out.dump(2) + "\n");
    std::cout << "ppl " << g17(r.ppl) << "\ntokens " << r.token_count << "\n";

    harp::RunManifest m;
    m.command = "eval";
    m.parameters = {{"window", a.window}, {"stride", a.stride}, {"max_tokens", a.max_tokens},
                    {"schedule", !a.schedule.empty()}};
    m.input_digests = digests;
    m.timestamp = harp::utc_timestamp();
    m.outputs = {"eval.json"};
    harp::write_manifest(m, a.out);
    return 0;
}

struct BenchArgs {
    std::string ckpt, schedule, out;
    int prune_top = -1;
    std::vector<int> lens = {256, 512, 1024, 2048};
    int repeats = 10;
    int warmup = 2;
    std::uint64_t seed = 1234;
    std::string label = "model";
};

int bench(const BenchArgs& a) {
    std::string ckpt_digest;
    const auto ckpt = load_checkpoint(a.ckpt, ckpt_digest);
    const int num_layers = ckpt.config.num_layers;
    if (a.schedule.empty() == (a.prune_top < 0)) throw UsageError("give exactly one of --schedule or --prune-top");
    harp::AlphaSchedule sched;
    if (!a.schedule.empty()) {
        sched = harp::load_schedule(a.schedule);
    } else {
        if (a.prune_top > num_layers) throw UsageError("--prune-top exceeds the layer count");
        sched = harp::AlphaSchedule::uniform(harp::PruneSpec::top(a.prune_top, num_layers), 1.0);
    }
    if (a.repeats < 3) throw UsageError("--repeats must be at least 3");
    prepare_dir(a.out);

    harp::BenchOptions opts;
    opts.seq_lengths = a.lens;
    opts.repeats = a.repeats;
    opts.warmup = a.warmup;
    opts.seed = a.seed;
    opts.label = a.label;
    const auto result = harp::run_bench(ckpt, sched.prune_spec(num_layers), sched, opts);
    harp::emit_report(result, a.out);
    for (const auto& [n, s] : result.speedups()) std::cout << "N " << n << " speedup " << fmt("%.4f", s) << "\n";
    for (const auto& p : result.points) {
        if (p.failed) std::cerr << "warning: N=" << p.seq_len << " " << p.variant << " failed: " << p.error << "\n";
    }

    harp::RunManifest m;
    m.command = "bench";
    m.parameters = {{"lens", a.lens},   {"repeats", a.repeats}, {"warmup", a.warmup},
                    {"seed", a.seed},   {"label", a.label},     {"layers", sched.layer_indices},
                    {"alphas", sched.alphas}};
    m.input_digests = {{"checkpoint", ckpt_digest}};
    m.timestamp = harp::utc_timestamp();
    m.outputs = {"bench.csv", "bench.svg"};
    harp::write_manifest(m, a.out);
    return 0;
}

struct PruneArgs {
    std::string ckpt, schedule, out;
};

int prune(const PruneArgs& a) {
    std::string ckpt_digest;
    const auto ckpt = load_checkpoint(a.ckpt, ckpt_digest);
    const auto sched = harp::load_schedule(a.schedule);
    const auto spec = sched.prune_spec(ckpt.config.num_layers);
    prepare_dir(a.out);
    const auto stripped = harp::strip(ckpt, spec);
    harp::save(stripped.checkpoint, (fs::path(a.out) / "model.ckpt").string());
    harp::save_schedule(sched, (fs::path(a.out) / "schedule.json").string());

    const auto& r = stripped.report;
    json report = {{"layers", r.layers},
                   {"total_parameters", r.total_parameters},
                   {"removed_parameters", r.removed_parameters},
                   {"remaining_parameters", r.total_parameters - r.removed_parameters},
                   {"ratio", r.ratio()}};
    write_text(fs::path(a.out) / "prune_report.json", report.dump(2) + "\n");
    std::cout << "removed " << r.removed_parameters << " of " << r.total_parameters << " parameters ("
              << fmt("%.4f", 100.0 * r.ratio()) << "%)\n";

    harp::RunManifest m;
    m.command = "prune";
    m.parameters = {{"layers", sched.layer_indices}, {"alphas", sched.alphas}};
    m.input_digests = {{"checkpoint", ckpt_digest}, {"schedule", harp::sha256_file(a.schedule)}};
    m.timestamp = harp::utc_timestamp();
    m.outputs = {"model.ckpt", "schedule.json", "prune_report.json"};
    harp::write_manifest(m, a.out);
    return 0;
}

void apply_thread_cap() {
    const char* env = std::getenv("HARP_THREADS");
    if (!env || !*env) return;
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (*end != '\0' || n < 1) throw UsageError(std::string("HARP_THREADS must be a positive integer, got ") + env);
    omp_set_num_threads(static_cast<int>(n));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Attention-skipping pruning toolkit for small GQA transformers"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-model", "Write a seeded random checkpoint");
    gen_cmd->add_option("--config", gen.config, "Preset name (tiny, desk) or JSON config file")->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed, "Initialization seed")->capture_default_str();
    gen_cmd->add_flag("--tied", gen.tied, "Tie the output projection to the embedding");
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();

    MetricsArgs met;
    auto* met_cmd = app.add_subcommand("metrics", "Per-layer importance metrics and diagnostics");
    met_cmd->add_option("--ckpt", met.ckpt)->required();
    met_cmd->add_option("--corpus", met.corpus)->required();
    met_cmd->add_option("--out", met.out)->required();
    met_cmd->add_option("--window", met.window)->capture_default_str();
    met_cmd->add_option("--max-tokens", met.max_tokens, "Truncate the corpus (0 keeps all)")->capture_default_str();
    met_cmd->add_option("--epsilon", met.epsilon, "Finite-difference step")->capture_default_str();

    SearchArgs sea;
    auto* sea_cmd = app.add_subcommand("search-alpha", "Greedy top-down alpha search");
    sea_cmd->add_option("--ckpt", sea.ckpt)->required();
    sea_cmd->add_option("--corpus", sea.corpus)->required();
    sea_cmd->add_option("--out", sea.out)->required();
    sea_cmd->add_option("--layers", sea.layers, "Number of layers to prune")->required();
    sea_cmd->add_option("--strategy", sea.strategy, "top_p, bottom_p, hessian or similarity")->capture_default_str();
    sea_cmd->add_option("--grid", sea.grid, "Comma-separated alpha values (default 0.0..1.0 step 0.1)");
    sea_cmd->add_option("--window", sea.window)->capture_default_str();
    sea_cmd->add_option("--stride", sea.stride)->capture_default_str();
    sea_cmd->add_option("--max-tokens", sea.max_tokens)->capture_default_str();

    EvalArgs ev;
    auto* ev_cmd = app.add_subcommand("eval", "Sliding-window perplexity");
    ev_cmd->add_option("--ckpt", ev.ckpt)->required();
    ev_cmd->add_option("--corpus", ev.corpus)->required();
    ev_cmd->add_option("--out", ev.out)->required();
    ev_cmd->add_option("--schedule", ev.schedule, "Alpha schedule; the model runs dense without one");
    ev_cmd->add_option("--window", ev.window)->capture_default_str();
    ev_cmd->add_option("--stride", ev.stride)->capture_default_str();
    ev_cmd->add_option("--max-tokens", ev.max_tokens)->capture_default_str();

    BenchArgs be;
    auto* be_cmd = app.add_subcommand("bench", "Dense versus pruned forward latency");
    be_cmd->add_option("--ckpt", be.ckpt)->required();
    be_cmd->add_option("--out", be.out)->required();
    be_cmd->add_option("--schedule", be.schedule);
    be_cmd->add_option("--prune-top", be.prune_top, "Prune the top P layers at alpha 1");
    be_cmd->add_option("--lens", be.lens, "Sequence lengths")->delimiter(',')->capture_default_str();
    be_cmd->add_option("--repeats", be.repeats)->capture_default_str();
    be_cmd->add_option("--warmup", be.warmup)->capture_default_str();
    be_cmd->add_option("--seed", be.seed)->capture_default_str();
    be_cmd->add_option("--label", be.label)->capture_default_str();

    PruneArgs pr;
    auto* pr_cmd = app.add_subcommand("prune", "Strip W_Q/W_K from the scheduled layers");
    pr_cmd->add_option("--ckpt", pr.ckpt)->required();
    pr_cmd->add_option("--schedule", pr.schedule)->required();
    pr_cmd->add_option("--out", pr.out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        apply_thread_cap();
        if (*gen_cmd) return gen_model(gen);
        if (*met_cmd) return metrics(met);
        if (*sea_cmd) return search_alpha(sea);
        if (*ev_cmd) return eval(ev);
        if (*be_cmd) return bench(be);
        if (*pr_cmd) return prune(pr);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
