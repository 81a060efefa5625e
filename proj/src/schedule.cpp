#include "harp/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "harp/errors.hpp"

namespace harp {

std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::top_p: return "top_p";
        case Strategy::bottom_p: return "bottom_p";
        case Strategy::hessian: return "hessian";
        case Strategy::similarity: return "similarity";
        case Strategy::explicit_set: return "explicit";
    }
    return "explicit";
}

Strategy parse_strategy(std::string_view name) {
    if (name == "top_p" || name == "top") return Strategy::top_p;
    if (name == "bottom_p" || name == "bottom") return Strategy::bottom_p;
    if (name == "hessian") return Strategy::hessian;
    if (name == "similarity") return Strategy::similarity;
    if (name == "explicit") return Strategy::explicit_set;
    throw ContractError("unknown strategy '" + std::string(name) + "'");
}

bool PruneSpec::contains(int layer) const {
    return std::binary_search(layers.begin(), layers.end(), layer);
}

void PruneSpec::validate(int num_layers) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i] < 0 || layers[i] >= num_layers) {
            throw ContractError("prune spec: layer " + std::to_string(layers[i]) +
                                " out of range [0, " + std::to_string(num_layers) + ")");
        }
        if (i > 0 && layers[i] <= layers[i - 1]) {
            throw ContractError("prune spec: layers must be sorted and unique");
        }
    }
    const int p = count();
    if (strategy == Strategy::top_p) {
        for (int i = 0; i < p; ++i) {
            if (layers[i] != num_layers - p + i) throw ContractError("prune spec: top_p must be the highest layers");
        }
    } else if (strategy == Strategy::bottom_p) {
        for (int i = 0; i < p; ++i) {
            if (layers[i] != i) throw ContractError("prune spec: bottom_p must be the lowest layers");
        }
    }
}

PruneSpec PruneSpec::top(int count, int num_layers) {
    if (count < 0 || count > num_layers) {
        throw ContractError("cannot prune " + std::to_string(count) + " of " +
                            std::to_string(num_layers) + " layers");
    }
    PruneSpec s;
    s.strategy = Strategy::top_p;
    for (int l = num_layers - count; l < num_layers; ++l) s.layers.push_back(l);
    return s;
}

PruneSpec PruneSpec::bottom(int count, int num_layers) {
    if (count < 0 || count > num_layers) {
        throw ContractError("cannot prune " + std::to_string(count) + " of " +
                            std::to_string(num_layers) + " layers");
    }
    PruneSpec s;
    s.strategy = Strategy::bottom_p;
    for (int l = 0; l < count; ++l) s.layers.push_back(l);
    return s;
}

PruneSpec PruneSpec::from_layers(std::vector<int> layers, int num_layers) {
    std::sort(layers.begin(), layers.end());
    PruneSpec s;
    s.layers = std::move(layers);
    s.strategy = Strategy::explicit_set;
    s.validate(num_layers);
    return s;
}

std::vector<double> default_alpha_grid() {
    std::vector<double> g;
    for (int i = 0; i <= 10; ++i) g.push_back(i / 10.0);
    return g;
}

AlphaSchedule AlphaSchedule::uniform(const PruneSpec& spec, double alpha) {
    AlphaSchedule s;
    s.layer_indices.assign(spec.layers.rbegin(), spec.layers.rend());
    s.alphas.assign(spec.layers.size(), alpha);
    if (std::find(s.grid.begin(), s.grid.end(), alpha) == s.grid.end()) s.grid = {alpha};
    return s;
}

PruneSpec AlphaSchedule::prune_spec(int num_layers) const {
    auto spec = PruneSpec::from_layers(layer_indices, num_layers);
    const int p = spec.count();
    bool top = true;
    for (int i = 0; i < p; ++i) top = top && spec.layers[i] == num_layers - p + i;
    if (top) spec.strategy = Strategy::top_p;
    return spec;
}

double AlphaSchedule::alpha_for(int layer) const {
    for (std::size_t i = 0; i < layer_indices.size(); ++i) {
        if (layer_indices[i] == layer) return alphas[i];
    }
    throw ContractError("schedule has no alpha for layer " + std::to_string(layer));
}

void AlphaSchedule::validate() const {
    if (alphas.size() != layer_indices.size()) {
        throw ContractError("schedule: " + std::to_string(alphas.size()) + " alphas for " +
                            std::to_string(layer_indices.size()) + " layers");
    }
    for (std::size_t i = 1; i < layer_indices.size(); ++i) {
        if (layer_indices[i] >= layer_indices[i - 1]) {
            throw ContractError("schedule: layer indices must be strictly descending");
        }
    }
    for (double a : alphas) {
        if (!std::isfinite(a)) throw ContractError("schedule: alpha is not finite");
        if (std::find(grid.begin(), grid.end(), a) == grid.end()) {
            throw ContractError("schedule: alpha " + std::to_string(a) + " is not a grid value");
        }
    }
}

nlohmann::json to_json(const AlphaSchedule& s) {
    return nlohmann::json{{"format_version", AlphaSchedule::kFormatVersion},
                          {"layer_indices", s.layer_indices},
                          {"alphas", s.alphas},
                          {"grid", s.grid},
                          {"corpus_digest", s.corpus_digest},
                          {"checkpoint_digest", s.checkpoint_digest}};
}

AlphaSchedule schedule_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("format_version") || !j["format_version"].is_number_integer()) {
        throw InputError("schedule has no integer format_version");
    }
    const int version = j["format_version"].get<int>();
    if (version != AlphaSchedule::kFormatVersion) {
        throw VersionError("schedule format_version " + std::to_string(version) +
                           " unsupported (expected " +
                           std::to_string(AlphaSchedule::kFormatVersion) + ")");
    }
    AlphaSchedule s;
    try {
        j.at("layer_indices").get_to(s.layer_indices);
        j.at("alphas").get_to(s.alphas);
        j.at("grid").get_to(s.grid);
        s.corpus_digest = j.value("corpus_digest", "");
        s.checkpoint_digest = j.value("checkpoint_digest", "");
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("schedule is malformed: ") + e.what());
    }
    s.validate();
    return s;
}

void save_schedule(const AlphaSchedule& s, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write schedule to " + path);
    out << to_json(s).dump(2) << '\n';
    if (!out) throw IoError("failed writing " + path);
}

AlphaSchedule load_schedule(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read schedule " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError("schedule " + path + " is not valid JSON: " + e.what());
    }
    return schedule_from_json(j);
}

SkipPlan dense_plan(int num_layers) { return SkipPlan(static_cast<std::size_t>(num_layers)); }

SkipPlan make_skip_plan(const PruneSpec& spec, const AlphaSchedule& schedule, int num_layers) {
    spec.validate(num_layers);
    if (schedule.alphas.size() != schedule.layer_indices.size()) {
        throw ContractError("schedule: alpha count does not match layer count");
    }
    std::vector<int> covered(schedule.layer_indices.begin(), schedule.layer_indices.end());
    std::sort(covered.begin(), covered.end());
    if (covered != spec.layers) {
        throw ContractError("alpha schedule does not cover exactly the pruned layers");
    }
    SkipPlan plan = dense_plan(num_layers);
    for (std::size_t i = 0; i < schedule.layer_indices.size(); ++i) {
        if (!std::isfinite(schedule.alphas[i])) throw ContractError("alpha is not finite");
        plan[static_cast<std::size_t>(schedule.layer_indices[i])] = static_cast<float>(schedule.alphas[i]);
    }
    return plan;
}

}  // namespace harp
