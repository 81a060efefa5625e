#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace harp {

enum class Strategy { top_p, bottom_p, hessian, similarity, explicit_set };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view name);

/// Layers whose self-attention is skipped.
struct PruneSpec {
    std::vector<int> layers;  // sorted ascending, unique
    Strategy strategy = Strategy::explicit_set;

    int count() const { return static_cast<int>(layers.size()); }
    bool contains(int layer) const;

    /// Checks uniqueness, range, ordering and the top_p/bottom_p shape.
    void validate(int num_layers) const;

    static PruneSpec top(int count, int num_layers);
    static PruneSpec bottom(int count, int num_layers);
    static PruneSpec from_layers(std::vector<int> layers, int num_layers);

    friend bool operator==(const PruneSpec&, const PruneSpec&) = default;
};

/// {0.0, 0.1, ..., 1.0}
std::vector<double> default_alpha_grid();

/// Per-pruned-layer rescaling factors. Entry i belongs to the i-th highest
/// pruned layer, so for a top_p spec index i is layer L-1-i.
struct AlphaSchedule {
    static constexpr int kFormatVersion = 1;

    std::vector<int> layer_indices;  // descending
    std::vector<double> alphas;
    std::vector<double> grid = default_alpha_grid();
    std::string corpus_digest;
    std::string checkpoint_digest;

    static AlphaSchedule uniform(const PruneSpec& spec, double alpha);

    PruneSpec prune_spec(int num_layers) const;
    double alpha_for(int layer) const;

    /// Lengths match, every alpha is finite and drawn from the grid.
    void validate() const;

    friend bool operator==(const AlphaSchedule&, const AlphaSchedule&) = default;
};

nlohmann::json to_json(const AlphaSchedule& s);
AlphaSchedule schedule_from_json(const nlohmann::json& j);
void save_schedule(const AlphaSchedule& s, const std::string& path);
AlphaSchedule load_schedule(const std::string& path);

/// Per-layer alpha when that layer's attention is skipped, empty otherwise.
using SkipPlan = std::vector<std::optional<float>>;

/// Throws ContractError unless `schedule` covers exactly the layers of `spec`.
SkipPlan make_skip_plan(const PruneSpec& spec, const AlphaSchedule& schedule, int num_layers);
SkipPlan dense_plan(int num_layers);

}  // namespace harp
