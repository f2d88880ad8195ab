#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "whatif/bundle.hpp"
#include "whatif/series.hpp"

namespace whatif {

/// Shape and alphabet of the genome for one bundle and horizon.
struct PolicySpace {
    std::size_t variables = 0;
    std::size_t steps = 0;
    std::vector<double> levels;
    std::vector<bool> actionable;
    std::uint8_t median_index = 0;

    std::size_t genes() const { return variables * steps; }
    std::size_t actionable_genes() const;
};

PolicySpace make_policy_space(const ModelBundle& bundle, std::size_t steps);

/// V×N grid of indices into the quantile alphabet, stored variable-major
/// (gene (v, n) at v·N + n).
struct InterventionPolicy {
    std::size_t variables = 0;
    std::size_t steps = 0;
    std::vector<std::uint8_t> genes;

    std::uint8_t at(std::size_t v, std::size_t n) const { return genes[v * steps + n]; }
    std::uint8_t& at(std::size_t v, std::size_t n) { return genes[v * steps + n]; }
    bool operator==(const InterventionPolicy&) const = default;
};

InterventionPolicy median_policy(const PolicySpace& space);

/// Throws ConfigError on a dimension mismatch, an index outside the
/// alphabet, or a non-actionable gene away from the median.
void validate_policy(const PolicySpace& space, const InterventionPolicy& policy);

struct GoalSpec {
    double goal_value = 0.0;
    double epsilon_rel = 0.05;
    std::size_t horizon_steps = 10;

    double horizon_seconds(double delta_seconds) const { return static_cast<double>(horizon_steps) * delta_seconds; }
    void validate() const;
};

struct ScenarioProjection {
    Eigen::MatrixXd paths; ///< V×N
    Eigen::VectorXd target_path;
    double terminal = 0.0;
    double likelihood = 1.0;
};

struct ObjectiveValues {
    double o1 = 0.0;
    double o1_rel = 0.0;
    double o2 = 0.0;
    double o3 = 0.0;
    double fitness = 0.0;
};

struct FitnessWeights {
    double w1 = 1.0;
    double w2 = 0.1;
    double w3 = 0.1;

    void validate() const;
};

/// Relative distances use max(|goal|, 1e-9) as the scale.
double goal_scale(double goal_value);

double objective_o1(double terminal, const GoalSpec& goal);
double objective_o1_rel(double terminal, const GoalSpec& goal);

/// 1 − cos(reference, projection), clamped to [0, 2]. Throws DataError on a
/// zero-norm operand and ConfigError on a length mismatch.
double objective_o2(std::span<const double> reference, std::span<const double> projection);

double gene_plausibility(double tau);
double objective_o3(const PolicySpace& space, const InterventionPolicy& policy);
double scenario_likelihood(const PolicySpace& space, const InterventionPolicy& policy);

double fitness(const ObjectiveValues& objectives, const FitnessWeights& weights);

bool satisfies_constraint(double terminal, const GoalSpec& goal);
bool satisfies_constraint(double terminal, double goal_value, double tolerance_rel);

/// Projection engine bound to one bundle, one history and one horizon.
/// Immutable after construction; project() and evaluate() may be called
/// concurrently.
class ScenarioEngine {
public:
    /// History must carry the bundle's variables in the same order and at
    /// least max(rows the models need, steps) observations.
    ScenarioEngine(const ModelBundle& bundle, const MultivariateSeries& history, std::size_t steps);

    const PolicySpace& space() const { return space_; }
    const ModelBundle& bundle() const { return bundle_; }
    std::size_t steps() const { return space_.steps; }

    ScenarioProjection project(const InterventionPolicy& policy) const;

    /// z-normalized last N observed rows, variable-major.
    const std::vector<double>& reference() const { return reference_; }
    std::vector<double> normalized_paths(const ScenarioProjection& projection) const;

    ObjectiveValues evaluate(const InterventionPolicy& policy, const ScenarioProjection& projection,
                             const GoalSpec& goal, const FitnessWeights& weights) const;

private:
    ModelBundle bundle_;
    PolicySpace space_;
    std::size_t window_rows_ = 0;
    std::vector<double> window_; ///< trailing history rows, row-major
    std::vector<double> reference_;
};

nlohmann::json policy_to_json(const InterventionPolicy& policy);
/// Accepts {"genes": [[...], ...]} with one array per variable.
InterventionPolicy policy_from_json(const nlohmann::json& doc, const PolicySpace& space);

nlohmann::json objectives_to_json(const ObjectiveValues& objectives);

/// Per-variable paths, target path, terminal, objectives, likelihood (as a
/// fraction and a percentage) and the chosen quantile level per gene.
nlohmann::json projection_to_json(const ModelBundle& bundle, const PolicySpace& space,
                                  const InterventionPolicy& policy, const ScenarioProjection& projection,
                                  const ObjectiveValues& objectives);

} // namespace whatif
