#include "whatif/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "whatif/error.hpp"

namespace whatif {

namespace {

constexpr double kPlausibilityFloor = 1e-3;

} // namespace

std::size_t PolicySpace::actionable_genes() const
{
    return static_cast<std::size_t>(std::count(actionable.begin(), actionable.end(), true)) * steps;
}

PolicySpace make_policy_space(const ModelBundle& bundle, std::size_t steps)
{
    if (steps < 1)
        throw ConfigError("horizon must be at least one step");
    validate_levels(bundle.levels);
    if (bundle.levels.size() > 255)
        throw ConfigError("quantile alphabet too large for one-byte genes");
    PolicySpace space;
    space.variables = bundle.variables();
    space.steps = steps;
    space.levels = bundle.levels;
    space.actionable = bundle.actionable;
    const auto it = std::find(space.levels.begin(), space.levels.end(), 0.5);
    space.median_index = static_cast<std::uint8_t>(it - space.levels.begin());
    return space;
}

InterventionPolicy median_policy(const PolicySpace& space)
{
    return {space.variables, space.steps, std::vector<std::uint8_t>(space.genes(), space.median_index)};
}

void validate_policy(const PolicySpace& space, const InterventionPolicy& policy)
{
    if (policy.variables != space.variables || policy.steps != space.steps || policy.genes.size() != space.genes())
        throw ConfigError("policy is " + std::to_string(policy.variables) + "x" + std::to_string(policy.steps) +
                          ", expected " + std::to_string(space.variables) + "x" + std::to_string(space.steps));
    for (std::size_t v = 0; v < space.variables; ++v)
        for (std::size_t n = 0; n < space.steps; ++n) {
            const auto g = policy.at(v, n);
            if (g >= space.levels.size())
                throw ConfigError("gene (" + std::to_string(v) + ", " + std::to_string(n) + ") index " +
                                  std::to_string(g) + " outside the quantile alphabet");
            if (!space.actionable[v] && g != space.median_index)
                throw ConfigError("gene (" + std::to_string(v) + ", " + std::to_string(n) +
                                  ") belongs to a non-actionable variable and must stay at the median");
        }
}

void GoalSpec::validate() const
{
    if (!std::isfinite(goal_value))
        throw ConfigError("goal value must be finite");
    if (!(epsilon_rel > 0.0))
        throw ConfigError("tolerance must be positive");
    if (horizon_steps < 1)
        throw ConfigError("horizon must be at least one step");
}

void FitnessWeights::validate() const
{
    if (!(w1 > 0.0) || !(w2 >= 0.0) || !(w3 >= 0.0) || !std::isfinite(w1) || !std::isfinite(w2) ||
        !std::isfinite(w3))
        throw ConfigError("fitness weights must be finite, non-negative, with w1 > 0");
}

double goal_scale(double goal_value)
{
    return std::max(std::abs(goal_value), 1e-9);
}

double objective_o1(double terminal, const GoalSpec& goal)
{
    return std::abs(terminal - goal.goal_value);
}

double objective_o1_rel(double terminal, const GoalSpec& goal)
{
    return objective_o1(terminal, goal) / goal_scale(goal.goal_value);
}

double objective_o2(std::span<const double> reference, std::span<const double> projection)
{
    if (reference.size() != projection.size())
        throw ConfigError("similarity operands differ in length");
    double dot = 0.0, rr = 0.0, pp = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        dot += reference[i] * projection[i];
        rr += reference[i] * reference[i];
        pp += projection[i] * projection[i];
    }
    if (rr == 0.0 || pp == 0.0)
        throw DataError("similarity undefined for a zero-norm vector");
    const double cosine = dot / (std::sqrt(rr) * std::sqrt(pp));
    return std::clamp(1.0 - cosine, 0.0, 2.0);
}

double gene_plausibility(double tau)
{
    if (!(tau > 0.0 && tau < 1.0))
        throw ConfigError("quantile level must lie in (0, 1)");
    return std::max(1.0 - 2.0 * std::abs(tau - 0.5), kPlausibilityFloor);
}

double objective_o3(const PolicySpace& space, const InterventionPolicy& policy)
{
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t v = 0; v < space.variables; ++v) {
        if (!space.actionable[v])
            continue;
        for (std::size_t n = 0; n < space.steps; ++n) {
            sum -= std::log(gene_plausibility(space.levels[policy.at(v, n)]));
            ++count;
        }
    }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

double scenario_likelihood(const PolicySpace& space, const InterventionPolicy& policy)
{
    return std::exp(-objective_o3(space, policy));
}

double fitness(const ObjectiveValues& objectives, const FitnessWeights& weights)
{
    return weights.w1 * objectives.o1_rel + weights.w2 * objectives.o2 + weights.w3 * objectives.o3;
}

bool satisfies_constraint(double terminal, double goal_value, double tolerance_rel)
{
    return std::abs(terminal - goal_value) <= tolerance_rel * goal_scale(goal_value);
}

bool satisfies_constraint(double terminal, const GoalSpec& goal)
{
    return satisfies_constraint(terminal, goal.goal_value, goal.epsilon_rel);
}

ScenarioEngine::ScenarioEngine(const ModelBundle& bundle, const MultivariateSeries& history, std::size_t steps)
    : bundle_(bundle), space_(make_policy_space(bundle, steps))
{
    if (history.names() != bundle.names)
        throw ConfigError("history variables do not match the model bundle");
    if (bundle.banks.size() != bundle.variables())
        throw DataError("model bundle lacks a quantile bank for every variable");
    for (std::size_t v = 0; v < bundle.variables(); ++v)
        if (bundle.banks[v].models.size() != bundle.levels.size())
            throw DataError("quantile bank for '" + bundle.names[v] + "' is incomplete");

    const std::size_t V = space_.variables;
    const std::size_t needed = std::max(bundle.history_rows_required(), steps);
    if (history.length() < needed)
        throw DataError("history has " + std::to_string(history.length()) + " rows, projection needs " +
                        std::to_string(needed));

    window_rows_ = bundle.history_rows_required();
    const std::size_t T = history.length();
    window_.resize(window_rows_ * V);
    for (std::size_t r = 0; r < window_rows_; ++r)
        for (std::size_t v = 0; v < V; ++v)
            window_[r * V + v] = history.at(T - window_rows_ + r, v);

    reference_.resize(V * steps);
    for (std::size_t v = 0; v < V; ++v)
        for (std::size_t n = 0; n < steps; ++n)
            reference_[v * steps + n] = bundle.normalization.apply(v, history.at(T - steps + n, v));
}

ScenarioProjection ScenarioEngine::project(const InterventionPolicy& policy) const
{
    validate_policy(space_, policy);
    const std::size_t V = space_.variables;
    const std::size_t N = space_.steps;
    const std::size_t H = window_rows_;
    const auto& main = bundle_.main;
    const std::size_t target = bundle_.target;

    std::vector<double> grid((H + N) * V);
    std::copy(window_.begin(), window_.end(), grid.begin());
    std::vector<double> features;

    ScenarioProjection out;
    out.paths.resize(static_cast<Eigen::Index>(V), static_cast<Eigen::Index>(N));
    out.target_path.resize(static_cast<Eigen::Index>(N));

    auto check = [&](double value, std::size_t step, std::size_t v) {
        if (!std::isfinite(value))
            throw DataError("projection produced a non-finite value for '" + bundle_.names[v] + "' at step " +
                            std::to_string(step + 1));
    };

    for (std::size_t s = 0; s < N; ++s) {
        const std::size_t r = H + s;
        for (std::size_t v = 0; v < V; ++v) {
            if (v == target && main.recursive())
                continue;
            const auto& bank = bundle_.banks[v];
            features.clear();
            for (auto f : bank.features)
                for (std::size_t lag = 1; lag <= bank.lag_order; ++lag)
                    features.push_back(grid[(r - lag) * V + f]);
            const auto q = predict_quantiles(bank, features);
            const double value = q[policy.at(v, s)];
            check(value, s, v);
            grid[r * V + v] = value;
        }

        features.clear();
        for (auto f : main.features)
            for (std::size_t lag = main.horizon; lag < main.horizon + main.lag_order; ++lag)
                features.push_back(grid[(r - lag) * V + f]);
        const double y = main.model.predict(features);
        check(y, s, target);
        if (main.recursive())
            grid[r * V + target] = y;
        out.target_path(static_cast<Eigen::Index>(s)) = y;

        for (std::size_t v = 0; v < V; ++v)
            out.paths(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(s)) = grid[r * V + v];
    }
    out.terminal = out.target_path(static_cast<Eigen::Index>(N - 1));
    out.likelihood = scenario_likelihood(space_, policy);
    return out;
}

std::vector<double> ScenarioEngine::normalized_paths(const ScenarioProjection& projection) const
{
    const std::size_t V = space_.variables;
    const std::size_t N = space_.steps;
    std::vector<double> out(V * N);
    for (std::size_t v = 0; v < V; ++v)
        for (std::size_t n = 0; n < N; ++n)
            out[v * N + n] = bundle_.normalization.apply(
                v, projection.paths(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(n)));
    return out;
}

ObjectiveValues ScenarioEngine::evaluate(const InterventionPolicy& policy, const ScenarioProjection& projection,
                                         const GoalSpec& goal, const FitnessWeights& weights) const
{
    ObjectiveValues o;
    o.o1 = objective_o1(projection.terminal, goal);
    o.o1_rel = objective_o1_rel(projection.terminal, goal);
    o.o2 = objective_o2(reference_, normalized_paths(projection));
    o.o3 = objective_o3(space_, policy);
    o.fitness = fitness(o, weights);
    return o;
}

nlohmann::json policy_to_json(const InterventionPolicy& policy)
{
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t v = 0; v < policy.variables; ++v) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t n = 0; n < policy.steps; ++n)
            row.push_back(policy.at(v, n));
        rows.push_back(std::move(row));
    }
    return nlohmann::json{{"genes", std::move(rows)}};
}

InterventionPolicy policy_from_json(const nlohmann::json& doc, const PolicySpace& space)
{
    if (!doc.is_object() || !doc.contains("genes"))
        throw ConfigError("policy needs a 'genes' array");
    const auto& rows = doc.at("genes");
    if (!rows.is_array() || rows.size() != space.variables)
        throw ConfigError("policy needs one gene row per variable (" + std::to_string(space.variables) + ")");
    InterventionPolicy policy{space.variables, space.steps, std::vector<std::uint8_t>(space.genes())};
    for (std::size_t v = 0; v < space.variables; ++v) {
        const auto& row = rows.at(v);
        if (!row.is_array() || row.size() != space.steps)
            throw ConfigError("gene row " + std::to_string(v) + " needs " + std::to_string(space.steps) + " entries");
        for (std::size_t n = 0; n < space.steps; ++n) {
            const auto& g = row.at(n);
            if (!g.is_number_integer() || g.get<long long>() < 0 ||
                g.get<long long>() >= static_cast<long long>(space.levels.size()))
                throw ConfigError("gene (" + std::to_string(v) + ", " + std::to_string(n) +
                                  ") must be an index into the quantile alphabet");
            policy.at(v, n) = static_cast<std::uint8_t>(g.get<long long>());
        }
    }
    validate_policy(space, policy);
    return policy;
}

nlohmann::json objectives_to_json(const ObjectiveValues& o)
{
    return nlohmann::json{{"o1", o.o1}, {"o1_rel", o.o1_rel}, {"o2", o.o2}, {"o3", o.o3}, {"fitness", o.fitness}};
}

nlohmann::json projection_to_json(const ModelBundle& bundle, const PolicySpace& space,
                                  const InterventionPolicy& policy, const ScenarioProjection& projection,
                                  const ObjectiveValues& objectives)
{
    nlohmann::json variables = nlohmann::json::array();
    for (std::size_t v = 0; v < space.variables; ++v) {
        std::vector<double> path(space.steps), taus(space.steps);
        std::vector<int> genes(space.steps);
        for (std::size_t n = 0; n < space.steps; ++n) {
            path[n] = projection.paths(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(n));
            genes[n] = policy.at(v, n);
            taus[n] = space.levels[policy.at(v, n)];
        }
        variables.push_back({{"name", bundle.names[v]},
                             {"actionable", static_cast<bool>(space.actionable[v])},
                             {"path", path},
                             {"genes", genes},
                             {"levels", taus}});
    }
    std::vector<double> target_path(projection.target_path.data(),
                                    projection.target_path.data() + projection.target_path.size());
    return nlohmann::json{{"steps", space.steps},
                          {"delta_seconds", bundle.delta_seconds},
                          {"alphabet", space.levels},
                          {"target", bundle.names[bundle.target]},
                          {"variables", std::move(variables)},
                          {"target_path", std::move(target_path)},
                          {"terminal", projection.terminal},
                          {"objectives", objectives_to_json(objectives)},
                          {"likelihood", projection.likelihood},
                          {"likelihood_percent", 100.0 * projection.likelihood}};
}

} // namespace whatif
