#include "whatif/ga.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include <nlohmann/json.hpp>

#include "whatif/error.hpp"
#include "whatif/parallel.hpp"

namespace whatif {

namespace {

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::string genome_string(const InterventionPolicy& policy)
{
    std::string s = "[";
    for (std::size_t i = 0; i < policy.genes.size(); ++i) {
        if (i)
            s += i % policy.steps == 0 ? " | " : " ";
        s += std::to_string(policy.genes[i]);
    }
    return s + "]";
}

void rank(std::vector<Individual>& population)
{
    std::stable_sort(population.begin(), population.end(), [](const Individual& a, const Individual& b) {
        return a.objectives.fitness < b.objectives.fitness;
    });
}

} // namespace

void GAConfig::validate() const
{
    auto prob = [](double p, const char* name) {
        if (!(p >= 0.0 && p <= 1.0))
            throw ConfigError(std::string(name) + " must lie in [0, 1]");
    };
    prob(mutation_prob, "mutation_prob");
    prob(crossover_prob, "crossover_prob");
    prob(immigrant_rate, "immigrant_rate");
    if (tournament_size < 1)
        throw ConfigError("tournament_size must be at least 1");
    if (population_size < 2)
        throw ConfigError("population_size must be at least 2");
    if (population_size < tournament_size)
        throw ConfigError("population_size must be at least tournament_size");
    if (!(tolerance_rel > 0.0))
        throw ConfigError("tolerance must be positive");
    if (elitism_count >= population_size)
        throw ConfigError("elitism_count must be below population_size");
    if (elitism_count + immigrant_count() > population_size)
        throw ConfigError("immigrants and elites exceed the population");
    weights.validate();
}

std::size_t GAConfig::immigrant_count() const
{
    return static_cast<std::size_t>(std::llround(immigrant_rate * static_cast<double>(population_size)));
}

Rng make_stream(std::uint64_t seed, std::size_t generation, RngStream stream)
{
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ static_cast<std::uint64_t>(generation));
    h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
    return Rng(h);
}

InterventionPolicy random_policy(const PolicySpace& space, Rng& rng)
{
    auto policy = median_policy(space);
    std::uniform_int_distribution<int> level(0, static_cast<int>(space.levels.size()) - 1);
    for (std::size_t v = 0; v < space.variables; ++v) {
        if (!space.actionable[v])
            continue;
        for (std::size_t n = 0; n < space.steps; ++n)
            policy.at(v, n) = static_cast<std::uint8_t>(level(rng));
    }
    return policy;
}

std::vector<InterventionPolicy> init_population(const PolicySpace& space, const GAConfig& config, Rng& rng)
{
    std::vector<InterventionPolicy> out;
    out.reserve(config.population_size);
    out.push_back(median_policy(space));
    while (out.size() < config.population_size)
        out.push_back(random_policy(space, rng));
    return out;
}

std::size_t tournament_select(std::span<const double> fitness, std::size_t k, Rng& rng)
{
    if (fitness.empty())
        throw ConfigError("tournament over an empty population");
    if (k < 1 || k > fitness.size())
        throw ConfigError("tournament size must lie in [1, population size]");
    std::vector<std::size_t> picked;
    picked.reserve(k);
    std::uniform_int_distribution<std::size_t> draw(0, fitness.size() - 1);
    if (k == fitness.size()) {
        picked.resize(k);
        std::iota(picked.begin(), picked.end(), std::size_t{0});
    } else {
        while (picked.size() < k) {
            const std::size_t i = draw(rng);
            if (std::find(picked.begin(), picked.end(), i) == picked.end())
                picked.push_back(i);
        }
    }
    std::size_t best = picked.front();
    for (auto i : picked)
        if (fitness[i] < fitness[best] || (fitness[i] == fitness[best] && i < best))
            best = i;
    return best;
}

InterventionPolicy crossover(const InterventionPolicy& a, const InterventionPolicy& b, const GAConfig& config,
                             Rng& rng)
{
    if (a.variables != b.variables || a.steps != b.steps || a.genes.size() != b.genes.size())
        throw ConfigError("crossover parents differ in shape");
    InterventionPolicy child = a;
    std::bernoulli_distribution apply(config.crossover_prob);
    if (!apply(rng))
        return child;
    std::bernoulli_distribution coin(0.5);
    for (std::size_t i = 0; i < child.genes.size(); ++i)
        if (coin(rng))
            child.genes[i] = b.genes[i];
    return child;
}

std::size_t mutate(InterventionPolicy& policy, const PolicySpace& space, const GAConfig& config, Rng& rng)
{
    std::bernoulli_distribution gate(config.mutation_prob);
    if (!gate(rng) || space.levels.size() < 2)
        return 0;
    const double rate = std::min(1.0, 2.0 / static_cast<double>(space.genes()));
    std::bernoulli_distribution hit(rate);
    std::uniform_int_distribution<int> other(0, static_cast<int>(space.levels.size()) - 2);
    std::size_t changed = 0;
    for (std::size_t v = 0; v < space.variables; ++v) {
        if (!space.actionable[v])
            continue;
        for (std::size_t n = 0; n < space.steps; ++n) {
            if (!hit(rng))
                continue;
            auto& g = policy.at(v, n);
            const int draw = other(rng);
            g = static_cast<std::uint8_t>(draw >= g ? draw + 1 : draw);
            ++changed;
        }
    }
    return changed;
}

std::vector<std::size_t> inject_immigrants(std::vector<Individual>& population, const PolicySpace& space,
                                           const GAConfig& config, std::size_t elites, Rng& rng)
{
    const std::size_t count = config.immigrant_count();
    if (count == 0 || elites >= population.size())
        return {};
    std::vector<std::size_t> order(population.size() - elites);
    std::iota(order.begin(), order.end(), elites);
    // Worst first; among equal fitness the later slot goes first.
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double fa = population[a].objectives.fitness;
        const double fb = population[b].objectives.fitness;
        if (fa != fb)
            return fa > fb;
        return a > b;
    });
    order.resize(std::min(count, order.size()));
    std::sort(order.begin(), order.end());
    for (auto i : order) {
        population[i] = Individual{};
        population[i].policy = random_policy(space, rng);
    }
    return order;
}

namespace {

class Evaluator {
public:
    Evaluator(const ScenarioEngine& engine, const GoalSpec& goal, const GAConfig& config)
        : engine_(engine), goal_(goal), config_(config)
    {
    }

    void run(std::vector<Individual>& population, std::size_t generation)
    {
        std::vector<std::size_t> pending;
        for (std::size_t i = 0; i < population.size(); ++i)
            if (!population[i].evaluated)
                pending.push_back(i);
        parallel_for(pending.size(), config_.threads, [&](std::size_t k) {
            auto& ind = population[pending[k]];
            try {
                ind.projection = engine_.project(ind.policy);
                ind.objectives = engine_.evaluate(ind.policy, ind.projection, goal_, config_.weights);
            } catch (const DataError& e) {
                throw DataError(std::string(e.what()) + " (generation " + std::to_string(generation) + ", genome " +
                                genome_string(ind.policy) + ")");
            }
            ind.evaluated = true;
        });
        evaluations_ += pending.size();
    }

    std::size_t evaluations() const { return evaluations_; }

private:
    const ScenarioEngine& engine_;
    const GoalSpec& goal_;
    const GAConfig& config_;
    std::size_t evaluations_ = 0;
};

} // namespace

SearchResult run_search(const ScenarioEngine& engine, const GoalSpec& goal, const GAConfig& config,
                        SearchObserver* observer)
{
    config.validate();
    goal.validate();
    if (goal.horizon_steps != engine.steps())
        throw ConfigError("goal horizon differs from the engine horizon");
    const auto& space = engine.space();
    const auto start = std::chrono::steady_clock::now();
    Evaluator evaluator(engine, goal, config);

    SearchResult result;
    result.seed = config.seed;
    result.config = config;
    result.goal = goal;

    std::vector<Individual> population;
    {
        auto rng = make_stream(config.seed, 0, RngStream::init);
        for (auto& p : init_population(space, config, rng)) {
            Individual ind;
            ind.policy = std::move(p);
            population.push_back(std::move(ind));
        }
    }

    for (std::size_t generation = 0;; ++generation) {
        if (generation > 0) {
            std::vector<double> fit(population.size());
            for (std::size_t i = 0; i < population.size(); ++i)
                fit[i] = population[i].objectives.fitness;

            auto select_rng = make_stream(config.seed, generation, RngStream::select);
            auto cross_rng = make_stream(config.seed, generation, RngStream::crossover);
            auto mutate_rng = make_stream(config.seed, generation, RngStream::mutate);

            std::vector<Individual> next(population.begin(),
                                         population.begin() + static_cast<std::ptrdiff_t>(config.elitism_count));
            while (next.size() < config.population_size) {
                const auto a = tournament_select(fit, config.tournament_size, select_rng);
                const auto b = tournament_select(fit, config.tournament_size, select_rng);
                Individual child;
                child.policy = crossover(population[a].policy, population[b].policy, config, cross_rng);
                mutate(child.policy, space, config, mutate_rng);
                next.push_back(std::move(child));
            }
            evaluator.run(next, generation);

            auto immigrant_rng = make_stream(config.seed, generation, RngStream::immigrants);
            inject_immigrants(next, space, config, config.elitism_count, immigrant_rng);
            evaluator.run(next, generation);
            population = std::move(next);
        } else {
            evaluator.run(population, generation);
        }
        rank(population);

        const auto& best = population.front();
        TraceRow row;
        row.generation = generation;
        row.best_fitness = best.objectives.fitness;
        double sum = 0.0;
        for (const auto& ind : population)
            sum += ind.objectives.fitness;
        row.mean_fitness = sum / static_cast<double>(population.size());
        row.best_o1_rel = best.objectives.o1_rel;
        row.evaluations = evaluator.evaluations();
        row.millis =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        result.trace.push_back(row);
        if (observer)
            observer->on_generation(row, best);

        result.converged = satisfies_constraint(best.projection.terminal, goal.goal_value, config.tolerance_rel);
        if (result.converged || generation >= config.max_generations || (observer && observer->stop_requested()))
            break;
    }

    result.generations_run = result.trace.size();
    result.best = population.front();
    result.final_population = std::move(population);
    return result;
}

SearchResult run_search(const ModelBundle& bundle, const MultivariateSeries& history, const GoalSpec& goal,
                        const GAConfig& config, SearchObserver* observer)
{
    ScenarioEngine engine(bundle, history, goal.horizon_steps);
    return run_search(engine, goal, config, observer);
}

nlohmann::json config_to_json(const GAConfig& c)
{
    return nlohmann::json{{"population_size", c.population_size},
                          {"mutation_prob", c.mutation_prob},
                          {"crossover_prob", c.crossover_prob},
                          {"tournament_size", c.tournament_size},
                          {"immigrant_rate", c.immigrant_rate},
                          {"immigrant_count", c.immigrant_count()},
                          {"max_generations", c.max_generations},
                          {"tolerance_rel", c.tolerance_rel},
                          {"weights", {c.weights.w1, c.weights.w2, c.weights.w3}},
                          {"seed", c.seed},
                          {"elitism_count", c.elitism_count}};
}

nlohmann::json trace_row_to_json(const TraceRow& row, bool with_time)
{
    nlohmann::json j{{"generation", row.generation},
                     {"best", row.best_fitness},
                     {"mean", row.mean_fitness},
                     {"best_o1_rel", row.best_o1_rel},
                     {"evaluations", row.evaluations}};
    if (with_time)
        j["millis"] = row.millis;
    return j;
}

nlohmann::json result_to_json(const SearchResult& result, const ScenarioEngine& engine)
{
    const auto& space = engine.space();
    nlohmann::json population = nlohmann::json::array();
    for (const auto& ind : result.final_population)
        population.push_back({{"genes", policy_to_json(ind.policy).at("genes")},
                              {"terminal", ind.projection.terminal},
                              {"objectives", objectives_to_json(ind.objectives)}});
    nlohmann::json trace = nlohmann::json::array();
    for (const auto& row : result.trace)
        trace.push_back(trace_row_to_json(row, false));
    return nlohmann::json{
        {"seed", result.seed},
        {"converged", result.converged},
        {"generations_run", result.generations_run},
        {"goal",
         {{"goal_value", result.goal.goal_value},
          {"epsilon_rel", result.goal.epsilon_rel},
          {"horizon_steps", result.goal.horizon_steps},
          {"horizon_seconds", result.goal.horizon_seconds(engine.bundle().delta_seconds)}}},
        {"config", config_to_json(result.config)},
        {"best", projection_to_json(engine.bundle(), space, result.best.policy, result.best.projection,
                                    result.best.objectives)},
        {"final_population", std::move(population)},
        {"trace", std::move(trace)}};
}

void write_trace_csv(std::ostream& out, const SearchTrace& trace)
{
    out << "generation,best,mean,best_o1_rel,evaluations,millis\n";
    for (const auto& r : trace)
        out << r.generation << ',' << format_double(r.best_fitness) << ',' << format_double(r.mean_fitness) << ','
            << format_double(r.best_o1_rel) << ',' << r.evaluations << ',' << format_double(r.millis) << '\n';
}

} // namespace whatif
