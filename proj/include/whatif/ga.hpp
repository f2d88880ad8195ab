#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "whatif/scenario.hpp"

namespace whatif {

struct GAConfig {
    std::size_t population_size = 200;
    double mutation_prob = 0.25;
    double crossover_prob = 0.75;
    std::size_t tournament_size = 3;
    double immigrant_rate = 0.10;
    std::size_t max_generations = 100;
    double tolerance_rel = 0.05;
    FitnessWeights weights;
    std::uint64_t seed = 1;
    std::size_t elitism_count = 1;
    std::size_t threads = 1; ///< evaluation workers; 0 = hardware concurrency

    void validate() const;
    std::size_t immigrant_count() const;
};

/// Operators draw from independent substreams keyed by (seed, generation,
/// operator), so evaluation order can never shift a random draw.
enum class RngStream : std::uint64_t { init = 1, select = 2, crossover = 3, mutate = 4, immigrants = 5 };

using Rng = std::mt19937_64;
Rng make_stream(std::uint64_t seed, std::size_t generation, RngStream stream);

struct Individual {
    InterventionPolicy policy;
    ScenarioProjection projection;
    ObjectiveValues objectives;
    bool evaluated = false;
};

struct TraceRow {
    std::size_t generation = 0;
    double best_fitness = 0.0;
    double mean_fitness = 0.0;
    double best_o1_rel = 0.0;
    std::size_t evaluations = 0; ///< cumulative projections
    double millis = 0.0;         ///< elapsed since the search started
};

using SearchTrace = std::vector<TraceRow>;

struct SearchResult {
    Individual best;
    std::vector<Individual> final_population; ///< ranked, best first
    SearchTrace trace;
    bool converged = false;
    std::size_t generations_run = 0;
    std::uint64_t seed = 0;
    GAConfig config;
    GoalSpec goal;
};

InterventionPolicy random_policy(const PolicySpace& space, Rng& rng);

/// Index 0 is the all-median anchor; the rest draw actionable genes
/// uniformly from the alphabet.
std::vector<InterventionPolicy> init_population(const PolicySpace& space, const GAConfig& config, Rng& rng);

/// Samples k distinct indices and returns the one with the lowest fitness
/// (ties go to the lower index).
std::size_t tournament_select(std::span<const double> fitness, std::size_t k, Rng& rng);

InterventionPolicy crossover(const InterventionPolicy& a, const InterventionPolicy& b, const GAConfig& config,
                             Rng& rng);

/// Gate at mutation_prob, then each actionable gene moves with probability
/// 2/(V·N) to a different level drawn uniformly. Returns the number of
/// changed genes.
std::size_t mutate(InterventionPolicy& policy, const PolicySpace& space, const GAConfig& config, Rng& rng);

/// Replaces the worst immigrant_count() individuals outside the first
/// `elites` slots with fresh random ones (marked unevaluated). Returns the
/// replaced indices.
std::vector<std::size_t> inject_immigrants(std::vector<Individual>& population, const PolicySpace& space,
                                           const GAConfig& config, std::size_t elites, Rng& rng);

/// Hooks for progress reporting and cancellation.
class SearchObserver {
public:
    virtual ~SearchObserver() = default;
    virtual void on_generation(const TraceRow& row, const Individual& best) { (void)row, (void)best; }
    virtual bool stop_requested() const { return false; }
};

/// Generational loop: evaluate, trace, early-stop when the best individual's
/// o1_rel ≤ tolerance_rel, otherwise elitism + tournament/crossover/mutation
/// offspring + immigrants. Deterministic for a fixed seed.
SearchResult run_search(const ScenarioEngine& engine, const GoalSpec& goal, const GAConfig& config,
                        SearchObserver* observer = nullptr);

SearchResult run_search(const ModelBundle& bundle, const MultivariateSeries& history, const GoalSpec& goal,
                        const GAConfig& config, SearchObserver* observer = nullptr);

/// Deterministic document (no wall times): config echo, seed, goal,
/// best scenario projection, ranked final population and trace.
nlohmann::json result_to_json(const SearchResult& result, const ScenarioEngine& engine);
nlohmann::json config_to_json(const GAConfig& config);
nlohmann::json trace_row_to_json(const TraceRow& row, bool with_time);

/// generation,best,mean,best_o1_rel,evaluations,millis
void write_trace_csv(std::ostream& out, const SearchTrace& trace);

} // namespace whatif
