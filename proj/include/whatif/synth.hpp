#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "whatif/series.hpp"

namespace whatif {

/// Stable VAR(p) with Gaussian innovations:
///   x_t = Σ_k A_k x_{t−k} + diag(noise_sigma)·ε_t
/// A_k(i, j) is the weight of variable j at lag k in the equation of variable i.
struct VarSystemSpec {
    std::string name;
    std::vector<std::string> names;
    std::vector<Eigen::MatrixXd> coefficients;
    Eigen::VectorXd noise_sigma;
    std::size_t burn_in = 200;
    std::size_t target = 0;

    std::size_t variables() const { return names.size(); }
    std::size_t order() const { return coefficients.size(); }

    /// True when some lag of `cause` enters the equation of `effect` (cause ≠ effect).
    bool planted_edge(std::size_t cause, std::size_t effect) const;
    std::size_t planted_edge_count() const;
};

/// Largest eigenvalue modulus of the VAR companion matrix.
double spectral_radius(const VarSystemSpec& spec);

/// Throws ConfigError for shape errors and for unstable systems (radius ≥ 1).
void validate_spec(const VarSystemSpec& spec);

/// Simulates from a zero state, drops burn_in steps and returns `length`
/// rows sampled every 3 seconds.
MultivariateSeries generate_var(const VarSystemSpec& spec, std::size_t length, std::uint64_t seed);

/// "granger4", "ga5" and "null2".
std::vector<VarSystemSpec> standard_benchmarks();
VarSystemSpec benchmark(std::string_view name);

void to_json(nlohmann::json& j, const VarSystemSpec& spec);
void from_json(const nlohmann::json& j, VarSystemSpec& spec);

} // namespace whatif
