#include "whatif/synth.hpp"

#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "whatif/error.hpp"

namespace whatif {

namespace {

constexpr std::int64_t kStartSeconds = 1704067200; // 2024-01-01T00:00:00Z
constexpr std::int64_t kStepNanos = 3'000'000'000;

std::vector<std::string> numbered_names(std::size_t n)
{
    std::vector<std::string> out;
    for (std::size_t i = 1; i <= n; ++i)
        out.push_back("x" + std::to_string(i));
    return out;
}

} // namespace

bool VarSystemSpec::planted_edge(std::size_t cause, std::size_t effect) const
{
    if (cause == effect)
        return false;
    for (const auto& A : coefficients)
        if (std::abs(A(static_cast<Eigen::Index>(effect), static_cast<Eigen::Index>(cause))) > 0.0)
            return true;
    return false;
}

std::size_t VarSystemSpec::planted_edge_count() const
{
    std::size_t n = 0;
    for (std::size_t c = 0; c < variables(); ++c)
        for (std::size_t e = 0; e < variables(); ++e)
            n += planted_edge(c, e) ? 1 : 0;
    return n;
}

double spectral_radius(const VarSystemSpec& spec)
{
    const auto V = static_cast<Eigen::Index>(spec.variables());
    const auto p = static_cast<Eigen::Index>(spec.order());
    if (p == 0)
        return 0.0;
    Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(V * p, V * p);
    for (Eigen::Index k = 0; k < p; ++k)
        companion.block(0, k * V, V, V) = spec.coefficients[static_cast<std::size_t>(k)];
    if (p > 1)
        companion.block(V, 0, V * (p - 1), V * (p - 1)).setIdentity();
    Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, false);
    return solver.eigenvalues().cwiseAbs().maxCoeff();
}

void validate_spec(const VarSystemSpec& spec)
{
    const auto V = static_cast<Eigen::Index>(spec.variables());
    if (V < 1)
        throw ConfigError("VAR spec needs at least one variable");
    for (const auto& A : spec.coefficients)
        if (A.rows() != V || A.cols() != V)
            throw ConfigError("VAR coefficient matrices must be " + std::to_string(V) + "x" + std::to_string(V));
    if (spec.noise_sigma.size() != V)
        throw ConfigError("noise_sigma needs one entry per variable");
    if (!(spec.noise_sigma.array() > 0.0).all())
        throw ConfigError("noise_sigma must be positive");
    if (spec.target >= spec.variables())
        throw ConfigError("VAR spec target out of range");
    const double radius = spectral_radius(spec);
    if (!(radius < 1.0))
        throw ConfigError("unstable VAR spec '" + spec.name + "': spectral radius " + format_double(radius));
}

MultivariateSeries generate_var(const VarSystemSpec& spec, std::size_t length, std::uint64_t seed)
{
    validate_spec(spec);
    if (length < 100)
        throw ConfigError("synthetic series needs at least 100 samples");
    const auto V = static_cast<Eigen::Index>(spec.variables());
    const std::size_t p = spec.order();
    const std::size_t total = spec.burn_in + length;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(total), V);
    for (std::size_t t = 0; t < total; ++t) {
        Eigen::VectorXd next = Eigen::VectorXd::Zero(V);
        for (std::size_t k = 1; k <= p && k <= t; ++k)
            next += spec.coefficients[k - 1] * x.row(static_cast<Eigen::Index>(t - k)).transpose();
        for (Eigen::Index v = 0; v < V; ++v)
            next(v) += spec.noise_sigma(v) * normal(rng);
        x.row(static_cast<Eigen::Index>(t)) = next.transpose();
    }

    std::vector<std::int64_t> stamps(length);
    for (std::size_t t = 0; t < length; ++t)
        stamps[t] = kStartSeconds * 1'000'000'000LL + static_cast<std::int64_t>(t) * kStepNanos;
    Eigen::MatrixXd values = x.bottomRows(static_cast<Eigen::Index>(length));
    return MultivariateSeries(spec.names, std::move(stamps), std::move(values), spec.target);
}

std::vector<VarSystemSpec> standard_benchmarks()
{
    std::vector<VarSystemSpec> out;
    {
        VarSystemSpec s;
        s.name = "granger4";
        s.names = numbered_names(4);
        Eigen::MatrixXd A = 0.3 * Eigen::MatrixXd::Identity(4, 4);
        A(1, 0) = 0.8; // x1 -> x2
        A(2, 0) = 0.6; // x1 -> x3
        A(3, 2) = 0.7; // x3 -> x4
        s.coefficients = {A};
        s.noise_sigma = Eigen::VectorXd::Ones(4);
        s.target = 3;
        out.push_back(std::move(s));
    }
    {
        // Chain x1 -> x2 -> x3 -> x4 -> x5 with x5 as the target.
        VarSystemSpec s;
        s.name = "ga5";
        s.names = numbered_names(5);
        Eigen::MatrixXd A = 0.5 * Eigen::MatrixXd::Identity(5, 5);
        for (Eigen::Index i = 1; i < 5; ++i)
            A(i, i - 1) = 0.6;
        s.coefficients = {A};
        s.noise_sigma = Eigen::VectorXd::Ones(5);
        s.target = 4;
        out.push_back(std::move(s));
    }
    {
        VarSystemSpec s;
        s.name = "null2";
        s.names = numbered_names(2);
        s.coefficients = {Eigen::MatrixXd::Zero(2, 2)};
        s.noise_sigma = Eigen::VectorXd::Ones(2);
        s.target = 1;
        out.push_back(std::move(s));
    }
    return out;
}

VarSystemSpec benchmark(std::string_view name)
{
    for (auto& s : standard_benchmarks())
        if (s.name == name)
            return s;
    throw ConfigError("unknown benchmark '" + std::string(name) + "'");
}

void to_json(nlohmann::json& j, const VarSystemSpec& spec)
{
    nlohmann::json coeffs = nlohmann::json::array();
    for (const auto& A : spec.coefficients) {
        nlohmann::json m = nlohmann::json::array();
        for (Eigen::Index i = 0; i < A.rows(); ++i) {
            std::vector<double> row(A.cols());
            for (Eigen::Index c = 0; c < A.cols(); ++c)
                row[static_cast<std::size_t>(c)] = A(i, c);
            m.push_back(row);
        }
        coeffs.push_back(std::move(m));
    }
    std::vector<double> sigma(spec.noise_sigma.data(), spec.noise_sigma.data() + spec.noise_sigma.size());
    j = nlohmann::json{{"name", spec.name},
                       {"names", spec.names},
                       {"coefficients", coeffs},
                       {"noise_sigma", sigma},
                       {"burn_in", spec.burn_in},
                       {"target", spec.names.empty() ? std::string() : spec.names.at(spec.target)}};
}

void from_json(const nlohmann::json& j, VarSystemSpec& spec)
{
    spec.name = j.value("name", std::string("custom"));
    spec.names = j.at("names").get<std::vector<std::string>>();
    const auto V = static_cast<Eigen::Index>(spec.names.size());
    spec.coefficients.clear();
    for (const auto& m : j.at("coefficients")) {
        Eigen::MatrixXd A(V, V);
        if (static_cast<Eigen::Index>(m.size()) != V)
            throw ConfigError("coefficient matrix has wrong row count");
        for (Eigen::Index i = 0; i < V; ++i) {
            const auto row = m.at(static_cast<std::size_t>(i)).get<std::vector<double>>();
            if (static_cast<Eigen::Index>(row.size()) != V)
                throw ConfigError("coefficient matrix has wrong column count");
            for (Eigen::Index c = 0; c < V; ++c)
                A(i, c) = row[static_cast<std::size_t>(c)];
        }
        spec.coefficients.push_back(std::move(A));
    }
    const auto sigma = j.at("noise_sigma").get<std::vector<double>>();
    spec.noise_sigma = Eigen::Map<const Eigen::VectorXd>(sigma.data(), static_cast<Eigen::Index>(sigma.size()));
    spec.burn_in = j.value("burn_in", std::size_t{200});
    spec.target = V > 0 ? static_cast<std::size_t>(V - 1) : 0;
    if (j.contains("target")) {
        const auto t = j.at("target").get<std::string>();
        auto it = std::find(spec.names.begin(), spec.names.end(), t);
        if (it == spec.names.end())
            throw ConfigError("spec target '" + t + "' is not a variable");
        spec.target = static_cast<std::size_t>(it - spec.names.begin());
    }
}

} // namespace whatif
