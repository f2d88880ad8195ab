#include <doctest.h>

#include <cmath>
#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "whatif/error.hpp"
#include "whatif/synth.hpp"

using namespace whatif;

namespace {

double lag1_autocorrelation(const Eigen::VectorXd& x)
{
    const Eigen::VectorXd c = x.array() - x.mean();
    const auto n = c.size();
    return c.head(n - 1).dot(c.tail(n - 1)) / c.squaredNorm();
}

} // namespace

TEST_SUITE("synth")
{
    TEST_CASE("white noise has zero mean")
    {
        const auto s = generate_var(testutil::ar1_spec(0.0), 10000, 4);
        CHECK(std::abs(s.values().col(0).mean()) < 0.05);
        CHECK(s.delta_seconds() == 3.0);
    }

    TEST_CASE("AR(1) autocorrelation")
    {
        const auto s = generate_var(testutil::ar1_spec(0.9), 20000, 9);
        CHECK(std::abs(lag1_autocorrelation(s.values().col(0)) - 0.9) < 0.05);
    }

    TEST_CASE("unstable systems are rejected")
    {
        CHECK(spectral_radius(testutil::ar1_spec(1.2)) == doctest::Approx(1.2));
        CHECK_THROWS_AS(generate_var(testutil::ar1_spec(1.2), 100, 1), ConfigError);
        CHECK_THROWS_AS(validate_spec(testutil::ar1_spec(1.0)), ConfigError);
        auto bad = testutil::ar1_spec(0.5);
        bad.noise_sigma = Eigen::VectorXd::Ones(2);
        CHECK_THROWS_AS(validate_spec(bad), ConfigError);
    }

    TEST_CASE("benchmarks")
    {
        const auto g = benchmark("granger4");
        CHECK(g.planted_edge(0, 1));
        CHECK(g.planted_edge(0, 2));
        CHECK(g.planted_edge(2, 3));
        CHECK_FALSE(g.planted_edge(1, 0));
        CHECK_FALSE(g.planted_edge(0, 0));
        CHECK(g.planted_edge_count() == 3);
        CHECK(benchmark("ga5").planted_edge_count() == 4);
        CHECK(benchmark("null2").planted_edge_count() == 0);
        for (const auto& s : standard_benchmarks())
            CHECK(spectral_radius(s) < 1.0);
        CHECK_THROWS_AS(benchmark("nope"), ConfigError);
    }

    TEST_CASE("generation is deterministic per seed")
    {
        const auto spec = benchmark("granger4");
        const auto a = generate_var(spec, 500, 7);
        const auto b = generate_var(spec, 500, 7);
        const auto c = generate_var(spec, 500, 8);
        CHECK(a.values() == b.values());
        CHECK(a.timestamps_ns() == b.timestamps_ns());
        CHECK(a.values() != c.values());
        CHECK(a.target() == 3);
    }

    TEST_CASE("independent pair has no cross covariance")
    {
        const auto s = generate_var(benchmark("null2"), 20000, 12);
        const Eigen::MatrixXd c = s.values().rowwise() - s.values().colwise().mean();
        const double cov = c.col(0).dot(c.col(1)) / static_cast<double>(c.rows());
        CHECK(std::abs(cov) < 0.03);
        const double lagged = c.col(0).head(c.rows() - 1).dot(c.col(1).tail(c.rows() - 1)) /
                              static_cast<double>(c.rows() - 1);
        CHECK(std::abs(lagged) < 0.03);
    }

    TEST_CASE("spec json round trip")
    {
        for (const auto& spec : standard_benchmarks()) {
            const nlohmann::json j = spec;
            const auto back = j.get<VarSystemSpec>();
            CHECK(back.name == spec.name);
            CHECK(back.names == spec.names);
            CHECK(back.target == spec.target);
            CHECK(back.burn_in == spec.burn_in);
            REQUIRE(back.coefficients.size() == spec.coefficients.size());
            CHECK(back.coefficients[0] == spec.coefficients[0]);
            CHECK(back.noise_sigma == spec.noise_sigma);
        }
    }
}
