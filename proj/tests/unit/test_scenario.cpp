#include <doctest.h>

#include <cmath>
#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "whatif/error.hpp"
#include "whatif/scenario.hpp"

using namespace whatif;

namespace {

PolicySpace toy_space(std::size_t variables, std::size_t steps, std::vector<bool> actionable)
{
    PolicySpace s;
    s.variables = variables;
    s.steps = steps;
    s.levels = default_quantile_levels();
    s.actionable = std::move(actionable);
    s.median_index = 5;
    return s;
}

/// Target prediction one step past the history, built through the lag design.
double next_target_via_design(const ModelBundle& b, const MultivariateSeries& s)
{
    Eigen::MatrixXd ext(s.length() + 1, s.variables());
    ext.topRows(s.length()) = s.values();
    ext.row(s.length()).setZero();
    const auto x = testutil::series_of(ext, s.target());
    const auto d = make_lag_design(x, s.target(), b.main.features, b.main.lag_order);
    return b.main.model.predict(Eigen::MatrixXd(d.rows.bottomRows(1)))(0);
}

} // namespace

TEST_SUITE("scenario")
{
    TEST_CASE("goal distance examples")
    {
        const GoalSpec g{5.0, 0.05, 10};
        CHECK(objective_o1(5.87, g) == doctest::Approx(0.87));
        CHECK(objective_o1_rel(5.87, g) == doctest::Approx(0.174));
        CHECK(goal_scale(0.0) == 1e-9);
        CHECK(satisfies_constraint(5.2, g));
        CHECK(satisfies_constraint(5.25, 5.0, 0.05));
        CHECK_FALSE(satisfies_constraint(5.26, g));
        CHECK(satisfies_constraint(-4.9, -5.0, 0.05));
        CHECK(g.horizon_seconds(3.0) == 30.0);
        CHECK_THROWS_AS((GoalSpec{1.0, -0.1, 10}.validate()), ConfigError);
        CHECK_THROWS_AS((GoalSpec{1.0, 0.05, 0}.validate()), ConfigError);
        CHECK_THROWS_AS((GoalSpec{std::nan(""), 0.05, 3}.validate()), ConfigError);
    }

    TEST_CASE("trajectory distance examples")
    {
        const std::vector<double> a{1, 2, 3}, neg{-1, -2, -3}, scaled{10, 20, 30};
        const std::vector<double> x{1, 0}, y{0, 1};
        CHECK(objective_o2(a, a) == doctest::Approx(0.0));
        CHECK(objective_o2(a, neg) == doctest::Approx(2.0));
        CHECK(objective_o2(x, y) == doctest::Approx(1.0));
        CHECK(objective_o2(a, scaled) == doctest::Approx(0.0));
        const std::vector<double> zero{0, 0, 0};
        CHECK_THROWS_AS(objective_o2(a, zero), DataError);
        CHECK_THROWS_AS(objective_o2(a, x), ConfigError);
    }

    TEST_CASE("plausibility and likelihood examples")
    {
        CHECK(gene_plausibility(0.5) == 1.0);
        CHECK(gene_plausibility(0.25) == doctest::Approx(0.5));
        CHECK(gene_plausibility(0.05) == doctest::Approx(0.1));
        CHECK(gene_plausibility(0.9999) == 1e-3);
        CHECK_THROWS_AS(gene_plausibility(1.0), ConfigError);

        auto space = toy_space(2, 1, {true, false});
        InterventionPolicy p{2, 1, {2, 5}};
        CHECK(objective_o3(space, p) == doctest::Approx(std::log(2.0)));

        space = toy_space(2, 1, {true, true});
        p.genes = {2, 5};
        CHECK(scenario_likelihood(space, p) == doctest::Approx(std::sqrt(0.5)));
        CHECK(objective_o3(space, median_policy(space)) == 0.0);

        const ObjectiveValues o{0.0, 0.2, 0.5, 1.0, 0.0};
        CHECK(fitness(o, FitnessWeights{}) == doctest::Approx(0.35));
        CHECK_THROWS_AS((FitnessWeights{-1, 0, 0}.validate()), ConfigError);
    }

    TEST_CASE("implausibility grows away from the median")
    {
        const auto space = toy_space(1, 1, {true});
        for (std::uint8_t a = 0; a < 11; ++a)
            for (std::uint8_t b = 0; b < 11; ++b) {
                const double da = std::abs(space.levels[a] - 0.5), db = std::abs(space.levels[b] - 0.5);
                const double oa = objective_o3(space, InterventionPolicy{1, 1, {a}});
                const double ob = objective_o3(space, InterventionPolicy{1, 1, {b}});
                if (da < db - 1e-12)
                    CHECK(oa < ob);
                else if (std::abs(da - db) < 1e-12)
                    CHECK(oa == doctest::Approx(ob));
            }
    }

    TEST_CASE("policy space and validation")
    {
        const auto& t = testutil::driver_model();
        const auto space = make_policy_space(t.bundle, 4);
        CHECK(space.variables == 2);
        CHECK(space.genes() == 8);
        CHECK(space.actionable_genes() == 4);
        CHECK(space.levels[space.median_index] == 0.5);
        const auto m = median_policy(space);
        CHECK_NOTHROW(validate_policy(space, m));

        auto bad = m;
        bad.at(1, 0) = 0;
        CHECK_THROWS_AS(validate_policy(space, bad), ConfigError);
        bad = m;
        bad.at(0, 0) = 11;
        CHECK_THROWS_AS(validate_policy(space, bad), ConfigError);
        bad = m;
        bad.genes.pop_back();
        CHECK_THROWS_AS(validate_policy(space, bad), ConfigError);
    }

    TEST_CASE("engine preconditions")
    {
        const auto& t = testutil::driver_model();
        CHECK_THROWS_AS(ScenarioEngine(t.bundle, t.series.slice(0, 3), 3), DataError);
        const auto other = testutil::series_of(t.series.values(), 1);
        CHECK_THROWS_AS(ScenarioEngine(t.bundle, other, 3), ConfigError);
    }

    TEST_CASE("single step projection")
    {
        const auto& t = testutil::driver_model();
        const ScenarioEngine engine(t.bundle, t.series, 1);
        const auto m = median_policy(engine.space());
        const auto p = engine.project(m);
        CHECK(p.paths.cols() == 1);
        CHECK(p.target_path.size() == 1);
        CHECK(p.terminal == p.target_path(0));
        CHECK(p.terminal == doctest::Approx(next_target_via_design(t.bundle, t.series)).epsilon(1e-12));
        CHECK(p.likelihood == 1.0);
    }

    TEST_CASE("driver level moves the downstream target monotonically")
    {
        const auto& t = testutil::driver_model();
        const ScenarioEngine engine(t.bundle, t.series, 2);
        auto pol = median_policy(engine.space());
        double prev_driver = -INFINITY, prev_target = -INFINITY;
        for (std::uint8_t level = 0; level < 11; ++level) {
            pol.at(0, 0) = level;
            const auto p = engine.project(pol);
            CHECK(p.paths(0, 0) >= prev_driver);
            CHECK(p.target_path(1) >= prev_target);
            prev_driver = p.paths(0, 0);
            prev_target = p.target_path(1);
        }
        pol.at(0, 0) = 10;
        const auto top = engine.project(pol);
        const auto med = engine.project(median_policy(engine.space()));
        CHECK(top.paths(0, 0) > med.paths(0, 0));
        CHECK(top.target_path(0) == med.target_path(0));
        CHECK(top.target_path(1) > med.target_path(1));
    }

    TEST_CASE("projection is deterministic and evaluation consistent")
    {
        const auto& t = testutil::ga5_model();
        const ScenarioEngine engine(t.bundle, t.series, 10);
        auto pol = median_policy(engine.space());
        for (std::size_t v = 0; v < 4; ++v)
            for (std::size_t n = 0; n < 10; ++n)
                pol.at(v, n) = static_cast<std::uint8_t>((v * 3 + n) % 11);
        const auto a = engine.project(pol);
        const auto b = engine.project(pol);
        CHECK(a.paths == b.paths);
        CHECK(a.terminal == b.terminal);

        const GoalSpec goal{2.0, 0.05, 10};
        const auto o = engine.evaluate(pol, a, goal, FitnessWeights{});
        CHECK(o.o1 == doctest::Approx(std::abs(a.terminal - 2.0)));
        CHECK(o.o2 == doctest::Approx(objective_o2(engine.reference(), engine.normalized_paths(a))));
        CHECK(o.o3 == doctest::Approx(objective_o3(engine.space(), pol)));
        CHECK(o.fitness == doctest::Approx(o.o1_rel + 0.1 * o.o2 + 0.1 * o.o3));
        CHECK(engine.reference().size() == 50);
    }

    TEST_CASE("median scenario stays near the unperturbed forecast")
    {
        const auto& t = testutil::ga5_model();
        const ScenarioEngine engine(t.bundle, t.series, 10);
        const auto med = engine.project(median_policy(engine.space()));
        double spread = 0.0;
        for (std::size_t v = 0; v < 5; ++v)
            spread = std::max(spread, std::abs(med.paths(static_cast<Eigen::Index>(v), 9)));
        auto top = median_policy(engine.space());
        for (std::size_t v = 0; v < 4; ++v)
            for (std::size_t n = 0; n < 10; ++n)
                top.at(v, n) = 10;
        const auto hi = engine.project(top);
        CHECK(hi.terminal > med.terminal + 5.0);
        CHECK(spread < 3.0);
    }

    TEST_CASE("direct horizon forecaster")
    {
        const auto s = generate_var(testutil::driver_spec(), 1200, 8);
        TrainOptions o;
        o.threads = 1;
        o.horizon = 3;
        const auto b = train_bundle(s, o);
        CHECK_FALSE(b.main.recursive());
        CHECK(b.history_rows_required() == 7);
        const ScenarioEngine engine(b, s, 4);
        const auto p = engine.project(median_policy(engine.space()));
        CHECK(p.target_path.size() == 4);
        CHECK(std::isfinite(p.terminal));
        CHECK(p.paths(1, 0) != p.target_path(0));
    }

    TEST_CASE("json forms")
    {
        const auto& t = testutil::driver_model();
        const ScenarioEngine engine(t.bundle, t.series, 3);
        auto pol = median_policy(engine.space());
        pol.at(0, 2) = 9;
        const auto j = policy_to_json(pol);
        CHECK(policy_from_json(j, engine.space()) == pol);

        nlohmann::json short_row = j;
        short_row["genes"][0].erase(0);
        CHECK_THROWS_AS(policy_from_json(short_row, engine.space()), ConfigError);
        CHECK_THROWS_AS(policy_from_json(nlohmann::json::object(), engine.space()), ConfigError);

        const auto p = engine.project(pol);
        const auto o = engine.evaluate(pol, p, GoalSpec{1.0, 0.05, 3}, FitnessWeights{});
        const auto doc = projection_to_json(t.bundle, engine.space(), pol, p, o);
        CHECK(doc.at("steps") == 3);
        CHECK(doc.at("variables").size() == 2);
        CHECK(doc.at("variables")[0].at("levels")[2].get<double>() == doctest::Approx(0.85));
        CHECK(doc.at("likelihood_percent").get<double>() == doctest::Approx(100.0 * p.likelihood));
        CHECK(doc.at("terminal").get<double>() == p.terminal);
    }
}
