#include <doctest.h>

#include <sstream>

#include "helpers.hpp"
#include "whatif/error.hpp"
#include "whatif/evaluate.hpp"

using namespace whatif;

TEST_SUITE("evaluate")
{
    TEST_CASE("granger-selected ridge beats the mean")
    {
        const auto s = generate_var(benchmark("granger4"), 1500, 3);
        const auto c = causality_matrix(s, 5, default_causality_plan(s.length()));
        const auto learners = default_learners(s, c);
        REQUIRE(learners.size() == 4);
        CHECK(learners[2].features.size() > 1);
        const auto rows = walk_forward_evaluate(s, learners, {});
        REQUIRE(rows.size() == 4);
        CHECK(rows[0].learner == "mean");
        CHECK(rows[2].metrics.r2_defined);
        CHECK(rows[2].metrics.r2 > 0.0);
        CHECK(rows[2].metrics.mse < rows[1].metrics.mse);
        CHECK(rows[2].metrics.mse < rows[0].metrics.mse);
        CHECK(rows[3].metrics.mae < rows[0].metrics.mae);
        for (const auto& r : rows)
            CHECK(r.metrics.n == rows[0].metrics.n);
    }

    TEST_CASE("constant target leaves r2 undefined")
    {
        Eigen::MatrixXd v(200, 2);
        for (Eigen::Index i = 0; i < 200; ++i) {
            v(i, 0) = std::sin(0.1 * static_cast<double>(i));
            v(i, 1) = 4.0;
        }
        const auto s = testutil::series_of(v, 1);
        const std::vector<LearnerSpec> learners{{"mean", LearnerKind::train_mean, {1}}};
        const auto rows = walk_forward_evaluate(s, learners, {});
        CHECK_FALSE(rows[0].metrics.r2_defined);
        CHECK(rows[0].metrics.mae == 0.0);
    }

    TEST_CASE("metrics csv round trip")
    {
        const auto s = generate_var(benchmark("null2"), 400, 2);
        const std::vector<LearnerSpec> learners{{"mean", LearnerKind::train_mean, {1}},
                                                {"ridge-self", LearnerKind::ridge, {1}}};
        const auto rows = walk_forward_evaluate(s, learners, {});
        std::stringstream buf;
        write_metrics_csv(buf, rows);
        const auto back = read_metrics_csv(buf);
        REQUIRE(back.size() == 2);
        CHECK(back[1].learner == "ridge-self");
        CHECK(back[1].metrics.mse == rows[1].metrics.mse);
        CHECK(back[0].metrics.r2 == rows[0].metrics.r2);
        CHECK(back[0].metrics.wall_time_fit == rows[0].metrics.wall_time_fit);

        std::istringstream bad("nope\n");
        CHECK_THROWS_AS(read_metrics_csv(bad), DataError);
        EvaluationOptions o;
        o.min_train_fraction = 1.0;
        CHECK_THROWS_AS(walk_forward_evaluate(s, learners, o), ConfigError);
    }
}
