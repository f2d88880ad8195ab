#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include "helpers.hpp"
#include "whatif/error.hpp"
#include "whatif/series.hpp"
#include "whatif/synth.hpp"

using namespace whatif;

TEST_SUITE("series")
{
    TEST_CASE("csv with timestamp and two columns")
    {
        std::istringstream in("t,a,b\n0,1,5\n3,2,6\n6,3,7\n9,4,8\n");
        const auto r = read_csv(in, {"b"});
        CHECK(r.series.variables() == 2);
        CHECK(r.series.length() == 4);
        CHECK(r.series.target() == 1);
        CHECK(r.series.delta_seconds() == doctest::Approx(3.0));
        CHECK(r.series.actionable() == std::vector<bool>{true, false});
        CHECK(r.series.at(2, 0) == 3.0);
    }

    TEST_CASE("csv errors")
    {
        auto error_of = [](const std::string& text, CsvOptions opt = {"b"}) {
            std::istringstream in(text);
            try {
                read_csv(in, opt);
            } catch (const std::exception& e) {
                return std::string(e.what());
            }
            return std::string();
        };
        CHECK(error_of("t,a,b\n0,1,2\n0,2,3\n").find("non-monotone timestamps") != std::string::npos);
        CHECK(error_of("t\n0\n1\n").find("malformed header") != std::string::npos);
        CHECK(error_of("t,a,b\n0,,2\n1,,3\n").find("column 'a' is empty") != std::string::npos);
        CHECK(error_of("t,a,b\n0,1,2\n1,2,3\n", {"zz"}).find("unknown target") != std::string::npos);
        CHECK(error_of("t,a,b\n0,1,2\n1,,3\n").find("missing value") != std::string::npos);
        CHECK(error_of("t,a,b\n0,1,2\n1,2,3\n5,3,4\n").find("irregular") != std::string::npos);

        std::istringstream unknown("t,a,b\n0,1,2\n1,2,3\n");
        CHECK_THROWS_AS(read_csv(unknown, {"zz"}), ConfigError);
    }

    TEST_CASE("forward fill keeps length and reports the fill")
    {
        std::istringstream in("t,a,b\n0,1,5\n1,,6\n2,3,7\n3,4,8\n");
        CsvOptions opt{"b", MissingPolicy::forward_fill, std::nullopt};
        const auto r = read_csv(in, opt);
        CHECK(r.series.length() == 4);
        CHECK(r.report.filled_cells == 1);
        CHECK(r.report.dropped_rows == 0);
        CHECK(r.series.at(1, 0) == 1.0);
    }

    TEST_CASE("iso timestamps")
    {
        CHECK(parse_timestamp("2024-01-01T00:00:00Z") == 1704067200LL * 1'000'000'000LL);
        CHECK(parse_timestamp("2024-01-01T00:00:01.5") == 1704067201LL * 1'000'000'000LL + 500'000'000LL);
        CHECK(parse_timestamp("42") == 42LL * 1'000'000'000LL);
        CHECK(format_timestamp(1704067200LL * 1'000'000'000LL) == "2024-01-01T00:00:00Z");
        CHECK_THROWS_AS(parse_timestamp("yesterday"), DataError);
    }

    TEST_CASE("series invariants")
    {
        Eigen::MatrixXd v(3, 1);
        v << 1, 2, 3;
        CHECK_THROWS_AS(MultivariateSeries({"a"}, {0, 2, 1}, v, 0), DataError);
        v(1, 0) = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(MultivariateSeries({"a"}, {0, 1, 2}, v, 0), DataError);
        v(1, 0) = 2;
        CHECK_THROWS_AS(MultivariateSeries({"a"}, {0, 1, 2}, v, 0, {true}), DataError);
        CHECK_NOTHROW(MultivariateSeries({"a"}, {0, 1, 2}, v, 0));
    }

    TEST_CASE("lag design example")
    {
        Eigen::MatrixXd v(4, 1);
        v << 1, 2, 3, 4;
        const auto s = testutil::series_of(v, 0);
        const std::vector<std::size_t> inc{0};
        const auto d = make_lag_design(s, 0, inc, 2);
        REQUIRE(d.samples() == 2);
        CHECK(d.rows(0, 0) == 2);
        CHECK(d.rows(0, 1) == 1);
        CHECK(d.rows(1, 0) == 3);
        CHECK(d.rows(1, 1) == 2);
        CHECK(d.targets(0) == 3);
        CHECK(d.targets(1) == 4);
        CHECK_THROWS_AS(make_lag_design(s, 0, inc, 4), ConfigError);
        CHECK_THROWS_AS(make_lag_design(s, 0, std::vector<std::size_t>{}, 1), ConfigError);
    }

    TEST_CASE("lag design layout for two variables")
    {
        Eigen::MatrixXd v(5, 2);
        v << 1, 10, 2, 20, 3, 30, 4, 40, 5, 50;
        const auto s = testutil::series_of(v, 0);
        const std::vector<std::size_t> inc{0, 1};
        const auto d = make_lag_design(s, 0, inc, 1);
        REQUIRE(d.features() == 2);
        CHECK(d.columns[0] == FeatureColumn{0, 1});
        CHECK(d.columns[1] == FeatureColumn{1, 1});
        CHECK(d.samples() == 4);
    }

    TEST_CASE("lag design reproduces the series")
    {
        std::mt19937_64 rng(3);
        std::normal_distribution<double> n;
        for (std::size_t p : {1, 3, 6}) {
            Eigen::MatrixXd v(40, 3);
            for (Eigen::Index i = 0; i < v.size(); ++i)
                v.data()[i] = n(rng);
            const auto s = testutil::series_of(v, 2);
            const std::vector<std::size_t> inc{2, 0, 1};
            const auto d = make_lag_design(s, 2, inc, p);
            CHECK(d.samples() == 40 - p);
            CHECK(d.features() == 3 * p);
            for (std::size_t i = 0; i < d.samples(); ++i) {
                const std::size_t t = d.target_times[i];
                CHECK(d.targets(static_cast<Eigen::Index>(i)) == s.at(t, 2));
                for (std::size_t c = 0; c < d.features(); ++c)
                    CHECK(d.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) ==
                          s.at(t - d.columns[c].lag, d.columns[c].variable));
            }
        }
    }

    TEST_CASE("walk-forward example")
    {
        const auto plan = walk_forward_splits(100, 5, 50);
        REQUIRE(plan.folds.size() == 5);
        CHECK(plan.folds[0].train == IndexRange{0, 50});
        for (std::size_t k = 0; k < 5; ++k) {
            CHECK(plan.folds[k].validation.size() == 10);
            CHECK(plan.folds[k].train.end == plan.folds[k].validation.begin);
        }
        CHECK_THROWS_AS(walk_forward_splits(10, 5, 9), DataError);
        CHECK_THROWS_AS(walk_forward_splits(100, 1, 50), ConfigError);
    }

    TEST_CASE("walk-forward plans never leak")
    {
        for (std::size_t T = 20; T <= 200; ++T)
            for (std::size_t n = 2; n <= 10; ++n)
                for (std::size_t min_train = 1; min_train + n <= T; min_train += 7) {
                    const auto plan = walk_forward_splits(T, n, min_train);
                    REQUIRE(plan.folds.size() == n);
                    for (std::size_t k = 0; k < n; ++k) {
                        const auto& f = plan.folds[k];
                        CHECK(f.train.begin == 0);
                        CHECK(f.train.end >= min_train);
                        CHECK(f.validation.begin >= f.train.end);
                        CHECK(f.validation.size() == plan.folds[0].validation.size());
                        if (k > 0)
                            CHECK(f.validation.begin >= plan.folds[k - 1].validation.end);
                    }
                    CHECK(plan.folds.back().validation.end == T);
                }
    }

    TEST_CASE("metrics examples")
    {
        const std::vector<double> a{1, 2, 3};
        auto m = compute_metrics(a, a);
        CHECK(m.mae == 0.0);
        CHECK(m.mse == 0.0);
        CHECK(m.r2 == 1.0);

        const std::vector<double> pred{2, 4}, actual{1, 3};
        m = compute_metrics(pred, actual);
        CHECK(m.mae == doctest::Approx(1.0));
        CHECK(m.mse == doctest::Approx(1.0));
        CHECK(m.r2 == doctest::Approx(0.0));

        const std::vector<double> flat{2, 2, 2};
        m = compute_metrics(a, flat);
        CHECK_FALSE(m.r2_defined);
        CHECK(std::isnan(m.r2));

        const std::vector<double> with_zero{0, 2, 4};
        m = compute_metrics(a, with_zero);
        CHECK(m.mape_excluded == 1);
        CHECK(m.mape == doctest::Approx((0.0 / 2 + 1.0 / 4) / 2));

        CHECK_THROWS_AS(compute_metrics(a, pred), ConfigError);
        CHECK_THROWS_AS(compute_metrics(std::vector<double>{1}, std::vector<double>{1}), ConfigError);
    }

    TEST_CASE("mean predictor scores zero and permutation does not matter")
    {
        std::mt19937_64 rng(9);
        std::normal_distribution<double> n(3.0, 2.0);
        std::vector<double> actual(257), pred(257);
        for (auto& x : actual)
            x = n(rng);
        for (auto& x : pred)
            x = n(rng);
        const double mean = std::accumulate(actual.begin(), actual.end(), 0.0) / static_cast<double>(actual.size());
        const std::vector<double> flat(actual.size(), mean);
        CHECK(compute_metrics(flat, actual).r2 == 0.0);

        const auto base = compute_metrics(pred, actual);
        CHECK(base.r2 <= 1.0);
        std::vector<std::size_t> idx(actual.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        std::vector<double> pa, aa;
        for (auto i : idx) {
            pa.push_back(pred[i]);
            aa.push_back(actual[i]);
        }
        const auto perm = compute_metrics(pa, aa);
        CHECK(perm.mae == doctest::Approx(base.mae).epsilon(1e-12));
        CHECK(perm.mse == doctest::Approx(base.mse).epsilon(1e-12));
        CHECK(perm.r2 == doctest::Approx(base.r2).epsilon(1e-12));
    }

    TEST_CASE("csv and bundle round trip are lossless")
    {
        const auto s = generate_var(benchmark("granger4"), 300, 4);
        std::stringstream buf;
        write_csv(buf, s);
        const auto back = read_csv(buf, {"x4"}).series;
        CHECK(back.values() == s.values());
        CHECK(back.timestamps_ns() == s.timestamps_ns());

        const auto dir = testutil::temp_dir("series_bundle");
        save_series_bundle(dir, s);
        const auto loaded = load_series_bundle(dir);
        CHECK(loaded.values() == s.values());
        CHECK(loaded.names() == s.names());
        CHECK(loaded.target() == s.target());
        CHECK(loaded.actionable() == s.actionable());
        CHECK(loaded.delta_ns() == s.delta_ns());
    }

    TEST_CASE("slice keeps metadata")
    {
        const auto s = generate_var(benchmark("granger4"), 200, 1);
        const auto part = s.slice(50, 150);
        CHECK(part.length() == 100);
        CHECK(part.at(0, 2) == s.at(50, 2));
        CHECK(part.target() == s.target());
        CHECK_THROWS_AS(s.slice(150, 150), ConfigError);
    }
}
