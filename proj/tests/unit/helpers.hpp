#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "whatif/bundle.hpp"
#include "whatif/series.hpp"
#include "whatif/synth.hpp"

namespace testutil {

inline std::vector<std::int64_t> stamps(std::size_t n, std::int64_t step_ns = 3'000'000'000LL)
{
    std::vector<std::int64_t> out(n);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = 1'700'000'000'000'000'000LL + static_cast<std::int64_t>(i) * step_ns;
    return out;
}

inline whatif::MultivariateSeries series_of(const Eigen::MatrixXd& values, std::size_t target)
{
    std::vector<std::string> names;
    for (Eigen::Index v = 0; v < values.cols(); ++v)
        names.push_back("v" + std::to_string(v));
    return {names, stamps(static_cast<std::size_t>(values.rows())), values, target};
}

/// Design with the given rows and targets and no lag bookkeeping.
inline whatif::LagDesign raw_design(const Eigen::MatrixXd& rows, const Eigen::VectorXd& targets)
{
    whatif::LagDesign d;
    d.rows = rows;
    d.targets = targets;
    d.lag_order = 1;
    for (Eigen::Index c = 0; c < rows.cols(); ++c)
        d.columns.push_back({static_cast<std::size_t>(c), 1});
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
        d.target_times.push_back(static_cast<std::size_t>(i));
    return d;
}

inline whatif::VarSystemSpec ar1_spec(double phi)
{
    whatif::VarSystemSpec s;
    s.name = "ar1";
    s.names = {"y"};
    s.coefficients = {Eigen::MatrixXd::Constant(1, 1, phi)};
    s.noise_sigma = Eigen::VectorXd::Ones(1);
    s.target = 0;
    return s;
}

/// x1 drives x2; x2 is the target.
inline whatif::VarSystemSpec driver_spec()
{
    whatif::VarSystemSpec s;
    s.name = "driver";
    s.names = {"x1", "x2"};
    Eigen::MatrixXd A(2, 2);
    A << 0.5, 0.0, 0.8, 0.5;
    s.coefficients = {A};
    s.noise_sigma = Eigen::VectorXd::Ones(2);
    s.target = 1;
    return s;
}

struct Trained {
    whatif::MultivariateSeries series;
    whatif::ModelBundle bundle;
};

inline const Trained& ga5_model()
{
    static const Trained t = [] {
        auto s = whatif::generate_var(whatif::benchmark("ga5"), 2000, 11);
        whatif::TrainOptions o;
        o.threads = 1;
        auto b = whatif::train_bundle(s, o);
        return Trained{std::move(s), std::move(b)};
    }();
    return t;
}

inline const Trained& driver_model()
{
    static const Trained t = [] {
        auto s = whatif::generate_var(driver_spec(), 1500, 5);
        whatif::TrainOptions o;
        o.threads = 1;
        auto b = whatif::train_bundle(s, o);
        return Trained{std::move(s), std::move(b)};
    }();
    return t;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / ("whatif_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace testutil
