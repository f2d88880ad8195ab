#include "whatif/evaluate.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "whatif/error.hpp"

namespace whatif {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t)
{
    return std::chrono::duration<double>(Clock::now() - t).count();
}

LagDesign rows_between(const LagDesign& d, std::size_t begin, std::size_t end)
{
    LagDesign out;
    out.lag_order = d.lag_order;
    out.response = d.response;
    out.columns = d.columns;
    const auto b = static_cast<Eigen::Index>(begin);
    const auto n = static_cast<Eigen::Index>(end - begin);
    out.rows = d.rows.middleRows(b, n);
    out.targets = d.targets.segment(b, n);
    out.target_times.assign(d.target_times.begin() + b, d.target_times.begin() + b + n);
    return out;
}

std::vector<std::string> split(const std::string& line)
{
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
        out.push_back(cell);
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

double to_double(const std::string& s)
{
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size())
        throw DataError("metrics CSV: invalid number '" + s + "'");
    return v;
}

std::size_t to_count(const std::string& s)
{
    try {
        std::size_t used = 0;
        const auto v = std::stoull(s, &used);
        if (used != s.size())
            throw std::invalid_argument(s);
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw DataError("metrics CSV: invalid count '" + s + "'");
    }
}

constexpr const char* kHeader =
    "learner,n,mae,mse,r2,r2_defined,mape,mape_defined,mape_excluded,wall_time_fit,wall_time_predict";

} // namespace

std::vector<LearnerSpec> default_learners(const MultivariateSeries& series, const CausalityMatrix& causality)
{
    const std::size_t target = series.target();
    const auto selected = select_features(causality, target);
    return {
        {"mean", LearnerKind::train_mean, {target}},
        {"ridge-self", LearnerKind::ridge, {target}},
        {"ridge-granger", LearnerKind::ridge, selected},
        {"quantile-median-granger", LearnerKind::quantile_median, selected},
    };
}

std::vector<EvaluationRow> walk_forward_evaluate(const MultivariateSeries& series,
                                                 std::span<const LearnerSpec> learners,
                                                 const EvaluationOptions& options)
{
    if (!(options.min_train_fraction > 0.0 && options.min_train_fraction < 1.0))
        throw ConfigError("min_train_fraction must lie in (0, 1)");
    std::vector<EvaluationRow> out;
    for (const auto& learner : learners) {
        const auto design = make_lag_design(series, series.target(), learner.features, options.lag_order);
        const std::size_t M = design.samples();
        const auto min_train =
            static_cast<std::size_t>(std::floor(options.min_train_fraction * static_cast<double>(M)));
        const auto plan = walk_forward_splits(M, options.n_folds, min_train);

        std::vector<double> pred, actual;
        double fit_seconds = 0.0, predict_seconds = 0.0;
        for (const auto& fold : plan.folds) {
            const auto train = rows_between(design, fold.train.begin, fold.train.end);
            const auto valid = rows_between(design, fold.validation.begin, fold.validation.end);
            Eigen::VectorXd p;
            auto t0 = Clock::now();
            switch (learner.kind) {
            case LearnerKind::train_mean: {
                const double mean = train.targets.mean();
                fit_seconds += seconds_since(t0);
                t0 = Clock::now();
                p = Eigen::VectorXd::Constant(valid.targets.size(), mean);
                break;
            }
            case LearnerKind::ridge: {
                const auto model = fit_ridge(train, options.ridge_lambda);
                fit_seconds += seconds_since(t0);
                t0 = Clock::now();
                p = model.predict(valid.rows);
                break;
            }
            case LearnerKind::quantile_median: {
                const auto model = fit_quantile(train, 0.5, options.quantile);
                fit_seconds += seconds_since(t0);
                t0 = Clock::now();
                p = model.base.predict(valid.rows);
                break;
            }
            }
            predict_seconds += seconds_since(t0);
            pred.insert(pred.end(), p.data(), p.data() + p.size());
            actual.insert(actual.end(), valid.targets.data(), valid.targets.data() + valid.targets.size());
        }
        EvaluationRow row{learner.name, compute_metrics(pred, actual)};
        row.metrics.wall_time_fit = fit_seconds;
        row.metrics.wall_time_predict = predict_seconds;
        out.push_back(std::move(row));
    }
    return out;
}

void write_metrics_csv(std::ostream& out, std::span<const EvaluationRow> rows)
{
    out << kHeader << '\n';
    for (const auto& r : rows) {
        const auto& m = r.metrics;
        out << r.learner << ',' << m.n << ',' << format_double(m.mae) << ',' << format_double(m.mse) << ','
            << format_double(m.r2) << ',' << (m.r2_defined ? 1 : 0) << ',' << format_double(m.mape) << ','
            << (m.mape_defined ? 1 : 0) << ',' << m.mape_excluded << ',' << format_double(m.wall_time_fit) << ','
            << format_double(m.wall_time_predict) << '\n';
    }
}

std::vector<EvaluationRow> read_metrics_csv(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line) || line != kHeader)
        throw DataError("metrics CSV: unexpected header");
    std::vector<EvaluationRow> rows;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        const auto c = split(line);
        if (c.size() != 11)
            throw DataError("metrics CSV: expected 11 columns");
        EvaluationRow r;
        r.learner = c[0];
        auto& m = r.metrics;
        m.n = to_count(c[1]);
        m.mae = to_double(c[2]);
        m.mse = to_double(c[3]);
        m.r2 = to_double(c[4]);
        m.r2_defined = c[5] == "1";
        m.mape = to_double(c[6]);
        m.mape_defined = c[7] == "1";
        m.mape_excluded = to_count(c[8]);
        m.wall_time_fit = to_double(c[9]);
        m.wall_time_predict = to_double(c[10]);
        rows.push_back(std::move(r));
    }
    return rows;
}

void print_metrics_table(std::ostream& out, std::span<const EvaluationRow> rows)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-26s %8s %12s %12s %10s %10s %10s\n", "learner", "n", "MAE", "MSE", "R2",
                  "fit[s]", "pred[s]");
    out << buf;
    for (const auto& r : rows) {
        const auto& m = r.metrics;
        const std::string r2 = m.r2_defined ? std::to_string(m.r2).substr(0, 8) : "undefined";
        std::snprintf(buf, sizeof buf, "%-26s %8zu %12.6g %12.6g %10s %10.4f %10.4f\n", r.learner.c_str(), m.n,
                      m.mae, m.mse, r2.c_str(), m.wall_time_fit, m.wall_time_predict);
        out << buf;
    }
}

} // namespace whatif
