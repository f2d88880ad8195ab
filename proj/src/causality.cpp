#include "whatif/causality.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "whatif/error.hpp"
#include "whatif/learners.hpp"
#include "whatif/parallel.hpp"

namespace whatif {

double student_t_upper_tail(double t, double df)
{
    if (!(df > 0.0))
        throw ConfigError("Student-t needs positive degrees of freedom");
    if (std::isnan(t))
        throw ConfigError("Student-t statistic is NaN");
    if (std::isinf(t))
        return t > 0 ? 0.0 : 1.0;
    const boost::math::students_t dist(df);
    return boost::math::cdf(boost::math::complement(dist, t));
}

TTestResult paired_t_test(std::span<const double> differences)
{
    const std::size_t n = differences.size();
    if (n < 2)
        throw ConfigError("paired t-test needs at least two differences");
    const double mean = std::accumulate(differences.begin(), differences.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double d : differences)
        ss += (d - mean) * (d - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));

    TTestResult r;
    if (sd == 0.0 || sd <= 1e-12 * std::abs(mean)) {
        if (mean > 0.0) {
            r.t_stat = std::numeric_limits<double>::infinity();
            r.p_value = 0.0;
        } else if (mean < 0.0) {
            r.t_stat = -std::numeric_limits<double>::infinity();
            r.p_value = 1.0;
        } else {
            r.t_stat = 0.0;
            r.p_value = 0.5;
        }
        return r;
    }
    r.t_stat = mean / (sd / std::sqrt(static_cast<double>(n)));
    r.p_value = student_t_upper_tail(r.t_stat, static_cast<double>(n - 1));
    return r;
}

namespace {

double validation_mae(const LinearModel& model, const LagDesign& validation)
{
    const Eigen::VectorXd pred = model.predict(validation.rows);
    return (validation.targets - pred).cwiseAbs().mean();
}

} // namespace

GrangerResult granger_pair(const MultivariateSeries& series, std::size_t cause, std::size_t effect,
                           std::size_t lag_order, const SplitPlan& plan, const GrangerOptions& options)
{
    if (cause == effect)
        throw ConfigError("cause and effect must differ");
    if (cause >= series.variables() || effect >= series.variables())
        throw ConfigError("granger variable out of range");
    if (plan.folds.size() < 2)
        throw ConfigError("granger test needs a plan with at least 2 folds");

    std::vector<std::size_t> restricted{effect};
    if (options.mode == GrangerMode::conditional)
        for (std::size_t v = 0; v < series.variables(); ++v)
            if (v != cause && v != effect)
                restricted.push_back(v);
    std::vector<std::size_t> unrestricted = restricted;
    unrestricted.push_back(cause);

    const auto design_r = make_lag_design(series, effect, restricted, lag_order);
    const auto design_u = make_lag_design(series, effect, unrestricted, lag_order);

    GrangerResult result;
    result.cause = cause;
    result.effect = effect;
    std::vector<double> deltas;
    for (const auto& fold : plan.folds) {
        try {
            const auto train_r = design_r.restrict_to(fold.train.begin, fold.train.end);
            const auto train_u = design_u.restrict_to(fold.train.begin, fold.train.end);
            const auto model_r = fit_ridge(train_r, options.ridge_lambda);
            const auto model_u = fit_ridge(train_u, options.ridge_lambda);
            const auto val_r = design_r.restrict_to(fold.validation.begin, fold.validation.end);
            const auto val_u = design_u.restrict_to(fold.validation.begin, fold.validation.end);
            if (val_r.samples() == 0)
                throw DataError("empty validation block");
            const double mae_r = validation_mae(model_r, val_r);
            const double mae_u = validation_mae(model_u, val_u);
            result.fold_errors_restricted.push_back(mae_r);
            result.fold_errors_unrestricted.push_back(mae_u);
            deltas.push_back(mae_r - mae_u);
        } catch (const DataError&) {
            ++result.skipped_folds;
        } catch (const ConfigError&) {
            ++result.skipped_folds;
        }
    }
    if (deltas.size() < 2)
        throw DataError("granger test " + series.names()[cause] + " -> " + series.names()[effect] + ": only " +
                        std::to_string(deltas.size()) + " folds could be fitted");
    const auto t = paired_t_test(deltas);
    result.t_stat = t.t_stat;
    result.p_value = t.p_value;
    result.significant = t.p_value < options.alpha;
    return result;
}

CausalityMatrix::CausalityMatrix(std::vector<std::string> names, Eigen::MatrixXd p_values, double alpha)
    : names_(std::move(names))
    , p_values_(std::move(p_values))
    , alpha_(alpha)
{
    const auto V = static_cast<Eigen::Index>(names_.size());
    if (p_values_.rows() != V || p_values_.cols() != V)
        throw DataError("causality matrix must be " + std::to_string(V) + "x" + std::to_string(V));
    if (!(alpha_ > 0.0 && alpha_ < 1.0))
        throw ConfigError("significance level must lie in (0,1)");
    for (Eigen::Index i = 0; i < V; ++i)
        for (Eigen::Index j = 0; j < V; ++j) {
            if (i == j) {
                p_values_(i, j) = std::numeric_limits<double>::quiet_NaN();
                continue;
            }
            const double p = p_values_(i, j);
            if (!(p >= 0.0 && p <= 1.0))
                throw DataError("p-value outside [0,1] at (" + names_[static_cast<std::size_t>(i)] + ", " +
                                names_[static_cast<std::size_t>(j)] + ")");
        }
}

double CausalityMatrix::p_value(std::size_t cause, std::size_t effect) const
{
    return p_values_(static_cast<Eigen::Index>(cause), static_cast<Eigen::Index>(effect));
}

bool CausalityMatrix::significant(std::size_t cause, std::size_t effect) const
{
    return cause != effect && p_value(cause, effect) < alpha_;
}

std::size_t CausalityMatrix::index_of(const std::string& name) const
{
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end())
        throw ConfigError("unknown variable '" + name + "'");
    return static_cast<std::size_t>(it - names_.begin());
}

bool CausalityMatrix::operator==(const CausalityMatrix& other) const
{
    if (names_ != other.names_ || alpha_ != other.alpha_)
        return false;
    for (Eigen::Index i = 0; i < p_values_.rows(); ++i)
        for (Eigen::Index j = 0; j < p_values_.cols(); ++j)
            if (i != j && p_values_(i, j) != other.p_values_(i, j))
                return false;
    return true;
}

CausalityMatrix causality_matrix(const MultivariateSeries& series, std::size_t lag_order, const SplitPlan& plan,
                                 const GrangerOptions& options, std::size_t threads)
{
    const std::size_t V = series.variables();
    if (V < 2)
        throw ConfigError("causality matrix needs at least two variables");
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t c = 0; c < V; ++c)
        for (std::size_t e = 0; e < V; ++e)
            if (c != e)
                pairs.emplace_back(c, e);

    Eigen::MatrixXd p = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(V), static_cast<Eigen::Index>(V),
                                                  std::numeric_limits<double>::quiet_NaN());
    std::vector<double> results(pairs.size());
    parallel_for(pairs.size(), threads, [&](std::size_t i) {
        results[i] = granger_pair(series, pairs[i].first, pairs[i].second, lag_order, plan, options).p_value;
    });
    for (std::size_t i = 0; i < pairs.size(); ++i)
        p(static_cast<Eigen::Index>(pairs[i].first), static_cast<Eigen::Index>(pairs[i].second)) = results[i];
    return CausalityMatrix(series.names(), std::move(p), options.alpha);
}

SplitPlan default_causality_plan(std::size_t length, std::size_t n_folds)
{
    const auto min_train = static_cast<std::size_t>(0.9 * static_cast<double>(length));
    return walk_forward_splits(length, n_folds, std::min(min_train, length > n_folds ? length - n_folds : 0));
}

std::vector<std::size_t> select_features(const CausalityMatrix& matrix, std::size_t effect)
{
    if (effect >= matrix.size())
        throw ConfigError("effect variable out of range");
    std::vector<std::size_t> out{effect};
    for (std::size_t v = 0; v < matrix.size(); ++v)
        if (v != effect && matrix.significant(v, effect))
            out.push_back(v);
    return out;
}

std::filesystem::path heatmap_mask_path(const std::filesystem::path& path)
{
    auto mask = path;
    mask.replace_filename(path.stem().string() + "_mask" + path.extension().string());
    return mask;
}

namespace {

constexpr const char* kCorner = "cause\\effect";

std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
        out.push_back(cell);
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    for (auto& c : out)
        while (!c.empty() && (c.back() == '\r' || c.back() == ' '))
            c.pop_back();
    return out;
}

template <typename CellFn>
void write_grid(const std::filesystem::path& path, const CausalityMatrix& m, CellFn cell)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write " + path.string());
    out << kCorner;
    for (const auto& n : m.names())
        out << ',' << n;
    out << '\n';
    for (std::size_t i = 0; i < m.size(); ++i) {
        out << m.names()[i];
        for (std::size_t j = 0; j < m.size(); ++j) {
            out << ',';
            if (i != j)
                out << cell(i, j);
        }
        out << '\n';
    }
    if (!out)
        throw DataError("failed writing " + path.string());
}

std::vector<std::vector<std::string>> read_grid(const std::filesystem::path& path, std::vector<std::string>& names)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw DataError(path.string() + ": empty heatmap");
    auto header = split_csv(line);
    if (header.size() < 2)
        throw DataError(path.string() + ": malformed heatmap header");
    names.assign(header.begin() + 1, header.end());
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r")
            continue;
        auto cells = split_csv(line);
        if (cells.size() != names.size() + 1)
            throw DataError(path.string() + ": row has " + std::to_string(cells.size()) + " cells");
        if (cells[0] != names[rows.size()])
            throw DataError(path.string() + ": row label '" + cells[0] + "' does not match header");
        rows.emplace_back(cells.begin() + 1, cells.end());
        if (rows.size() > names.size())
            break;
    }
    if (rows.size() != names.size())
        throw DataError(path.string() + ": expected " + std::to_string(names.size()) + " rows");
    return rows;
}

} // namespace

void export_heatmap(const CausalityMatrix& matrix, const std::filesystem::path& path)
{
    write_grid(path, matrix, [&](std::size_t i, std::size_t j) { return format_double(matrix.p_value(i, j)); });
    write_grid(heatmap_mask_path(path), matrix,
               [&](std::size_t i, std::size_t j) { return std::string(matrix.significant(i, j) ? "1" : "0"); });
}

CausalityMatrix import_heatmap(const std::filesystem::path& path, double alpha)
{
    std::vector<std::string> names;
    const auto rows = read_grid(path, names);
    const auto V = static_cast<Eigen::Index>(names.size());
    Eigen::MatrixXd p(V, V);
    for (Eigen::Index i = 0; i < V; ++i)
        for (Eigen::Index j = 0; j < V; ++j) {
            const auto& cell = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            if (i == j) {
                if (!cell.empty())
                    throw DataError(path.string() + ": diagonal cell must be empty");
                p(i, j) = std::numeric_limits<double>::quiet_NaN();
                continue;
            }
            try {
                std::size_t used = 0;
                p(i, j) = std::stod(cell, &used);
                if (used != cell.size())
                    throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                throw DataError(path.string() + ": invalid p-value '" + cell + "'");
            }
        }
    CausalityMatrix matrix(std::move(names), std::move(p), alpha);

    const auto mask_path = heatmap_mask_path(path);
    if (std::filesystem::exists(mask_path)) {
        std::vector<std::string> mask_names;
        const auto mask = read_grid(mask_path, mask_names);
        if (mask_names != matrix.names())
            throw DataError(mask_path.string() + ": names differ from p-value grid");
        for (std::size_t i = 0; i < matrix.size(); ++i)
            for (std::size_t j = 0; j < matrix.size(); ++j)
                if (i != j && (mask[i][j] == "1") != matrix.significant(i, j))
                    throw DataError(mask_path.string() + ": mask disagrees with p-values");
    }
    return matrix;
}

} // namespace whatif
