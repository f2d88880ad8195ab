#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "whatif/series.hpp"

namespace whatif {

struct TTestResult {
    double t_stat = 0.0;
    double p_value = 0.5;
};

/// One-sided paired t-test of H1: mean(d) > 0. Uses the upper tail of
/// Student-t with n−1 degrees of freedom. Zero-variance samples map to
/// p = 0 (positive mean), 1 (negative mean) or 0.5 (zero mean).
TTestResult paired_t_test(std::span<const double> differences);

/// P(T > t) for Student-t with `df` degrees of freedom.
double student_t_upper_tail(double t, double df);

/// Which lags the restricted model carries besides the effect's own.
enum class GrangerMode {
    pairwise,    ///< effect's own lags only
    conditional, ///< effect's own lags plus every other variable except the cause
};

struct GrangerOptions {
    double alpha = 0.05;
    double ridge_lambda = 1e-6;
    GrangerMode mode = GrangerMode::conditional;
};

struct GrangerResult {
    std::size_t cause = 0;
    std::size_t effect = 0;
    std::vector<double> fold_errors_restricted;
    std::vector<double> fold_errors_unrestricted;
    std::size_t skipped_folds = 0;
    double t_stat = 0.0;
    double p_value = 1.0;
    bool significant = false;
};

/// Fits restricted and unrestricted AR models on every training window of
/// `plan`, scores validation MAE, and tests whether adding the cause's lags
/// lowers the error. Folds whose fit is singular are skipped; fewer than two
/// surviving folds is an error.
GrangerResult granger_pair(const MultivariateSeries& series, std::size_t cause, std::size_t effect,
                           std::size_t lag_order, const SplitPlan& plan, const GrangerOptions& options = {});

/// Row = cause, column = effect. Diagonal entries are undefined (NaN p-value, false mask).
class CausalityMatrix {
public:
    CausalityMatrix() = default;
    CausalityMatrix(std::vector<std::string> names, Eigen::MatrixXd p_values, double alpha = 0.05);

    const std::vector<std::string>& names() const { return names_; }
    std::size_t size() const { return names_.size(); }
    const Eigen::MatrixXd& p_values() const { return p_values_; }
    double p_value(std::size_t cause, std::size_t effect) const;
    bool significant(std::size_t cause, std::size_t effect) const;
    double alpha() const { return alpha_; }
    std::size_t index_of(const std::string& name) const;

    bool operator==(const CausalityMatrix& other) const;

private:
    std::vector<std::string> names_;
    Eigen::MatrixXd p_values_;
    double alpha_ = 0.05;
};

/// Runs granger_pair for every ordered pair of distinct variables.
/// `threads` = 0 uses the hardware concurrency; the result does not depend
/// on it.
CausalityMatrix causality_matrix(const MultivariateSeries& series, std::size_t lag_order, const SplitPlan& plan,
                                 const GrangerOptions& options = {}, std::size_t threads = 1);

/// Default plan used for causality screening: 10 folds after a training
/// window of 90% of the series.
SplitPlan default_causality_plan(std::size_t length, std::size_t n_folds = 10);

/// The effect itself followed by its significant causes in matrix order.
std::vector<std::size_t> select_features(const CausalityMatrix& matrix, std::size_t effect);

/// Writes the p-value grid to `path` and the 0/1 mask grid next to it
/// (`<stem>_mask.csv`). Header row and first column carry the names; the
/// diagonal is an empty cell.
void export_heatmap(const CausalityMatrix& matrix, const std::filesystem::path& path);
CausalityMatrix import_heatmap(const std::filesystem::path& path, double alpha = 0.05);
std::filesystem::path heatmap_mask_path(const std::filesystem::path& path);

} // namespace whatif
