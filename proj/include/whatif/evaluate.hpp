#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "whatif/causality.hpp"
#include "whatif/learners.hpp"
#include "whatif/series.hpp"

namespace whatif {

enum class LearnerKind { train_mean, ridge, quantile_median };

struct LearnerSpec {
    std::string name;
    LearnerKind kind = LearnerKind::ridge;
    std::vector<std::size_t> features; ///< response first
};

struct EvaluationOptions {
    std::size_t lag_order = 5;
    std::size_t n_folds = 5;
    double min_train_fraction = 0.5;
    double ridge_lambda = 1e-6;
    QuantileFitOptions quantile;
};

struct EvaluationRow {
    std::string learner;
    MetricsReport metrics;
};

/// Mean baseline, ridge on the target's own lags, ridge and median
/// quantile regression on the Granger-selected features.
std::vector<LearnerSpec> default_learners(const MultivariateSeries& series, const CausalityMatrix& causality);

/// Walk-forward evaluation of one-step forecasts of the series target.
/// Metrics pool every validation prediction; wall times sum over folds.
std::vector<EvaluationRow> walk_forward_evaluate(const MultivariateSeries& series,
                                                 std::span<const LearnerSpec> learners,
                                                 const EvaluationOptions& options);

void write_metrics_csv(std::ostream& out, std::span<const EvaluationRow> rows);
std::vector<EvaluationRow> read_metrics_csv(std::istream& in);
void print_metrics_table(std::ostream& out, std::span<const EvaluationRow> rows);

} // namespace whatif
