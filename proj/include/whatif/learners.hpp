#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "whatif/series.hpp"

namespace whatif {

/// Affine predictor over lagged feature columns.
struct LinearModel {
    Eigen::VectorXd weights;
    double intercept = 0.0;
    std::vector<FeatureColumn> columns;
    double ridge_lambda = 0.0;

    double predict(std::span<const double> features) const;
    Eigen::VectorXd predict(const Eigen::MatrixXd& rows) const;
};

/// Solves (XcᵀXc + λI)w = Xcᵀyc on centered columns; the intercept restores
/// the means. Throws SingularSystem when λ = 0 and the system is rank
/// deficient.
LinearModel fit_ridge(const LagDesign& design, double lambda);

/// Asymmetric absolute loss max(τ·e, (τ−1)·e) with e = actual − pred.
double pinball_loss(double tau, double actual, double pred);

/// Mean pinball loss of a prediction vector.
double mean_pinball_loss(double tau, const Eigen::VectorXd& actual, const Eigen::VectorXd& pred);

struct QuantileFitOptions {
    std::size_t epochs = 500;
    double learning_rate = 0.05;
};

struct QuantileModel {
    double tau = 0.5;
    LinearModel base; ///< stored in original (un-normalized) units
    std::size_t training_epochs = 0;
    double learning_rate = 0.0;
    double initial_loss = 0.0; ///< mean pinball loss at the zero start, original units
    double final_loss = 0.0;
};

/// Linear quantile regression by normalized subgradient descent on the mean
/// pinball loss. Features and response are z-normalized internally, the
/// search starts at zero and uses step lr/√epoch; the lowest-loss iterate
/// is returned. Requires at least 20 samples.
QuantileModel fit_quantile(const LagDesign& design, double tau, const QuantileFitOptions& options = {});

/// {0.05, 0.15, 0.25, 0.35, 0.45, 0.50, 0.55, 0.65, 0.75, 0.85, 0.95}
std::vector<double> default_quantile_levels();

/// Throws ConfigError unless levels are strictly ascending inside (0,1) and contain 0.5.
void validate_levels(std::span<const double> levels);

struct QuantileBank {
    std::size_t variable = 0;
    std::vector<double> levels;
    std::vector<QuantileModel> models;
    std::vector<std::size_t> features; ///< variables whose lags feed the bank, self first
    std::size_t lag_order = 0;

    std::size_t median_index() const;
    std::vector<FeatureColumn> columns() const { return lag_columns(features, lag_order); }
};

QuantileBank fit_bank(const MultivariateSeries& series, std::size_t variable, std::span<const std::size_t> features,
                      std::span<const double> levels, std::size_t lag_order, const QuantileFitOptions& options = {});

/// Per-level predictions for one feature row (bank column layout), sorted
/// ascending so that quantiles never cross.
std::vector<double> predict_quantiles(const QuantileBank& bank, std::span<const double> lag_window);

} // namespace whatif
