#include "whatif/learners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "whatif/error.hpp"

namespace whatif {

double LinearModel::predict(std::span<const double> features) const
{
    if (features.size() != static_cast<std::size_t>(weights.size()))
        throw ConfigError("expected " + std::to_string(weights.size()) + " features, got " +
                          std::to_string(features.size()));
    double y = intercept;
    for (std::size_t k = 0; k < features.size(); ++k)
        y += weights(static_cast<Eigen::Index>(k)) * features[k];
    return y;
}

Eigen::VectorXd LinearModel::predict(const Eigen::MatrixXd& rows) const
{
    if (rows.cols() != weights.size())
        throw ConfigError("design has " + std::to_string(rows.cols()) + " columns, model expects " +
                          std::to_string(weights.size()));
    Eigen::VectorXd out = rows * weights;
    out.array() += intercept;
    return out;
}

LinearModel fit_ridge(const LagDesign& design, double lambda)
{
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw ConfigError("ridge lambda must be a finite nonnegative number");
    const auto M = design.rows.rows();
    const auto K = design.rows.cols();
    if (M <= K)
        throw ConfigError("ridge needs more samples (" + std::to_string(M) + ") than features (" +
                          std::to_string(K) + ")");

    LinearModel model;
    model.columns = design.columns;
    model.ridge_lambda = lambda;
    const double y_mean = design.targets.mean();
    if (K == 0) {
        model.weights.resize(0);
        model.intercept = y_mean;
        return model;
    }
    const Eigen::RowVectorXd x_mean = design.rows.colwise().mean();
    const Eigen::MatrixXd Xc = design.rows.rowwise() - x_mean;
    const Eigen::VectorXd yc = design.targets.array() - y_mean;

    Eigen::MatrixXd gram = Xc.transpose() * Xc;
    gram.diagonal().array() += lambda;
    const Eigen::VectorXd rhs = Xc.transpose() * yc;

    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    const Eigen::VectorXd pivots = ldlt.vectorD().cwiseAbs();
    if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-13 ||
        pivots.minCoeff() <= 1e-12 * std::max(pivots.maxCoeff(), 1e-300))
        throw SingularSystem("ridge system is singular at lambda=" + format_double(lambda));
    model.weights = ldlt.solve(rhs);
    if (!model.weights.allFinite())
        throw SingularSystem("ridge solution is not finite at lambda=" + format_double(lambda));
    model.intercept = y_mean - x_mean.dot(model.weights);
    return model;
}

double pinball_loss(double tau, double actual, double pred)
{
    if (!(tau > 0.0 && tau < 1.0))
        throw ConfigError("quantile level must lie in (0,1), got " + format_double(tau));
    const double e = actual - pred;
    return std::max(tau * e, (tau - 1.0) * e);
}

double mean_pinball_loss(double tau, const Eigen::VectorXd& actual, const Eigen::VectorXd& pred)
{
    double sum = 0.0;
    for (Eigen::Index i = 0; i < actual.size(); ++i) {
        const double e = actual(i) - pred(i);
        sum += std::max(tau * e, (tau - 1.0) * e);
    }
    return actual.size() ? sum / static_cast<double>(actual.size()) : 0.0;
}

QuantileModel fit_quantile(const LagDesign& design, double tau, const QuantileFitOptions& options)
{
    if (!(tau > 0.0 && tau < 1.0))
        throw ConfigError("quantile level must lie in (0,1), got " + format_double(tau));
    if (options.epochs < 1 || !(options.learning_rate > 0.0))
        throw ConfigError("quantile fit needs epochs >= 1 and a positive learning rate");
    const auto M = design.rows.rows();
    const auto K = design.rows.cols();
    if (M < 20)
        throw ConfigError("quantile fit needs at least 20 samples, got " + std::to_string(M));

    const Eigen::RowVectorXd x_mean = K ? Eigen::RowVectorXd(design.rows.colwise().mean()) : Eigen::RowVectorXd();
    Eigen::RowVectorXd x_scale(K);
    for (Eigen::Index k = 0; k < K; ++k) {
        const double sd = std::sqrt((design.rows.col(k).array() - x_mean(k)).square().mean());
        x_scale(k) = sd > 1e-12 ? sd : 1.0;
    }
    const double y_mean = design.targets.mean();
    double y_scale = std::sqrt((design.targets.array() - y_mean).square().mean());
    if (!(y_scale > 1e-12))
        y_scale = 1.0;

    const Eigen::MatrixXd Z = K ? Eigen::MatrixXd((design.rows.rowwise() - x_mean).array().rowwise() / x_scale.array())
                                : Eigen::MatrixXd(M, 0);
    const Eigen::VectorXd yz = (design.targets.array() - y_mean) / y_scale;

    Eigen::VectorXd w = Eigen::VectorXd::Zero(K);
    double b = 0.0;
    Eigen::VectorXd best_w = w;
    double best_b = b;
    double best_loss = std::numeric_limits<double>::infinity();
    double initial_loss = 0.0;

    Eigen::VectorXd s(M);
    const double inv_m = 1.0 / static_cast<double>(M);
    for (std::size_t epoch = 1; epoch <= options.epochs + 1; ++epoch) {
        Eigen::VectorXd r = yz - Z * w;
        r.array() -= b;
        double loss = 0.0;
        for (Eigen::Index i = 0; i < M; ++i) {
            const double e = r(i);
            loss += std::max(tau * e, (tau - 1.0) * e);
            s(i) = e > 0.0 ? -tau : (e < 0.0 ? 1.0 - tau : 0.0);
        }
        loss *= inv_m;
        if (!std::isfinite(loss))
            throw DataError("quantile fit diverged at epoch " + std::to_string(epoch) + " (tau=" + format_double(tau) +
                            ")");
        if (epoch == 1)
            initial_loss = loss;
        if (loss < best_loss) {
            best_loss = loss;
            best_w = w;
            best_b = b;
        }
        if (epoch > options.epochs)
            break;

        const Eigen::VectorXd gw = K ? Eigen::VectorXd(Z.transpose() * s * inv_m) : Eigen::VectorXd();
        const double gb = s.sum() * inv_m;
        const double norm = std::sqrt((K ? gw.squaredNorm() : 0.0) + gb * gb);
        if (norm == 0.0)
            break; // exact stationary point
        const double step = options.learning_rate / std::sqrt(static_cast<double>(epoch)) / norm;
        if (K)
            w -= step * gw;
        b -= step * gb;
    }

    QuantileModel model;
    model.tau = tau;
    model.training_epochs = options.epochs;
    model.learning_rate = options.learning_rate;
    model.base.columns = design.columns;
    model.base.weights.resize(K);
    double intercept = y_mean + y_scale * best_b;
    for (Eigen::Index k = 0; k < K; ++k) {
        model.base.weights(k) = best_w(k) * y_scale / x_scale(k);
        intercept -= model.base.weights(k) * x_mean(k);
    }
    model.base.intercept = intercept;
    model.initial_loss = initial_loss * y_scale;
    model.final_loss = best_loss * y_scale;
    return model;
}

std::vector<double> default_quantile_levels()
{
    return {0.05, 0.15, 0.25, 0.35, 0.45, 0.50, 0.55, 0.65, 0.75, 0.85, 0.95};
}

void validate_levels(std::span<const double> levels)
{
    if (levels.empty())
        throw ConfigError("quantile alphabet is empty");
    bool has_median = false;
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (!(levels[i] > 0.0 && levels[i] < 1.0))
            throw ConfigError("quantile level " + format_double(levels[i]) + " outside (0,1)");
        if (i > 0 && !(levels[i] > levels[i - 1]))
            throw ConfigError("quantile levels must be strictly ascending");
        if (levels[i] == 0.5)
            has_median = true;
    }
    if (!has_median)
        throw ConfigError("quantile alphabet must contain 0.5");
}

std::size_t QuantileBank::median_index() const
{
    auto it = std::find(levels.begin(), levels.end(), 0.5);
    if (it == levels.end())
        throw ConfigError("quantile alphabet must contain 0.5");
    return static_cast<std::size_t>(it - levels.begin());
}

QuantileBank fit_bank(const MultivariateSeries& series, std::size_t variable, std::span<const std::size_t> features,
                      std::span<const double> levels, std::size_t lag_order, const QuantileFitOptions& options)
{
    validate_levels(levels);
    if (variable >= series.variables())
        throw ConfigError("bank variable out of range");
    if (features.empty() || std::find(features.begin(), features.end(), variable) == features.end())
        throw ConfigError("bank features must include the variable itself");

    const auto design = make_lag_design(series, variable, features, lag_order);
    QuantileBank bank;
    bank.variable = variable;
    bank.levels.assign(levels.begin(), levels.end());
    bank.features.assign(features.begin(), features.end());
    bank.lag_order = lag_order;
    bank.models.reserve(levels.size());
    for (double tau : levels)
        bank.models.push_back(fit_quantile(design, tau, options));
    return bank;
}

std::vector<double> predict_quantiles(const QuantileBank& bank, std::span<const double> lag_window)
{
    const std::size_t K = bank.features.size() * bank.lag_order;
    if (lag_window.size() != K)
        throw ConfigError("lag window has " + std::to_string(lag_window.size()) + " values, bank expects " +
                          std::to_string(K));
    std::vector<double> out;
    out.reserve(bank.models.size());
    for (const auto& m : bank.models)
        out.push_back(m.base.predict(lag_window));
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace whatif
