#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "whatif/causality.hpp"
#include "whatif/learners.hpp"
#include "whatif/series.hpp"

namespace whatif {

/// One-step (horizon 1) models run recursively and drive the target row of
/// the projected grid. Longer horizons predict the target directly from
/// lags horizon..horizon+p−1 while the target row follows its quantile bank.
struct MainForecaster {
    LinearModel model;
    std::vector<std::size_t> features;
    std::size_t lag_order = 0;
    std::size_t horizon = 1;

    bool recursive() const { return horizon == 1; }
};

/// Per-variable location and scale of the training series.
struct Normalization {
    std::vector<double> mean;
    std::vector<double> scale;

    double apply(std::size_t variable, double value) const { return (value - mean[variable]) / scale[variable]; }
};

/// Everything a scenario projection needs: one quantile bank per variable,
/// the target forecaster, normalization statistics and the causality screen
/// that picked the features.
struct ModelBundle {
    std::vector<std::string> names;
    std::size_t target = 0;
    std::vector<bool> actionable;
    double delta_seconds = 0.0;
    std::size_t lag_order = 0;
    std::vector<double> levels;
    std::vector<QuantileBank> banks;
    MainForecaster main;
    Normalization normalization;
    CausalityMatrix causality;

    std::size_t variables() const { return names.size(); }
    /// Trailing rows a projection needs from history.
    std::size_t history_rows_required() const;
};

struct TrainOptions {
    std::size_t lag_order = 5;
    std::vector<double> levels = default_quantile_levels();
    std::size_t n_folds = 10;
    GrangerOptions granger;
    double ridge_lambda = 1e-6;
    QuantileFitOptions quantile;
    std::size_t horizon = 1;
    std::size_t threads = 0;
};

struct TrainReport {
    /// Final mean pinball loss per variable and level.
    std::vector<std::vector<double>> bank_losses;
};

/// Causality screen, per-variable quantile banks on the selected features,
/// and the target forecaster. Deterministic for identical inputs regardless
/// of thread count.
ModelBundle train_bundle(const MultivariateSeries& series, const TrainOptions& options,
                         TrainReport* report = nullptr);

/// Real-valued parameters are stored as decimal strings with 17 significant
/// digits so that a reload reproduces them bit for bit.
nlohmann::json bundle_to_json(const ModelBundle& bundle);
ModelBundle bundle_from_json(const nlohmann::json& doc);

void save_bundle(const std::filesystem::path& path, const ModelBundle& bundle);
ModelBundle load_bundle(const std::filesystem::path& path);

nlohmann::json causality_to_json(const CausalityMatrix& matrix);
CausalityMatrix causality_from_json(const nlohmann::json& doc);

} // namespace whatif
