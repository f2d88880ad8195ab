#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace whatif {

/// Regularly sampled multivariate series. Rows are instants, columns are
/// variables. Validated on construction and immutable afterwards.
class MultivariateSeries {
public:
    MultivariateSeries() = default;

    /// Throws DataError when timestamps are not strictly increasing with a
    /// constant gap, when values contain non-finite entries, or when the
    /// target/actionable settings are inconsistent.
    MultivariateSeries(std::vector<std::string> names, std::vector<std::int64_t> timestamps_ns,
                       Eigen::MatrixXd values, std::size_t target, std::vector<bool> actionable);

    /// Actionable mask defaults to every variable except the target.
    MultivariateSeries(std::vector<std::string> names, std::vector<std::int64_t> timestamps_ns,
                       Eigen::MatrixXd values, std::size_t target);

    std::size_t length() const { return static_cast<std::size_t>(values_.rows()); }
    std::size_t variables() const { return names_.size(); }

    const std::vector<std::string>& names() const { return names_; }
    const std::vector<std::int64_t>& timestamps_ns() const { return timestamps_; }
    const Eigen::MatrixXd& values() const { return values_; }
    double at(std::size_t t, std::size_t v) const { return values_(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(v)); }

    std::size_t target() const { return target_; }
    const std::vector<bool>& actionable() const { return actionable_; }
    std::int64_t delta_ns() const { return delta_ns_; }
    double delta_seconds() const { return static_cast<double>(delta_ns_) * 1e-9; }

    /// Index of a variable by name; throws ConfigError for unknown names.
    std::size_t index_of(std::string_view name) const;

    /// Rows [begin, end) as a new series with the same metadata.
    MultivariateSeries slice(std::size_t begin, std::size_t end) const;

    /// Throws DataError unless T >= max_lag + 2.
    void require_length_for_lag(std::size_t max_lag) const;

private:
    std::vector<std::string> names_;
    std::vector<std::int64_t> timestamps_;
    Eigen::MatrixXd values_;
    std::size_t target_ = 0;
    std::vector<bool> actionable_;
    std::int64_t delta_ns_ = 0;
};

enum class MissingPolicy { reject, forward_fill };

struct CsvOptions {
    std::string target;
    MissingPolicy missing = MissingPolicy::reject;
    /// Names of actionable variables; when absent every non-target variable is actionable.
    std::optional<std::vector<std::string>> actionable;
};

struct IngestReport {
    std::size_t filled_cells = 0;
    std::size_t dropped_rows = 0;
};

struct IngestedSeries {
    MultivariateSeries series;
    IngestReport report;
};

IngestedSeries read_csv(std::istream& in, const CsvOptions& options);
IngestedSeries load_csv(const std::filesystem::path& path, const CsvOptions& options);

/// Writes the series as CSV: ISO-8601 timestamp column followed by one
/// column per variable, values at 17 significant digits.
void write_csv(std::ostream& out, const MultivariateSeries& series);

/// Series bundle: a directory holding series.csv and meta.json.
void save_series_bundle(const std::filesystem::path& dir, const MultivariateSeries& series);
MultivariateSeries load_series_bundle(const std::filesystem::path& dir);

/// Accepts ISO-8601 UTC instants (YYYY-MM-DDTHH:MM:SS[.fraction][Z]) or
/// integer seconds.
std::int64_t parse_timestamp(std::string_view text);
std::string format_timestamp(std::int64_t ns);

std::string format_double(double value);

struct FeatureColumn {
    std::size_t variable = 0;
    std::size_t lag = 0;
    bool operator==(const FeatureColumn&) const = default;
};

/// Lagged regression design. Row i predicts the response at time
/// target_times[i] from values at target_times[i] - lag.
struct LagDesign {
    Eigen::MatrixXd rows;
    Eigen::VectorXd targets;
    std::size_t lag_order = 0;
    std::size_t response = 0;
    std::vector<FeatureColumn> columns;
    std::vector<std::size_t> target_times;

    std::size_t samples() const { return static_cast<std::size_t>(rows.rows()); }
    std::size_t features() const { return columns.size(); }

    /// Rows whose target time falls in [begin, end).
    LagDesign restrict_to(std::size_t begin, std::size_t end) const;
};

/// Columns are laid out variable-major in the order of `included`, lags
/// first_lag..first_lag+p−1 within each variable. first_lag > 1 gives a
/// direct multi-step design.
LagDesign make_lag_design(const MultivariateSeries& series, std::size_t response,
                          std::span<const std::size_t> included, std::size_t lag_order, std::size_t first_lag = 1);

std::vector<FeatureColumn> lag_columns(std::span<const std::size_t> included, std::size_t lag_order,
                                       std::size_t first_lag = 1);

struct IndexRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
    bool operator==(const IndexRange&) const = default;
};

struct Fold {
    IndexRange train;
    IndexRange validation;
};

struct SplitPlan {
    std::vector<Fold> folds;
};

/// Expanding-window walk-forward plan. The samples after the initial
/// training window are split into n_folds equal validation blocks; any
/// remainder that does not divide evenly is added to the first training
/// window.
SplitPlan walk_forward_splits(std::size_t length, std::size_t n_folds, std::size_t min_train);
SplitPlan walk_forward_splits(const MultivariateSeries& series, std::size_t n_folds, std::size_t min_train);

struct MetricsReport {
    double mae = 0.0;
    double mse = 0.0;
    double r2 = 0.0;
    double mape = 0.0;
    bool r2_defined = true;
    bool mape_defined = true;
    std::size_t n = 0;
    std::size_t mape_excluded = 0;
    double wall_time_fit = 0.0;
    double wall_time_predict = 0.0;
};

MetricsReport compute_metrics(std::span<const double> pred, std::span<const double> actual);

} // namespace whatif
