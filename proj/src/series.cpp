#include "whatif/series.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "whatif/error.hpp"

namespace whatif {

namespace {

constexpr std::int64_t kNanosPerSecond = 1'000'000'000;

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"')
        s = s.substr(1, s.size() - 2);
    return s;
}

std::vector<std::string_view> split_fields(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(trim(line.substr(start)));
            break;
        }
        out.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
    return out;
}

bool is_missing_marker(std::string_view s)
{
    return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "null" || s == "NULL";
}

std::optional<double> parse_number(std::string_view s)
{
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        return std::nullopt;
    return value;
}

template <typename Int>
bool parse_int(std::string_view s, Int& out)
{
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

} // namespace

MultivariateSeries::MultivariateSeries(std::vector<std::string> names, std::vector<std::int64_t> timestamps_ns,
                                       Eigen::MatrixXd values, std::size_t target, std::vector<bool> actionable)
    : names_(std::move(names))
    , timestamps_(std::move(timestamps_ns))
    , values_(std::move(values))
    , target_(target)
    , actionable_(std::move(actionable))
{
    if (names_.empty())
        throw DataError("series needs at least one variable");
    if (static_cast<std::size_t>(values_.cols()) != names_.size())
        throw DataError("value matrix has " + std::to_string(values_.cols()) + " columns for " +
                        std::to_string(names_.size()) + " names");
    std::set<std::string> unique(names_.begin(), names_.end());
    if (unique.size() != names_.size())
        throw DataError("duplicate variable names");
    if (timestamps_.size() != static_cast<std::size_t>(values_.rows()))
        throw DataError("timestamp count does not match row count");
    if (timestamps_.size() < 2)
        throw DataError("series needs at least two observations");
    if (target_ >= names_.size())
        throw DataError("target index out of range");
    if (actionable_.size() != names_.size())
        throw DataError("actionable mask length does not match variable count");
    if (actionable_[target_])
        throw DataError("target variable '" + names_[target_] + "' cannot be actionable");

    delta_ns_ = timestamps_[1] - timestamps_[0];
    if (delta_ns_ <= 0)
        throw DataError("non-monotone timestamps at row 1");
    const double tol = 1e-9 * static_cast<double>(delta_ns_);
    for (std::size_t t = 1; t < timestamps_.size(); ++t) {
        const auto gap = timestamps_[t] - timestamps_[t - 1];
        if (gap <= 0)
            throw DataError("non-monotone timestamps at row " + std::to_string(t));
        if (std::abs(static_cast<double>(gap - delta_ns_)) > tol)
            throw DataError("irregular sampling interval at row " + std::to_string(t));
    }
    if (!values_.allFinite())
        throw DataError("series contains non-finite values");
}

MultivariateSeries::MultivariateSeries(std::vector<std::string> names, std::vector<std::int64_t> timestamps_ns,
                                       Eigen::MatrixXd values, std::size_t target)
    : MultivariateSeries(names, std::move(timestamps_ns), std::move(values), target, [&] {
        std::vector<bool> mask(names.size(), true);
        if (target < mask.size())
            mask[target] = false;
        return mask;
    }())
{
}

std::size_t MultivariateSeries::index_of(std::string_view name) const
{
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end())
        throw ConfigError("unknown variable '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - names_.begin());
}

MultivariateSeries MultivariateSeries::slice(std::size_t begin, std::size_t end) const
{
    if (begin >= end || end > length())
        throw ConfigError("invalid slice [" + std::to_string(begin) + ", " + std::to_string(end) + ")");
    std::vector<std::int64_t> ts(timestamps_.begin() + static_cast<std::ptrdiff_t>(begin),
                                 timestamps_.begin() + static_cast<std::ptrdiff_t>(end));
    Eigen::MatrixXd vals = values_.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin));
    return MultivariateSeries(names_, std::move(ts), std::move(vals), target_, actionable_);
}

void MultivariateSeries::require_length_for_lag(std::size_t max_lag) const
{
    if (length() < max_lag + 2)
        throw DataError("series of length " + std::to_string(length()) + " is too short for lag order " +
                        std::to_string(max_lag));
}

std::int64_t parse_timestamp(std::string_view text)
{
    text = trim(text);
    std::int64_t seconds = 0;
    if (parse_int(text, seconds))
        return seconds * kNanosPerSecond;

    // YYYY-MM-DD[T ]HH:MM:SS[.fff][Z]
    int y = 0;
    unsigned mo = 0, d = 0, h = 0, mi = 0, s = 0;
    if (text.size() < 19 || text[4] != '-' || text[7] != '-' || (text[10] != 'T' && text[10] != ' ') ||
        text[13] != ':' || text[16] != ':')
        throw DataError("unrecognized timestamp '" + std::string(text) + "'");
    if (!parse_int(text.substr(0, 4), y) || !parse_int(text.substr(5, 2), mo) || !parse_int(text.substr(8, 2), d) ||
        !parse_int(text.substr(11, 2), h) || !parse_int(text.substr(14, 2), mi) || !parse_int(text.substr(17, 2), s))
        throw DataError("unrecognized timestamp '" + std::string(text) + "'");
    std::int64_t frac_ns = 0;
    auto rest = text.substr(19);
    if (!rest.empty() && rest.front() == '.') {
        rest.remove_prefix(1);
        std::int64_t scale = kNanosPerSecond / 10;
        while (!rest.empty() && rest.front() >= '0' && rest.front() <= '9') {
            frac_ns += (rest.front() - '0') * scale;
            scale /= 10;
            rest.remove_prefix(1);
        }
    }
    if (!rest.empty() && rest != "Z")
        throw DataError("unsupported timezone suffix in '" + std::string(text) + "'");

    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{mo}, day{d}};
    if (!ymd.ok() || h > 23 || mi > 59 || s > 60)
        throw DataError("invalid calendar timestamp '" + std::string(text) + "'");
    const auto days_since_epoch = sys_days{ymd}.time_since_epoch().count();
    const std::int64_t secs = static_cast<std::int64_t>(days_since_epoch) * 86400 + h * 3600 + mi * 60 + s;
    return secs * kNanosPerSecond + frac_ns;
}

std::string format_timestamp(std::int64_t ns)
{
    using namespace std::chrono;
    std::int64_t secs = ns / kNanosPerSecond;
    std::int64_t frac = ns % kNanosPerSecond;
    if (frac < 0) {
        frac += kNanosPerSecond;
        secs -= 1;
    }
    std::int64_t days = secs / 86400;
    std::int64_t rem = secs % 86400;
    if (rem < 0) {
        rem += 86400;
        days -= 1;
    }
    const year_month_day ymd{sys_days{std::chrono::days{days}}};
    char buf[64];
    int n = std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(ymd.year()),
                          static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                          static_cast<int>(rem / 3600), static_cast<int>((rem / 60) % 60), static_cast<int>(rem % 60));
    std::string out(buf, static_cast<std::size_t>(n));
    if (frac != 0) {
        std::snprintf(buf, sizeof buf, ".%09lld", static_cast<long long>(frac));
        std::string f(buf);
        while (f.back() == '0')
            f.pop_back();
        out += f;
    }
    out += 'Z';
    return out;
}

std::string format_double(double value)
{
    char buf[40];
    int n = std::snprintf(buf, sizeof buf, "%.17g", value);
    return std::string(buf, static_cast<std::size_t>(n));
}

IngestedSeries read_csv(std::istream& in, const CsvOptions& options)
{
    std::string line;
    if (!std::getline(in, line))
        throw DataError("malformed header: empty input");
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF)
        line.erase(0, 3);
    const auto header = split_fields(line);
    if (header.size() < 2)
        throw DataError("malformed header: need a timestamp column and at least one variable");
    std::vector<std::string> names;
    for (std::size_t c = 1; c < header.size(); ++c) {
        if (header[c].empty())
            throw DataError("malformed header: empty column name at position " + std::to_string(c));
        names.emplace_back(header[c]);
    }
    {
        std::set<std::string> unique(names.begin(), names.end());
        if (unique.size() != names.size())
            throw DataError("malformed header: duplicate column names");
    }
    const std::size_t V = names.size();

    std::vector<std::int64_t> stamps;
    std::vector<std::vector<double>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty())
            continue;
        const auto fields = split_fields(line);
        if (fields.size() != V + 1)
            throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(V + 1) + " fields, got " +
                            std::to_string(fields.size()));
        stamps.push_back(parse_timestamp(fields[0]));
        std::vector<double> row(V);
        for (std::size_t v = 0; v < V; ++v) {
            if (is_missing_marker(fields[v + 1])) {
                row[v] = std::numeric_limits<double>::quiet_NaN();
                continue;
            }
            auto value = parse_number(fields[v + 1]);
            if (!value)
                throw DataError("line " + std::to_string(line_no) + ": non-numeric value '" +
                                std::string(fields[v + 1]) + "' in column " + names[v]);
            row[v] = *value;
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty())
        throw DataError("no data rows");

    for (std::size_t v = 0; v < V; ++v) {
        bool any = std::any_of(rows.begin(), rows.end(), [&](const auto& r) { return std::isfinite(r[v]); });
        if (!any)
            throw DataError("column '" + names[v] + "' is empty");
    }

    IngestReport report;
    if (options.missing == MissingPolicy::reject) {
        for (std::size_t t = 0; t < rows.size(); ++t)
            for (std::size_t v = 0; v < V; ++v)
                if (!std::isfinite(rows[t][v]))
                    throw DataError("missing value in row " + std::to_string(t + 1) + ", column " + names[v]);
    } else {
        // Leading rows with gaps cannot be filled and are dropped.
        std::size_t first = 0;
        while (first < rows.size() &&
               std::any_of(rows[first].begin(), rows[first].end(), [](double x) { return !std::isfinite(x); }))
            ++first;
        if (first == rows.size())
            throw DataError("no complete row to start forward fill from");
        report.dropped_rows = first;
        rows.erase(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(first));
        stamps.erase(stamps.begin(), stamps.begin() + static_cast<std::ptrdiff_t>(first));
        for (std::size_t t = 1; t < rows.size(); ++t)
            for (std::size_t v = 0; v < V; ++v)
                if (!std::isfinite(rows[t][v])) {
                    rows[t][v] = rows[t - 1][v];
                    ++report.filled_cells;
                }
    }

    Eigen::MatrixXd values(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(V));
    for (std::size_t t = 0; t < rows.size(); ++t)
        for (std::size_t v = 0; v < V; ++v)
            values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(v)) = rows[t][v];

    auto target_it = std::find(names.begin(), names.end(), options.target);
    if (target_it == names.end())
        throw ConfigError("unknown target variable '" + options.target + "'");
    const auto target = static_cast<std::size_t>(target_it - names.begin());

    std::vector<bool> actionable(V, false);
    if (options.actionable) {
        for (const auto& name : *options.actionable) {
            auto it = std::find(names.begin(), names.end(), name);
            if (it == names.end())
                throw ConfigError("unknown actionable variable '" + name + "'");
            actionable[static_cast<std::size_t>(it - names.begin())] = true;
        }
    } else {
        std::fill(actionable.begin(), actionable.end(), true);
        actionable[target] = false;
    }

    return {MultivariateSeries(std::move(names), std::move(stamps), std::move(values), target, std::move(actionable)),
            report};
}

IngestedSeries load_csv(const std::filesystem::path& path, const CsvOptions& options)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open " + path.string());
    return read_csv(in, options);
}

void write_csv(std::ostream& out, const MultivariateSeries& series)
{
    out << "timestamp";
    for (const auto& n : series.names())
        out << ',' << n;
    out << '\n';
    for (std::size_t t = 0; t < series.length(); ++t) {
        out << format_timestamp(series.timestamps_ns()[t]);
        for (std::size_t v = 0; v < series.variables(); ++v)
            out << ',' << format_double(series.at(t, v));
        out << '\n';
    }
}

void save_series_bundle(const std::filesystem::path& dir, const MultivariateSeries& series)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    {
        std::ofstream out(dir / "series.csv", std::ios::binary);
        if (!out)
            throw DataError("cannot write " + (dir / "series.csv").string());
        write_csv(out, series);
    }
    nlohmann::ordered_json meta;
    meta["names"] = series.names();
    meta["delta_seconds"] = series.delta_seconds();
    meta["target"] = series.names()[series.target()];
    meta["actionable"] = series.actionable();
    std::ofstream out(dir / "meta.json", std::ios::binary);
    if (!out)
        throw DataError("cannot write " + (dir / "meta.json").string());
    out << meta.dump(2) << '\n';
}

MultivariateSeries load_series_bundle(const std::filesystem::path& dir)
{
    std::ifstream meta_in(dir / "meta.json");
    if (!meta_in)
        throw DataError("cannot open " + (dir / "meta.json").string());
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(meta_in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("meta.json: " + std::string(e.what()));
    }
    CsvOptions options;
    std::vector<std::string> names;
    std::vector<bool> mask;
    try {
        options.target = meta.at("target").get<std::string>();
        names = meta.at("names").get<std::vector<std::string>>();
        mask = meta.at("actionable").get<std::vector<bool>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("meta.json: " + std::string(e.what()));
    }
    if (mask.size() != names.size())
        throw DataError("meta.json: actionable mask length does not match names");
    std::vector<std::string> actionable;
    for (std::size_t i = 0; i < names.size(); ++i)
        if (mask[i])
            actionable.push_back(names[i]);
    options.actionable = std::move(actionable);

    auto loaded = load_csv(dir / "series.csv", options);
    if (loaded.series.names() != names)
        throw DataError("meta.json names do not match series.csv header");
    if (meta.contains("delta_seconds")) {
        const double declared = meta["delta_seconds"].get<double>();
        if (std::abs(declared - loaded.series.delta_seconds()) > 1e-9 * std::max(1.0, declared))
            throw DataError("meta.json delta_seconds does not match series.csv sampling");
    }
    return std::move(loaded.series);
}

std::vector<FeatureColumn> lag_columns(std::span<const std::size_t> included, std::size_t lag_order,
                                       std::size_t first_lag)
{
    std::vector<FeatureColumn> cols;
    cols.reserve(included.size() * lag_order);
    for (auto v : included)
        for (std::size_t j = 0; j < lag_order; ++j)
            cols.push_back({v, first_lag + j});
    return cols;
}

LagDesign make_lag_design(const MultivariateSeries& series, std::size_t response,
                          std::span<const std::size_t> included, std::size_t lag_order, std::size_t first_lag)
{
    const std::size_t T = series.length();
    if (lag_order < 1)
        throw ConfigError("lag order must be at least 1");
    if (first_lag < 1)
        throw ConfigError("first lag must be at least 1");
    const std::size_t max_lag = lag_order + first_lag - 1;
    if (max_lag >= T)
        throw ConfigError("lag order " + std::to_string(max_lag) + " must be smaller than series length " +
                          std::to_string(T));
    if (response >= series.variables())
        throw ConfigError("response variable out of range");
    if (included.empty())
        throw ConfigError("lag design needs at least one included variable");
    for (auto v : included)
        if (v >= series.variables())
            throw ConfigError("included variable out of range");

    LagDesign design;
    design.lag_order = lag_order;
    design.response = response;
    design.columns = lag_columns(included, lag_order, first_lag);
    const std::size_t M = T - max_lag;
    const auto K = static_cast<Eigen::Index>(design.columns.size());
    design.rows.resize(static_cast<Eigen::Index>(M), K);
    design.targets.resize(static_cast<Eigen::Index>(M));
    design.target_times.resize(M);
    const auto& X = series.values();
    for (std::size_t i = 0; i < M; ++i) {
        const std::size_t t = i + max_lag;
        design.target_times[i] = t;
        design.targets(static_cast<Eigen::Index>(i)) = X(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(response));
        for (Eigen::Index k = 0; k < K; ++k) {
            const auto& col = design.columns[static_cast<std::size_t>(k)];
            design.rows(static_cast<Eigen::Index>(i), k) =
                X(static_cast<Eigen::Index>(t - col.lag), static_cast<Eigen::Index>(col.variable));
        }
    }
    return design;
}

LagDesign LagDesign::restrict_to(std::size_t begin, std::size_t end) const
{
    // target_times is increasing and contiguous, so the selection is a block.
    auto lo = std::lower_bound(target_times.begin(), target_times.end(), begin);
    auto hi = std::lower_bound(target_times.begin(), target_times.end(), end);
    const auto first = static_cast<Eigen::Index>(lo - target_times.begin());
    const auto count = static_cast<Eigen::Index>(hi - lo);
    LagDesign out;
    out.lag_order = lag_order;
    out.response = response;
    out.columns = columns;
    out.rows = rows.middleRows(first, std::max<Eigen::Index>(count, 0));
    out.targets = targets.segment(first, std::max<Eigen::Index>(count, 0));
    out.target_times.assign(lo, hi);
    return out;
}

SplitPlan walk_forward_splits(std::size_t length, std::size_t n_folds, std::size_t min_train)
{
    if (n_folds < 2)
        throw ConfigError("walk-forward plan needs at least 2 folds");
    if (min_train < 1 || min_train + n_folds > length)
        throw DataError("insufficient data: " + std::to_string(length) + " samples for min_train " +
                        std::to_string(min_train) + " and " + std::to_string(n_folds) + " folds");
    const std::size_t block = (length - min_train) / n_folds;
    const std::size_t start = length - block * n_folds;
    SplitPlan plan;
    plan.folds.reserve(n_folds);
    for (std::size_t k = 0; k < n_folds; ++k) {
        const std::size_t vbegin = start + k * block;
        plan.folds.push_back({{0, vbegin}, {vbegin, vbegin + block}});
    }
    return plan;
}

SplitPlan walk_forward_splits(const MultivariateSeries& series, std::size_t n_folds, std::size_t min_train)
{
    return walk_forward_splits(series.length(), n_folds, min_train);
}

MetricsReport compute_metrics(std::span<const double> pred, std::span<const double> actual)
{
    if (pred.size() != actual.size())
        throw ConfigError("prediction and actual lengths differ (" + std::to_string(pred.size()) + " vs " +
                          std::to_string(actual.size()) + ")");
    if (actual.size() < 2)
        throw ConfigError("metrics need at least two samples");

    MetricsReport r;
    r.n = actual.size();
    const double n = static_cast<double>(r.n);
    const double mean_actual = std::accumulate(actual.begin(), actual.end(), 0.0) / n;
    double abs_sum = 0.0, sq_sum = 0.0, tot = 0.0, pct_sum = 0.0;
    std::size_t pct_n = 0;
    for (std::size_t i = 0; i < r.n; ++i) {
        const double e = actual[i] - pred[i];
        abs_sum += std::abs(e);
        sq_sum += e * e;
        const double c = actual[i] - mean_actual;
        tot += c * c;
        if (std::abs(actual[i]) < 1e-9) {
            ++r.mape_excluded;
        } else {
            pct_sum += std::abs(e / actual[i]);
            ++pct_n;
        }
    }
    r.mae = abs_sum / n;
    r.mse = sq_sum / n;
    if (tot > 0.0) {
        r.r2 = 1.0 - sq_sum / tot;
    } else {
        r.r2 = std::numeric_limits<double>::quiet_NaN();
        r.r2_defined = false;
    }
    if (pct_n > 0) {
        r.mape = pct_sum / static_cast<double>(pct_n);
    } else {
        r.mape = std::numeric_limits<double>::quiet_NaN();
        r.mape_defined = false;
    }
    return r;
}

} // namespace whatif
