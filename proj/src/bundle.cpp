#include "whatif/bundle.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "whatif/error.hpp"
#include "whatif/parallel.hpp"

namespace whatif {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::size_t ModelBundle::history_rows_required() const
{
    return std::max(lag_order, main.lag_order + main.horizon - 1);
}

ModelBundle train_bundle(const MultivariateSeries& series, const TrainOptions& options, TrainReport* report)
{
    validate_levels(options.levels);
    if (options.lag_order < 1)
        throw ConfigError("lag order must be at least 1");
    if (options.horizon < 1)
        throw ConfigError("forecast horizon must be at least 1");
    series.require_length_for_lag(options.lag_order + options.horizon - 1);

    const std::size_t V = series.variables();
    const std::size_t T = series.length();

    ModelBundle bundle;
    bundle.names = series.names();
    bundle.target = series.target();
    bundle.actionable = series.actionable();
    bundle.delta_seconds = series.delta_seconds();
    bundle.lag_order = options.lag_order;
    bundle.levels = options.levels;

    bundle.normalization.mean.resize(V);
    bundle.normalization.scale.resize(V);
    for (std::size_t v = 0; v < V; ++v) {
        const auto col = series.values().col(static_cast<Eigen::Index>(v));
        const double mean = col.mean();
        const double sd = std::sqrt((col.array() - mean).square().mean());
        bundle.normalization.mean[v] = mean;
        bundle.normalization.scale[v] = sd > 1e-12 ? sd : 1.0;
    }

    if (V >= 2) {
        const auto plan = default_causality_plan(T, options.n_folds);
        bundle.causality = causality_matrix(series, options.lag_order, plan, options.granger, options.threads);
    } else {
        bundle.causality = CausalityMatrix(series.names(), Eigen::MatrixXd::Zero(1, 1), options.granger.alpha);
    }

    std::vector<std::vector<std::size_t>> features(V);
    std::vector<LagDesign> designs(V);
    for (std::size_t v = 0; v < V; ++v) {
        features[v] = select_features(bundle.causality, v);
        designs[v] = make_lag_design(series, v, features[v], options.lag_order);
    }

    const std::size_t L = options.levels.size();
    std::vector<QuantileModel> models(V * L);
    parallel_for(V * L, options.threads, [&](std::size_t i) {
        models[i] = fit_quantile(designs[i / L], options.levels[i % L], options.quantile);
    });

    bundle.banks.resize(V);
    for (std::size_t v = 0; v < V; ++v) {
        auto& bank = bundle.banks[v];
        bank.variable = v;
        bank.levels = options.levels;
        bank.features = features[v];
        bank.lag_order = options.lag_order;
        bank.models.assign(models.begin() + static_cast<std::ptrdiff_t>(v * L),
                           models.begin() + static_cast<std::ptrdiff_t>((v + 1) * L));
    }

    bundle.main.features = features[series.target()];
    bundle.main.lag_order = options.lag_order;
    bundle.main.horizon = options.horizon;
    const auto main_design =
        make_lag_design(series, series.target(), bundle.main.features, options.lag_order, options.horizon);
    bundle.main.model = fit_ridge(main_design, options.ridge_lambda);

    if (report) {
        report->bank_losses.assign(V, std::vector<double>(L));
        for (std::size_t v = 0; v < V; ++v)
            for (std::size_t l = 0; l < L; ++l)
                report->bank_losses[v][l] = bundle.banks[v].models[l].final_loss;
    }
    return bundle;
}

namespace {

std::string dec(double x)
{
    return format_double(x);
}

double parse_decimal(const json& j, const char* what)
{
    if (j.is_number())
        return j.get<double>();
    if (!j.is_string())
        throw DataError(std::string("bundle: ") + what + " must be a decimal string");
    const auto& s = j.get_ref<const std::string&>();
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size())
        throw DataError(std::string("bundle: invalid number '") + s + "' in " + what);
    return v;
}

ordered_json dec_array(std::span<const double> values)
{
    ordered_json arr = ordered_json::array();
    for (double v : values)
        arr.push_back(dec(v));
    return arr;
}

ordered_json dec_array(const Eigen::VectorXd& values)
{
    return dec_array(std::span<const double>(values.data(), static_cast<std::size_t>(values.size())));
}

std::vector<double> parse_dec_array(const json& j, const char* what)
{
    if (!j.is_array())
        throw DataError(std::string("bundle: ") + what + " must be an array");
    std::vector<double> out;
    out.reserve(j.size());
    for (const auto& e : j)
        out.push_back(parse_decimal(e, what));
    return out;
}

std::size_t name_index(const std::vector<std::string>& names, const json& j)
{
    const auto name = j.get<std::string>();
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end())
        throw DataError("bundle: unknown variable '" + name + "'");
    return static_cast<std::size_t>(it - names.begin());
}

ordered_json names_of(const std::vector<std::string>& names, const std::vector<std::size_t>& idx)
{
    ordered_json arr = ordered_json::array();
    for (auto i : idx)
        arr.push_back(names.at(i));
    return arr;
}

ordered_json linear_to_json(const LinearModel& m, const std::vector<std::string>& names)
{
    ordered_json cols = ordered_json::array();
    for (const auto& c : m.columns)
        cols.push_back(ordered_json::array({names.at(c.variable), c.lag}));
    ordered_json j;
    j["intercept"] = dec(m.intercept);
    j["weights"] = dec_array(m.weights);
    j["columns"] = std::move(cols);
    j["ridge_lambda"] = dec(m.ridge_lambda);
    return j;
}

LinearModel linear_from_json(const json& j, const std::vector<std::string>& names)
{
    LinearModel m;
    m.intercept = parse_decimal(j.at("intercept"), "intercept");
    const auto w = parse_dec_array(j.at("weights"), "weights");
    m.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    for (const auto& c : j.at("columns"))
        m.columns.push_back({name_index(names, c.at(0)), c.at(1).get<std::size_t>()});
    if (m.columns.size() != w.size())
        throw DataError("bundle: weight count does not match feature columns");
    if (j.contains("ridge_lambda"))
        m.ridge_lambda = parse_decimal(j.at("ridge_lambda"), "ridge_lambda");
    return m;
}

} // namespace

nlohmann::json causality_to_json(const CausalityMatrix& matrix)
{
    json p = json::array();
    json mask = json::array();
    for (std::size_t i = 0; i < matrix.size(); ++i) {
        json prow = json::array();
        json mrow = json::array();
        for (std::size_t j = 0; j < matrix.size(); ++j) {
            if (i == j) {
                prow.push_back(nullptr);
                mrow.push_back(nullptr);
            } else {
                prow.push_back(matrix.p_value(i, j));
                mrow.push_back(matrix.significant(i, j));
            }
        }
        p.push_back(std::move(prow));
        mask.push_back(std::move(mrow));
    }
    return json{{"names", matrix.names()},
                {"convention", "row=cause,column=effect"},
                {"alpha", matrix.alpha()},
                {"p_values", std::move(p)},
                {"mask", std::move(mask)}};
}

CausalityMatrix causality_from_json(const nlohmann::json& doc)
{
    auto names = doc.at("names").get<std::vector<std::string>>();
    const auto V = static_cast<Eigen::Index>(names.size());
    const auto& rows = doc.at("p_values");
    if (static_cast<Eigen::Index>(rows.size()) != V)
        throw DataError("causality: p_values must have one row per variable");
    Eigen::MatrixXd p(V, V);
    for (Eigen::Index i = 0; i < V; ++i) {
        const auto& row = rows.at(static_cast<std::size_t>(i));
        if (static_cast<Eigen::Index>(row.size()) != V)
            throw DataError("causality: p_values row has wrong length");
        for (Eigen::Index j = 0; j < V; ++j) {
            const auto& cell = row.at(static_cast<std::size_t>(j));
            p(i, j) = cell.is_null() ? std::numeric_limits<double>::quiet_NaN() : parse_decimal(cell, "p_values");
        }
    }
    const double alpha = doc.contains("alpha") ? parse_decimal(doc.at("alpha"), "alpha") : 0.05;
    return CausalityMatrix(std::move(names), std::move(p), alpha);
}

nlohmann::json bundle_to_json(const ModelBundle& bundle)
{
    const auto& names = bundle.names;
    ordered_json doc;
    doc["format"] = "whatif-model-bundle";
    doc["version"] = 1;
    doc["names"] = names;
    doc["target"] = names.at(bundle.target);
    doc["actionable"] = bundle.actionable;
    doc["delta_seconds"] = dec(bundle.delta_seconds);
    doc["lag_order"] = bundle.lag_order;
    doc["levels"] = dec_array(bundle.levels);
    doc["normalization"] = {{"mean", dec_array(bundle.normalization.mean)},
                            {"scale", dec_array(bundle.normalization.scale)}};

    {
        ordered_json c;
        c["convention"] = "row=cause,column=effect";
        c["alpha"] = dec(bundle.causality.alpha());
        ordered_json rows = ordered_json::array();
        for (std::size_t i = 0; i < bundle.causality.size(); ++i) {
            ordered_json row = ordered_json::array();
            for (std::size_t j = 0; j < bundle.causality.size(); ++j)
                row.push_back(i == j ? ordered_json(nullptr) : ordered_json(dec(bundle.causality.p_value(i, j))));
            rows.push_back(std::move(row));
        }
        c["names"] = bundle.causality.names();
        c["p_values"] = std::move(rows);
        doc["causality"] = std::move(c);
    }

    ordered_json main;
    main["features"] = names_of(names, bundle.main.features);
    main["lag_order"] = bundle.main.lag_order;
    main["horizon"] = bundle.main.horizon;
    main["model"] = linear_to_json(bundle.main.model, names);
    doc["main"] = std::move(main);

    ordered_json banks = ordered_json::array();
    for (const auto& bank : bundle.banks) {
        ordered_json b;
        b["variable"] = names.at(bank.variable);
        b["features"] = names_of(names, bank.features);
        b["lag_order"] = bank.lag_order;
        b["levels"] = dec_array(bank.levels);
        ordered_json models = ordered_json::array();
        for (const auto& m : bank.models) {
            ordered_json jm;
            jm["tau"] = dec(m.tau);
            jm["epochs"] = m.training_epochs;
            jm["learning_rate"] = dec(m.learning_rate);
            jm["initial_loss"] = dec(m.initial_loss);
            jm["final_loss"] = dec(m.final_loss);
            jm["model"] = linear_to_json(m.base, names);
            models.push_back(std::move(jm));
        }
        b["models"] = std::move(models);
        banks.push_back(std::move(b));
    }
    doc["banks"] = std::move(banks);
    return json(doc);
}

ModelBundle bundle_from_json(const nlohmann::json& doc)
{
    try {
        if (doc.value("format", std::string()) != "whatif-model-bundle")
            throw DataError("not a model bundle document");
        ModelBundle b;
        b.names = doc.at("names").get<std::vector<std::string>>();
        b.target = name_index(b.names, doc.at("target"));
        b.actionable = doc.at("actionable").get<std::vector<bool>>();
        if (b.actionable.size() != b.names.size())
            throw DataError("bundle: actionable mask length mismatch");
        if (b.actionable[b.target])
            throw DataError("bundle: target variable cannot be actionable");
        b.delta_seconds = parse_decimal(doc.at("delta_seconds"), "delta_seconds");
        b.lag_order = doc.at("lag_order").get<std::size_t>();
        b.levels = parse_dec_array(doc.at("levels"), "levels");
        validate_levels(b.levels);
        b.normalization.mean = parse_dec_array(doc.at("normalization").at("mean"), "normalization.mean");
        b.normalization.scale = parse_dec_array(doc.at("normalization").at("scale"), "normalization.scale");
        if (b.normalization.mean.size() != b.names.size() || b.normalization.scale.size() != b.names.size())
            throw DataError("bundle: normalization length mismatch");
        b.causality = causality_from_json(doc.at("causality"));
        if (b.causality.names() != b.names)
            throw DataError("bundle: causality names do not match variables");

        const auto& main = doc.at("main");
        for (const auto& f : main.at("features"))
            b.main.features.push_back(name_index(b.names, f));
        b.main.lag_order = main.at("lag_order").get<std::size_t>();
        b.main.horizon = main.at("horizon").get<std::size_t>();
        b.main.model = linear_from_json(main.at("model"), b.names);
        if (b.main.horizon < 1 || b.main.lag_order < 1)
            throw DataError("bundle: main forecaster needs horizon and lag order >= 1");

        const auto& banks = doc.at("banks");
        if (banks.size() != b.names.size())
            throw DataError("bundle: expected one quantile bank per variable");
        for (const auto& jb : banks) {
            QuantileBank bank;
            bank.variable = name_index(b.names, jb.at("variable"));
            for (const auto& f : jb.at("features"))
                bank.features.push_back(name_index(b.names, f));
            bank.lag_order = jb.at("lag_order").get<std::size_t>();
            bank.levels = parse_dec_array(jb.at("levels"), "levels");
            if (bank.levels != b.levels)
                throw DataError("bundle: bank alphabet differs from bundle alphabet");
            for (const auto& jm : jb.at("models")) {
                QuantileModel m;
                m.tau = parse_decimal(jm.at("tau"), "tau");
                m.training_epochs = jm.value("epochs", std::size_t{0});
                m.learning_rate = parse_decimal(jm.at("learning_rate"), "learning_rate");
                m.initial_loss = parse_decimal(jm.at("initial_loss"), "initial_loss");
                m.final_loss = parse_decimal(jm.at("final_loss"), "final_loss");
                m.base = linear_from_json(jm.at("model"), b.names);
                if (m.base.columns != bank.columns())
                    throw DataError("bundle: quantile model columns do not match bank features");
                bank.models.push_back(std::move(m));
            }
            if (bank.models.size() != bank.levels.size())
                throw DataError("bundle: expected one model per quantile level");
            if (bank.variable != b.banks.size())
                throw DataError("bundle: banks must be listed in variable order");
            b.banks.push_back(std::move(bank));
        }
        return b;
    } catch (const json::exception& e) {
        throw DataError(std::string("bundle: ") + e.what());
    }
}

void save_bundle(const std::filesystem::path& path, const ModelBundle& bundle)
{
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write " + path.string());
    out << bundle_to_json(bundle).dump(1) << '\n';
    if (!out)
        throw DataError("failed writing " + path.string());
}

ModelBundle load_bundle(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open model bundle " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("model bundle " + path.string() + ": " + e.what());
    }
    return bundle_from_json(doc);
}

} // namespace whatif
