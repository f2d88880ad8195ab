// whatif: command-line front end for the counterfactual scenario engine.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "whatif/api.hpp"
#include "whatif/bundle.hpp"
#include "whatif/causality.hpp"
#include "whatif/error.hpp"
#include "whatif/evaluate.hpp"
#include "whatif/ga.hpp"
#include "whatif/scenario.hpp"
#include "whatif/series.hpp"
#include "whatif/synth.hpp"

namespace fs = std::filesystem;
using namespace whatif;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNotConverged = 3;
constexpr int kExitData = 4;

bool quiet()
{
    const char* v = std::getenv("WHATIF_LOG");
    return v && std::string(v) == "quiet";
}

void info(const std::string& line)
{
    if (!quiet())
        std::cerr << line << '\n';
}

struct SeriesArgs {
    std::string path;
    std::string target;
    std::string actionable;
    bool forward_fill = false;

    void add(CLI::App* cmd)
    {
        cmd->add_option("--series", path, "Series bundle directory or CSV file")->required();
        cmd->add_option("--target", target, "Target column (CSV input only)");
        cmd->add_option("--actionable", actionable, "Comma-separated actionable columns (CSV input only)");
        cmd->add_flag("--forward-fill", forward_fill, "Forward-fill missing cells instead of rejecting (CSV input)");
    }

    MultivariateSeries load() const
    {
        if (!fs::exists(path))
            throw DataError("series path " + path + " does not exist");
        if (fs::is_directory(path))
            return load_series_bundle(path);
        if (target.empty())
            throw ConfigError("--target is required for CSV input");
        CsvOptions options;
        options.target = target;
        options.missing = forward_fill ? MissingPolicy::forward_fill : MissingPolicy::reject;
        if (!actionable.empty()) {
            std::vector<std::string> names;
            std::stringstream ss(actionable);
            for (std::string item; std::getline(ss, item, ',');)
                names.push_back(item);
            options.actionable = names;
        }
        auto ingested = load_csv(path, options);
        if (ingested.report.filled_cells || ingested.report.dropped_rows)
            info("ingest: filled " + std::to_string(ingested.report.filled_cells) + " cells, dropped " +
                 std::to_string(ingested.report.dropped_rows) + " rows");
        return std::move(ingested.series);
    }
};

std::vector<double> parse_list(const std::string& text)
{
    std::vector<double> out;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) {
        char* end = nullptr;
        const double v = std::strtod(item.c_str(), &end);
        if (item.empty() || end != item.c_str() + item.size())
            throw ConfigError("invalid number '" + item + "' in list");
        out.push_back(v);
    }
    return out;
}

void write_text(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out)
        throw DataError("cannot write " + path.string());
}

fs::path sibling(const fs::path& path, const std::string& suffix)
{
    return path.parent_path() / (path.stem().string() + suffix);
}

GrangerMode parse_mode(const std::string& mode)
{
    if (mode == "conditional")
        return GrangerMode::conditional;
    if (mode == "pairwise")
        return GrangerMode::pairwise;
    throw ConfigError("--granger-mode must be 'conditional' or 'pairwise'");
}

void print_matrix(const CausalityMatrix& m)
{
    std::printf("%-12s", "cause\\effect");
    for (const auto& n : m.names())
        std::printf(" %10s", n.c_str());
    std::printf("\n");
    for (std::size_t i = 0; i < m.size(); ++i) {
        std::printf("%-12s", m.names()[i].c_str());
        for (std::size_t j = 0; j < m.size(); ++j) {
            if (i == j)
                std::printf(" %10s", "-");
            else
                std::printf(" %9.4f%s", m.p_value(i, j), m.significant(i, j) ? "*" : " ");
        }
        std::printf("\n");
    }
}

// --- synth ---

struct SynthArgs {
    std::string bench;
    std::string spec;
    std::size_t length = 5000;
    std::uint64_t seed = 1;
    std::string out;
};

int cmd_synth(const SynthArgs& a)
{
    if (a.bench.empty() == a.spec.empty())
        throw ConfigError("give exactly one of --bench or --spec");
    VarSystemSpec spec;
    if (!a.bench.empty()) {
        spec = benchmark(a.bench);
    } else {
        std::ifstream in(a.spec);
        if (!in)
            throw DataError("cannot open spec " + a.spec);
        try {
            spec = nlohmann::json::parse(in).get<VarSystemSpec>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("bad spec: ") + e.what());
        }
    }
    const auto series = generate_var(spec, a.length, a.seed);
    save_series_bundle(a.out, series);
    write_text(fs::path(a.out) / "spec.json", nlohmann::json(spec).dump(1) + "\n");

    std::printf("spec %s: V=%zu T=%zu delta=%gs seed=%llu target=%s\n", spec.name.c_str(), series.variables(),
                series.length(), series.delta_seconds(), static_cast<unsigned long long>(a.seed),
                series.names()[series.target()].c_str());
    std::printf("planted edges (%zu):", spec.planted_edge_count());
    for (std::size_t c = 0; c < spec.variables(); ++c)
        for (std::size_t e = 0; e < spec.variables(); ++e)
            if (spec.planted_edge(c, e))
                std::printf(" %s->%s", spec.names[c].c_str(), spec.names[e].c_str());
    std::printf("\n");
    return kExitOk;
}

// --- causality ---

struct CausalityArgs {
    SeriesArgs series;
    std::size_t lag = 5;
    std::size_t folds = 10;
    double alpha = 0.05;
    std::string mode = "conditional";
    std::size_t threads = 0;
    std::string out;
};

int cmd_causality(const CausalityArgs& a)
{
    const auto series = a.series.load();
    GrangerOptions options;
    options.alpha = a.alpha;
    options.mode = parse_mode(a.mode);
    const auto plan = default_causality_plan(series.length(), a.folds);
    const auto matrix = causality_matrix(series, a.lag, plan, options, a.threads);
    print_matrix(matrix);
    if (!a.out.empty())
        export_heatmap(matrix, a.out);
    return kExitOk;
}

// --- train ---

struct TrainArgs {
    SeriesArgs series;
    std::string out;
    std::string heatmap;
    std::size_t lag = 5;
    std::string levels;
    std::size_t folds = 10;
    double alpha = 0.05;
    std::string mode = "conditional";
    double ridge = 1e-6;
    std::size_t epochs = 500;
    double lr = 0.05;
    std::size_t horizon = 1;
    std::size_t threads = 0;
};

int cmd_train(const TrainArgs& a)
{
    const auto series = a.series.load();
    TrainOptions options;
    options.lag_order = a.lag;
    if (!a.levels.empty())
        options.levels = parse_list(a.levels);
    options.n_folds = a.folds;
    options.granger.alpha = a.alpha;
    options.granger.mode = parse_mode(a.mode);
    options.ridge_lambda = a.ridge;
    options.quantile.epochs = a.epochs;
    options.quantile.learning_rate = a.lr;
    options.horizon = a.horizon;
    options.threads = a.threads;

    TrainReport report;
    const auto bundle = train_bundle(series, options, &report);
    save_bundle(a.out, bundle);
    const fs::path heatmap = a.heatmap.empty() ? sibling(a.out, "_causality.csv") : fs::path(a.heatmap);
    export_heatmap(bundle.causality, heatmap);

    print_matrix(bundle.causality);
    std::printf("\n%-12s %-28s %14s %14s\n", "variable", "features", "pinball(0.5)", "pinball(mean)");
    for (std::size_t v = 0; v < bundle.variables(); ++v) {
        std::string features;
        for (auto f : bundle.banks[v].features)
            features += (features.empty() ? "" : ",") + bundle.names[f];
        const auto& losses = report.bank_losses[v];
        double mean = 0.0;
        for (double l : losses)
            mean += l / static_cast<double>(losses.size());
        std::printf("%-12s %-28s %14.6g %14.6g\n", bundle.names[v].c_str(), features.c_str(),
                    losses[bundle.banks[v].median_index()], mean);
    }
    std::printf("\nbundle: %s\nheatmap: %s\n", a.out.c_str(), heatmap.string().c_str());
    return kExitOk;
}

// --- evaluate ---

struct EvaluateArgs {
    SeriesArgs series;
    std::string model;
    std::size_t lag = 5;
    std::size_t folds = 5;
    double min_train = 0.5;
    std::string out;
};

int cmd_evaluate(const EvaluateArgs& a)
{
    const auto series = a.series.load();
    CausalityMatrix causality;
    if (!a.model.empty()) {
        const auto bundle = load_bundle(a.model);
        if (bundle.names != series.names())
            throw ConfigError("model bundle variables do not match the series");
        causality = bundle.causality;
    } else {
        causality =
            causality_matrix(series, a.lag, default_causality_plan(series.length()), GrangerOptions{}, 0);
    }
    EvaluationOptions options;
    options.lag_order = a.lag;
    options.n_folds = a.folds;
    options.min_train_fraction = a.min_train;
    const auto learners = default_learners(series, causality);
    const auto rows = walk_forward_evaluate(series, learners, options);
    print_metrics_table(std::cout, rows);
    if (!a.out.empty()) {
        std::ostringstream csv;
        write_metrics_csv(csv, rows);
        write_text(a.out, csv.str());
    }
    return kExitOk;
}

// --- search / project ---

struct ModelArgs {
    std::string model;
    SeriesArgs series;

    void add(CLI::App* cmd)
    {
        cmd->add_option("--model", model, "Model bundle JSON")->required();
        series.add(cmd);
    }
};

struct SearchArgs {
    ModelArgs in;
    double goal = 0.0;
    double tolerance = 0.05;
    std::size_t horizon = 10;
    GAConfig ga;
    std::string weights = "1,0.1,0.1";
    std::string out;
    std::string trace;
};

FitnessWeights parse_weights(const std::string& text)
{
    const auto w = parse_list(text);
    if (w.size() != 3)
        throw ConfigError("--weights needs three comma-separated numbers");
    FitnessWeights weights{w[0], w[1], w[2]};
    weights.validate();
    return weights;
}

int cmd_search(SearchArgs a)
{
    const auto bundle = load_bundle(a.in.model);
    const auto history = a.in.series.load();
    GoalSpec goal{a.goal, a.tolerance, a.horizon};
    goal.validate();
    a.ga.tolerance_rel = a.tolerance;
    a.ga.weights = parse_weights(a.weights);
    a.ga.validate();

    const ScenarioEngine engine(bundle, history, a.horizon);
    const auto result = run_search(engine, goal, a.ga);
    write_text(a.out, result_to_json(result, engine).dump(1) + "\n");
    const fs::path trace = a.trace.empty() ? sibling(a.out, "_trace.csv") : fs::path(a.trace);
    std::ostringstream csv;
    write_trace_csv(csv, result.trace);
    write_text(trace, csv.str());

    const auto& best = result.best;
    std::printf("converged: %s after %zu generation(s)\n", result.converged ? "yes" : "no",
                result.generations_run);
    std::printf("goal %.6g (tolerance %.3g%%), projected %s: %.6g\n", goal.goal_value, 100.0 * goal.epsilon_rel,
                bundle.names[bundle.target].c_str(), best.projection.terminal);
    std::printf("o1 %.6g  o1_rel %.6g  o2 %.6g  o3 %.6g  fitness %.6g\n", best.objectives.o1,
                best.objectives.o1_rel, best.objectives.o2, best.objectives.o3, best.objectives.fitness);
    std::printf("scenario likelihood: %.1f%%\n", 100.0 * best.projection.likelihood);
    std::printf("result: %s\ntrace: %s\n", a.out.c_str(), trace.string().c_str());
    return result.converged ? kExitOk : kExitNotConverged;
}

struct ProjectArgs {
    ModelArgs in;
    std::string policy;
    double level = 0.5;
    std::size_t horizon = 10;
    double goal = 0.0;
    double tolerance = 0.05;
    std::string out;
};

int cmd_project(const ProjectArgs& a)
{
    const auto bundle = load_bundle(a.in.model);
    const auto history = a.in.series.load();
    InterventionPolicy policy;
    std::size_t steps = a.horizon;
    nlohmann::json doc;
    if (!a.policy.empty()) {
        std::ifstream in(a.policy);
        if (!in)
            throw DataError("cannot open policy " + a.policy);
        try {
            doc = nlohmann::json::parse(in);
            steps = doc.at("genes").at(0).size();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("bad policy: ") + e.what());
        }
    }
    const ScenarioEngine engine(bundle, history, steps);
    const auto& space = engine.space();
    if (!a.policy.empty()) {
        policy = policy_from_json(doc, space);
    } else {
        const auto it = std::find(space.levels.begin(), space.levels.end(), a.level);
        if (it == space.levels.end())
            throw ConfigError("--level must be one of the bundle's quantile levels");
        policy = median_policy(space);
        for (std::size_t v = 0; v < space.variables; ++v)
            if (space.actionable[v])
                for (std::size_t n = 0; n < steps; ++n)
                    policy.at(v, n) = static_cast<std::uint8_t>(it - space.levels.begin());
    }
    const GoalSpec goal{a.goal, a.tolerance, steps};
    const auto projection = engine.project(policy);
    const auto objectives = engine.evaluate(policy, projection, goal, FitnessWeights{});
    const auto json = projection_to_json(bundle, space, policy, projection, objectives);
    if (!a.out.empty())
        write_text(a.out, json.dump(1) + "\n");
    std::printf("terminal %s: %.17g\nscenario likelihood: %.1f%%\n", bundle.names[bundle.target].c_str(),
                projection.terminal, 100.0 * projection.likelihood);
    return kExitOk;
}

// --- serve ---

struct ServeArgs {
    std::string model;
    std::string series;
    std::string target;
    std::string host = "127.0.0.1";
    int port = 8099;
    std::size_t max_jobs = 4;
    std::size_t workers = 0;
    std::size_t search_threads = 1;
};

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int)
{
    g_interrupted = true;
}

int cmd_serve(const ServeArgs& a)
{
    ApiOptions options;
    options.max_active_jobs = a.max_jobs;
    options.workers = a.workers;
    options.search_threads = a.search_threads;
    ApiService service(options);
    if (!a.model.empty() || !a.series.empty()) {
        if (a.model.empty() || a.series.empty())
            throw ConfigError("--model and --series must be given together");
        SeriesArgs s{a.series, a.target, {}, false};
        service.load(load_bundle(a.model), s.load());
    }
    if (!quiet())
        service.set_request_log([](const std::string& line) { std::cerr << line << '\n'; });
    if (!service.bind(a.host, a.port)) {
        std::cerr << "error: cannot bind " << a.host << ":" << a.port << '\n';
        return kExitUsage;
    }
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::jthread watcher([&service](std::stop_token stop) {
        while (!stop.stop_requested() && !g_interrupted)
            std::this_thread::sleep_for(std::chrono::milliseconds(50));
        service.stop();
    });
    info("listening on http://" + a.host + ":" + std::to_string(a.port) + "/api/v1");
    service.listen_after_bind();
    watcher.request_stop();
    info("shutdown");
    return kExitOk;
}

template <typename Fn>
int guarded(Fn&& fn)
{
    try {
        return fn();
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
}

void add_ga_options(CLI::App* cmd, SearchArgs& a)
{
    cmd->add_option("--population", a.ga.population_size, "Population size")->capture_default_str();
    cmd->add_option("--mutation", a.ga.mutation_prob, "Per-individual mutation probability")->capture_default_str();
    cmd->add_option("--crossover", a.ga.crossover_prob, "Crossover probability")->capture_default_str();
    cmd->add_option("--tournament", a.ga.tournament_size, "Tournament size")->capture_default_str();
    cmd->add_option("--immigrants", a.ga.immigrant_rate, "Random immigrant rate")->capture_default_str();
    cmd->add_option("--generations", a.ga.max_generations, "Maximum generations")->capture_default_str();
    cmd->add_option("--elitism", a.ga.elitism_count, "Elite individuals carried over")->capture_default_str();
    cmd->add_option("--weights", a.weights, "Fitness weights w1,w2,w3")->capture_default_str();
    cmd->add_option("--seed", a.ga.seed, "Random seed")->capture_default_str();
    cmd->add_option("--threads", a.ga.threads, "Evaluation threads (0 = all cores)")->capture_default_str();
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Counterfactual what-if scenario search over multivariate time series"};
    app.require_subcommand(1);
    int code = kExitOk;

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "Generate a synthetic VAR series bundle");
    c_synth->add_option("--bench", synth.bench, "Benchmark name (granger4, ga5, null2)");
    c_synth->add_option("--spec", synth.spec, "VAR spec JSON file");
    c_synth->add_option("--length", synth.length, "Samples to keep after burn-in")->capture_default_str();
    c_synth->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
    c_synth->add_option("--out", synth.out, "Output series bundle directory")->required();
    c_synth->callback([&] { code = guarded([&] { return cmd_synth(synth); }); });

    CausalityArgs caus;
    auto* c_caus = app.add_subcommand("causality", "Granger causality matrix and heatmap CSV");
    caus.series.add(c_caus);
    c_caus->add_option("--lag", caus.lag, "Lag order")->capture_default_str();
    c_caus->add_option("--folds", caus.folds, "Walk-forward folds")->capture_default_str();
    c_caus->add_option("--alpha", caus.alpha, "Significance level")->capture_default_str();
    c_caus->add_option("--granger-mode", caus.mode, "conditional or pairwise")->capture_default_str();
    c_caus->add_option("--threads", caus.threads, "Worker threads (0 = all cores)")->capture_default_str();
    c_caus->add_option("--out", caus.out, "Heatmap CSV path");
    c_caus->callback([&] { code = guarded([&] { return cmd_causality(caus); }); });

    TrainArgs train;
    auto* c_train = app.add_subcommand("train", "Fit causality screen, quantile banks and target forecaster");
    train.series.add(c_train);
    c_train->add_option("--out", train.out, "Model bundle JSON path")->required();
    c_train->add_option("--heatmap", train.heatmap, "Heatmap CSV path (default <out>_causality.csv)");
    c_train->add_option("--lag", train.lag, "Lag order")->capture_default_str();
    c_train->add_option("--levels", train.levels, "Comma-separated quantile alphabet");
    c_train->add_option("--folds", train.folds, "Causality folds")->capture_default_str();
    c_train->add_option("--alpha", train.alpha, "Significance level")->capture_default_str();
    c_train->add_option("--granger-mode", train.mode, "conditional or pairwise")->capture_default_str();
    c_train->add_option("--ridge", train.ridge, "Ridge penalty")->capture_default_str();
    c_train->add_option("--epochs", train.epochs, "Quantile fit epochs")->capture_default_str();
    c_train->add_option("--lr", train.lr, "Quantile fit learning rate")->capture_default_str();
    c_train->add_option("--horizon", train.horizon, "Target forecaster horizon in steps")->capture_default_str();
    c_train->add_option("--threads", train.threads, "Worker threads (0 = all cores)")->capture_default_str();
    c_train->callback([&] { code = guarded([&] { return cmd_train(train); }); });

    EvaluateArgs eval;
    auto* c_eval = app.add_subcommand("evaluate", "Walk-forward metrics per learner");
    eval.series.add(c_eval);
    c_eval->add_option("--model", eval.model, "Model bundle whose causality screen selects features");
    c_eval->add_option("--lag", eval.lag, "Lag order")->capture_default_str();
    c_eval->add_option("--folds", eval.folds, "Walk-forward folds")->capture_default_str();
    c_eval->add_option("--min-train", eval.min_train, "Initial training fraction")->capture_default_str();
    c_eval->add_option("--out", eval.out, "Metrics CSV path");
    c_eval->callback([&] { code = guarded([&] { return cmd_evaluate(eval); }); });

    SearchArgs search;
    auto* c_search = app.add_subcommand("search", "Genetic search for a counterfactual scenario");
    search.in.add(c_search);
    c_search->add_option("--goal", search.goal, "Desired terminal target value")->required();
    c_search->add_option("--tolerance", search.tolerance, "Relative tolerance")->capture_default_str();
    c_search->add_option("--horizon", search.horizon, "Steps to project")->capture_default_str();
    add_ga_options(c_search, search);
    c_search->add_option("--out", search.out, "Result JSON path")->required();
    c_search->add_option("--trace", search.trace, "Trace CSV path (default <out>_trace.csv)");
    c_search->callback([&] { code = guarded([&] { return cmd_search(search); }); });

    ProjectArgs project;
    auto* c_project = app.add_subcommand("project", "Project one intervention policy");
    project.in.add(c_project);
    c_project->add_option("--policy", project.policy, "Policy JSON with a 'genes' grid");
    c_project->add_option("--level", project.level, "Quantile level for every actionable gene")
        ->capture_default_str();
    c_project->add_option("--horizon", project.horizon, "Steps to project (with --level)")->capture_default_str();
    c_project->add_option("--goal", project.goal, "Goal used for the objectives")->capture_default_str();
    c_project->add_option("--tolerance", project.tolerance, "Relative tolerance")->capture_default_str();
    c_project->add_option("--out", project.out, "Projection JSON path");
    c_project->callback([&] { code = guarded([&] { return cmd_project(project); }); });

    ServeArgs serve;
    auto* c_serve = app.add_subcommand("serve", "Serve the HTTP API");
    c_serve->add_option("--model", serve.model, "Model bundle JSON");
    c_serve->add_option("--series", serve.series, "Series bundle directory or CSV");
    c_serve->add_option("--target", serve.target, "Target column (CSV input only)");
    c_serve->add_option("--host", serve.host, "Bind address")->capture_default_str();
    c_serve->add_option("--port", serve.port, "Port")->capture_default_str();
    c_serve->add_option("--max-jobs", serve.max_jobs, "Queued plus running search jobs")->capture_default_str();
    c_serve->add_option("--workers", serve.workers, "Search worker threads (0 = auto)")->capture_default_str();
    c_serve->add_option("--search-threads", serve.search_threads, "Evaluation threads per search")
        ->capture_default_str();
    c_serve->callback([&] { code = guarded([&] { return cmd_serve(serve); }); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }
    return code;
}
