#include "whatif/api.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "whatif/error.hpp"
#include "whatif/scenario.hpp"

namespace whatif {

using nlohmann::json;

namespace {

enum class JobState { queued, running, converged, exhausted, failed };

const char* state_name(JobState s)
{
    switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::converged: return "converged";
    case JobState::exhausted: return "exhausted";
    case JobState::failed: return "failed";
    }
    return "failed";
}

bool terminal(JobState s)
{
    return s == JobState::converged || s == JobState::exhausted || s == JobState::failed;
}

struct Model {
    ModelBundle bundle;
    MultivariateSeries history;
};

struct Job {
    std::string id;
    json submitted;
    SearchRequest request;
    std::shared_ptr<const Model> model;
    JobState state = JobState::queued;
    std::vector<TraceRow> trace;
    std::optional<json> result;
    std::string error;
    std::atomic<bool> cancel{false};
};

double require_number(const json& body, const std::string& field)
{
    const auto& v = body.at(field);
    if (!v.is_number())
        throw FieldError(field, "must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x))
        throw FieldError(field, "must be finite");
    return x;
}

std::size_t require_count(const json& body, const std::string& field, const std::string& label)
{
    const auto& v = body.at(field);
    if (!v.is_number_integer() || v.get<long long>() < 0)
        throw FieldError(label, "must be a non-negative integer");
    return v.get<std::size_t>();
}

void reject_unknown(const json& body, std::initializer_list<const char*> known, const std::string& prefix)
{
    for (const auto& [key, value] : body.items()) {
        (void)value;
        if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
            throw FieldError(prefix + key, "unknown field");
    }
}

json error_body(const std::string& error, const std::string& detail, const std::string& field = {})
{
    json j{{"error", error}, {"detail", detail}};
    if (!field.empty())
        j["field"] = field;
    return j;
}

void send(httplib::Response& res, int status, const json& body)
{
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

std::string new_job_id()
{
    static std::mutex m;
    static std::mt19937_64 rng{std::random_device{}()};
    std::lock_guard lock(m);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
    return buf;
}

} // namespace

SearchRequest parse_search_request(const json& body, const ModelBundle& bundle, std::size_t history_length)
{
    if (!body.is_object())
        throw FieldError("", "request body must be a JSON object");
    reject_unknown(body, {"goal", "tolerance", "horizon_steps", "seed", "ga"}, "");

    SearchRequest r;
    if (!body.contains("goal"))
        throw FieldError("goal", "required");
    r.goal.goal_value = require_number(body, "goal");
    if (body.contains("tolerance")) {
        const double tol = require_number(body, "tolerance");
        if (!(tol > 0.0))
            throw FieldError("tolerance", "must be positive");
        r.goal.epsilon_rel = tol;
    }
    r.config.tolerance_rel = r.goal.epsilon_rel;
    if (body.contains("horizon_steps")) {
        r.goal.horizon_steps = require_count(body, "horizon_steps", "horizon_steps");
        if (r.goal.horizon_steps < 1)
            throw FieldError("horizon_steps", "must be at least 1");
    }
    const std::size_t needed = std::max(bundle.history_rows_required(), r.goal.horizon_steps);
    if (history_length < needed)
        throw FieldError("horizon_steps", "history too short for this horizon");
    if (body.contains("seed")) {
        const auto& s = body.at("seed");
        if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0))
            throw FieldError("seed", "must be a non-negative integer");
        r.config.seed = s.get<std::uint64_t>();
    }
    if (body.contains("ga")) {
        const auto& ga = body.at("ga");
        if (!ga.is_object())
            throw FieldError("ga", "must be an object");
        reject_unknown(ga,
                       {"population_size", "mutation_prob", "crossover_prob", "tournament_size", "immigrant_rate",
                        "max_generations", "elitism_count", "weights"},
                       "ga.");
        auto& c = r.config;
        if (ga.contains("population_size"))
            c.population_size = require_count(ga, "population_size", "ga.population_size");
        if (ga.contains("mutation_prob"))
            c.mutation_prob = require_number(ga, "mutation_prob");
        if (ga.contains("crossover_prob"))
            c.crossover_prob = require_number(ga, "crossover_prob");
        if (ga.contains("tournament_size"))
            c.tournament_size = require_count(ga, "tournament_size", "ga.tournament_size");
        if (ga.contains("immigrant_rate"))
            c.immigrant_rate = require_number(ga, "immigrant_rate");
        if (ga.contains("max_generations"))
            c.max_generations = require_count(ga, "max_generations", "ga.max_generations");
        if (ga.contains("elitism_count"))
            c.elitism_count = require_count(ga, "elitism_count", "ga.elitism_count");
        if (ga.contains("weights")) {
            const auto& w = ga.at("weights");
            if (!w.is_array() || w.size() != 3 || !std::all_of(w.begin(), w.end(), [](const json& x) {
                    return x.is_number();
                }))
                throw FieldError("ga.weights", "must be an array of three numbers");
            c.weights = {w[0].get<double>(), w[1].get<double>(), w[2].get<double>()};
        }
        if (c.population_size > 100000 || c.max_generations > 100000)
            throw FieldError("ga", "population_size and max_generations are capped at 100000");
        try {
            c.validate();
        } catch (const ConfigError& e) {
            throw FieldError("ga", e.what());
        }
    }
    return r;
}

struct ApiService::Impl {
    ApiOptions options;
    httplib::Server server;
    std::function<void(const std::string&)> log;

    mutable std::shared_mutex model_mutex;
    std::shared_ptr<const Model> model;

    std::mutex jobs_mutex;
    std::condition_variable jobs_cv;
    std::map<std::string, std::shared_ptr<Job>> jobs;
    std::deque<std::shared_ptr<Job>> queue;
    bool shutting_down = false;
    std::vector<std::thread> workers;

    explicit Impl(ApiOptions o) : options(o)
    {
        if (options.max_active_jobs < 1)
            throw ConfigError("max_active_jobs must be at least 1");
        std::size_t n = options.workers;
        if (n == 0)
            n = std::min<std::size_t>(options.max_active_jobs,
                                      std::max<std::size_t>(1, std::thread::hardware_concurrency()));
        for (std::size_t i = 0; i < n; ++i)
            workers.emplace_back([this] { worker_loop(); });
        routes();
    }

    ~Impl()
    {
        server.stop();
        {
            std::lock_guard lock(jobs_mutex);
            shutting_down = true;
            for (auto& [id, job] : jobs)
                job->cancel = true;
        }
        jobs_cv.notify_all();
        for (auto& w : workers)
            w.join();
    }

    std::shared_ptr<const Model> current() const
    {
        std::shared_lock lock(model_mutex);
        return model;
    }

    void worker_loop()
    {
        for (;;) {
            std::shared_ptr<Job> job;
            {
                std::unique_lock lock(jobs_mutex);
                jobs_cv.wait(lock, [&] { return shutting_down || !queue.empty(); });
                if (shutting_down)
                    return;
                job = queue.front();
                queue.pop_front();
                job->state = JobState::running;
            }
            run_job(*job);
        }
    }

    void run_job(Job& job)
    {
        struct Observer : SearchObserver {
            Impl& impl;
            Job& job;
            Observer(Impl& i, Job& j) : impl(i), job(j) {}
            void on_generation(const TraceRow& row, const Individual&) override
            {
                std::lock_guard lock(impl.jobs_mutex);
                job.trace.push_back(row);
            }
            bool stop_requested() const override { return job.cancel.load(); }
        } observer(*this, job);

        try {
            ScenarioEngine engine(job.model->bundle, job.model->history, job.request.goal.horizon_steps);
            auto config = job.request.config;
            config.threads = options.search_threads;
            auto result = run_search(engine, job.request.goal, config, &observer);
            auto doc = result_to_json(result, engine);
            std::lock_guard lock(jobs_mutex);
            job.result = std::move(doc);
            job.state = result.converged ? JobState::converged : JobState::exhausted;
        } catch (const std::exception& e) {
            std::lock_guard lock(jobs_mutex);
            job.error = e.what();
            job.state = JobState::failed;
        }
    }

    json job_document(const Job& job) const
    {
        json progress{{"generation", 0}, {"best_fitness", nullptr}, {"best_o1_rel", nullptr}};
        if (!job.trace.empty()) {
            const auto& row = job.trace.back();
            progress = {{"generation", row.generation},
                        {"best_fitness", row.best_fitness},
                        {"best_o1_rel", row.best_o1_rel}};
        }
        json doc{{"id", job.id}, {"state", state_name(job.state)}, {"submitted", job.submitted},
                 {"progress", progress}};
        if (job.result)
            doc["result"] = *job.result;
        if (job.state == JobState::failed)
            doc["error"] = job.error;
        return doc;
    }

    bool require_json(const httplib::Request& req, httplib::Response& res, json& body)
    {
        const auto type = req.get_header_value("Content-Type");
        if (type.rfind("application/json", 0) != 0) {
            send(res, 415, error_body("unsupported_media_type", "Content-Type must be application/json"));
            return false;
        }
        try {
            body = json::parse(req.body);
        } catch (const json::exception& e) {
            send(res, 400, error_body("invalid_json", e.what()));
            return false;
        }
        return true;
    }

    std::shared_ptr<const Model> require_model(httplib::Response& res) const
    {
        auto m = current();
        if (!m)
            send(res, 409, error_body("no_bundle", "no model bundle is loaded"));
        return m;
    }

    void routes()
    {
        server.Get("/api/v1/health", [this](const httplib::Request&, httplib::Response& res) {
            auto m = current();
            json doc{{"status", "ok"}, {"version", kApiVersion}, {"variables", m ? m->bundle.variables() : 0}};
            if (m) {
                doc["target"] = m->bundle.names[m->bundle.target];
                doc["history_length"] = m->history.length();
            }
            std::size_t active = 0;
            {
                std::lock_guard lock(jobs_mutex);
                for (const auto& [id, job] : jobs)
                    active += terminal(job->state) ? 0 : 1;
            }
            doc["active_jobs"] = active;
            send(res, 200, doc);
        });

        server.Get("/api/v1/series/meta", [this](const httplib::Request&, httplib::Response& res) {
            auto m = require_model(res);
            if (!m)
                return;
            const auto& b = m->bundle;
            std::vector<bool> actionable(b.actionable.begin(), b.actionable.end());
            send(res, 200,
                 json{{"names", b.names},
                      {"delta_seconds", b.delta_seconds},
                      {"actionable", actionable},
                      {"target", b.names[b.target]},
                      {"length", m->history.length()},
                      {"alphabet", b.levels},
                      {"lag_order", b.lag_order},
                      {"history_rows_required", b.history_rows_required()}});
        });

        server.Get("/api/v1/series/window", [this](const httplib::Request& req, httplib::Response& res) {
            auto m = require_model(res);
            if (!m)
                return;
            long long k = 0;
            const auto text = req.get_param_value("last");
            try {
                std::size_t used = 0;
                k = std::stoll(text, &used);
                if (used != text.size())
                    k = 0;
            } catch (const std::exception&) {
                k = 0;
            }
            if (k <= 0) {
                send(res, 400, error_body("invalid_request", "last must be a positive integer", "last"));
                return;
            }
            const auto& h = m->history;
            const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(k), h.length());
            const std::size_t begin = h.length() - n;
            std::vector<std::string> stamps;
            for (std::size_t t = begin; t < h.length(); ++t)
                stamps.push_back(format_timestamp(h.timestamps_ns()[t]));
            json columns = json::object();
            for (std::size_t v = 0; v < h.variables(); ++v) {
                std::vector<double> col;
                for (std::size_t t = begin; t < h.length(); ++t)
                    col.push_back(h.at(t, v));
                columns[h.names()[v]] = std::move(col);
            }
            send(res, 200, json{{"names", h.names()}, {"rows", n}, {"timestamps", stamps}, {"columns", columns}});
        });

        server.Get("/api/v1/causality", [this](const httplib::Request&, httplib::Response& res) {
            auto m = require_model(res);
            if (!m)
                return;
            send(res, 200, causality_to_json(m->bundle.causality));
        });

        server.Post("/api/v1/search", [this](const httplib::Request& req, httplib::Response& res) {
            auto m = require_model(res);
            if (!m)
                return;
            json body;
            if (!require_json(req, res, body))
                return;
            SearchRequest request;
            try {
                request = parse_search_request(body, m->bundle, m->history.length());
            } catch (const FieldError& e) {
                send(res, 400, error_body("invalid_request", e.what(), e.field()));
                return;
            }
            auto job = std::make_shared<Job>();
            job->id = new_job_id();
            job->submitted = body;
            job->request = request;
            job->model = m;
            {
                std::lock_guard lock(jobs_mutex);
                std::size_t active = 0;
                for (const auto& [id, j] : jobs)
                    active += terminal(j->state) ? 0 : 1;
                if (active >= options.max_active_jobs) {
                    send(res, 429,
                         error_body("queue_full", "at most " + std::to_string(options.max_active_jobs) +
                                                      " search jobs may be queued or running"));
                    return;
                }
                jobs[job->id] = job;
                queue.push_back(job);
            }
            jobs_cv.notify_one();
            send(res, 202, json{{"id", job->id}, {"state", "queued"}});
        });

        server.Get(R"(/api/v1/search/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            std::lock_guard lock(jobs_mutex);
            auto it = jobs.find(req.matches[1]);
            if (it == jobs.end()) {
                send(res, 404, error_body("not_found", "unknown job id"));
                return;
            }
            send(res, 200, job_document(*it->second));
        });

        server.Get(R"(/api/v1/search/([^/]+)/trace)", [this](const httplib::Request& req, httplib::Response& res) {
            std::size_t from = 0;
            if (req.has_param("from")) {
                const auto text = req.get_param_value("from");
                try {
                    std::size_t used = 0;
                    const long long f = std::stoll(text, &used);
                    if (used != text.size() || f < 0)
                        throw std::invalid_argument("from");
                    from = static_cast<std::size_t>(f);
                } catch (const std::exception&) {
                    send(res, 400, error_body("invalid_request", "from must be a non-negative integer", "from"));
                    return;
                }
            }
            std::lock_guard lock(jobs_mutex);
            auto it = jobs.find(req.matches[1]);
            if (it == jobs.end()) {
                send(res, 404, error_body("not_found", "unknown job id"));
                return;
            }
            const auto& job = *it->second;
            json rows = json::array();
            for (const auto& row : job.trace)
                if (row.generation >= from)
                    rows.push_back(trace_row_to_json(row, true));
            send(res, 200, json{{"id", job.id}, {"state", state_name(job.state)}, {"from", from}, {"rows", rows}});
        });

        server.Post("/api/v1/project", [this](const httplib::Request& req, httplib::Response& res) {
            auto m = require_model(res);
            if (!m)
                return;
            json body;
            if (!require_json(req, res, body))
                return;
            try {
                if (!body.is_object())
                    throw FieldError("", "request body must be a JSON object");
                reject_unknown(body, {"genes", "goal", "tolerance", "weights"}, "");
                if (!body.contains("genes") || !body.at("genes").is_array() || body.at("genes").empty() ||
                    !body.at("genes").at(0).is_array())
                    throw FieldError("genes", "must be an array of per-variable gene arrays");
                if (!body.contains("goal"))
                    throw FieldError("goal", "required");
                GoalSpec goal;
                goal.goal_value = require_number(body, "goal");
                if (body.contains("tolerance")) {
                    goal.epsilon_rel = require_number(body, "tolerance");
                    if (!(goal.epsilon_rel > 0.0))
                        throw FieldError("tolerance", "must be positive");
                }
                FitnessWeights weights;
                if (body.contains("weights")) {
                    const auto& w = body.at("weights");
                    if (!w.is_array() || w.size() != 3 ||
                        !std::all_of(w.begin(), w.end(), [](const json& x) { return x.is_number(); }))
                        throw FieldError("weights", "must be an array of three numbers");
                    weights = {w[0].get<double>(), w[1].get<double>(), w[2].get<double>()};
                    try {
                        weights.validate();
                    } catch (const ConfigError& e) {
                        throw FieldError("weights", e.what());
                    }
                }
                goal.horizon_steps = body.at("genes").at(0).size();
                if (goal.horizon_steps < 1)
                    throw FieldError("genes", "policy needs at least one step");
                if (m->history.length() < std::max(m->bundle.history_rows_required(), goal.horizon_steps))
                    throw FieldError("genes", "history too short for this horizon");
                ScenarioEngine engine(m->bundle, m->history, goal.horizon_steps);
                InterventionPolicy policy;
                try {
                    policy = policy_from_json(json{{"genes", body.at("genes")}}, engine.space());
                } catch (const ConfigError& e) {
                    throw FieldError("genes", e.what());
                }
                const auto projection = engine.project(policy);
                const auto objectives = engine.evaluate(policy, projection, goal, weights);
                auto doc = projection_to_json(m->bundle, engine.space(), policy, projection, objectives);
                doc["goal"] = {{"goal_value", goal.goal_value},
                               {"epsilon_rel", goal.epsilon_rel},
                               {"horizon_steps", goal.horizon_steps}};
                doc["satisfies_constraint"] = satisfies_constraint(projection.terminal, goal);
                send(res, 200, doc);
            } catch (const FieldError& e) {
                send(res, 400, error_body("invalid_request", e.what(), e.field()));
            } catch (const DataError& e) {
                send(res, 422, error_body("projection_failed", e.what()));
            }
        });

        server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
            if (res.body.empty()) {
                const bool missing = res.status == 404;
                res.set_content(error_body(missing ? "not_found" : "http_error",
                                           missing ? "no such endpoint" : "request failed")
                                    .dump(),
                                "application/json");
            }
        });

        server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            std::string detail = "internal error";
            try {
                std::rethrow_exception(ep);
            } catch (const std::exception& e) {
                detail = e.what();
            } catch (...) {
            }
            send(res, 500, error_body("internal", detail));
        });

        server.set_logger([this](const httplib::Request& req, const httplib::Response& res) {
            if (log)
                log(json{{"method", req.method}, {"path", req.path}, {"status", res.status}}.dump());
        });
    }
};

ApiService::ApiService(ApiOptions options) : impl_(std::make_unique<Impl>(options)) {}

ApiService::~ApiService() = default;

void ApiService::load(ModelBundle bundle, MultivariateSeries history)
{
    if (history.names() != bundle.names)
        throw ConfigError("series variables do not match the model bundle");
    if (history.length() < bundle.history_rows_required())
        throw DataError("series is shorter than the model lag window");
    auto m = std::make_shared<const Model>(Model{std::move(bundle), std::move(history)});
    std::unique_lock lock(impl_->model_mutex);
    impl_->model = std::move(m);
}

void ApiService::set_request_log(std::function<void(const std::string&)> sink)
{
    impl_->log = std::move(sink);
}

int ApiService::bind_to_any_port(const std::string& host)
{
    return impl_->server.bind_to_any_port(host);
}

bool ApiService::bind(const std::string& host, int port)
{
    return impl_->server.bind_to_port(host, port);
}

bool ApiService::listen_after_bind()
{
    return impl_->server.listen_after_bind();
}

void ApiService::stop()
{
    impl_->server.stop();
}

void ApiService::wait_until_ready() const
{
    impl_->server.wait_until_ready();
}

} // namespace whatif
