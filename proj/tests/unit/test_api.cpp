#include <doctest.h>

#include <chrono>
#include <mutex>
#include <nlohmann/json.hpp>
#include <thread>

#include "helpers.hpp"

#include "whatif/api.hpp"

#include <httplib.h>

using namespace whatif;
using nlohmann::json;

namespace {

class Server {
public:
    explicit Server(bool loaded = true, ApiOptions options = {}) : service_(options)
    {
        if (loaded) {
            const auto& t = testutil::ga5_model();
            service_.load(t.bundle, t.series);
        }
        service_.set_request_log([this](const std::string& line) {
            std::lock_guard lock(mutex_);
            log_.push_back(line);
        });
        port_ = service_.bind_to_any_port("127.0.0.1");
        REQUIRE(port_ > 0);
        thread_ = std::thread([this] { service_.listen_after_bind(); });
        service_.wait_until_ready();
    }

    ~Server()
    {
        service_.stop();
        thread_.join();
    }

    httplib::Client client() const
    {
        httplib::Client c("127.0.0.1", port_);
        c.set_read_timeout(30, 0);
        return c;
    }

    std::vector<std::string> log() const
    {
        std::lock_guard lock(mutex_);
        return log_;
    }

private:
    ApiService service_;
    int port_ = -1;
    std::thread thread_;
    mutable std::mutex mutex_;
    std::vector<std::string> log_;
};

json body_of(const httplib::Result& r)
{
    REQUIRE(r);
    return json::parse(r->body);
}

httplib::Result post(httplib::Client& c, const std::string& path, const json& body)
{
    return c.Post(path, body.dump(), "application/json");
}

json wait_terminal(httplib::Client& c, const std::string& id)
{
    for (int i = 0; i < 3000; ++i) {
        const auto doc = body_of(c.Get("/api/v1/search/" + id));
        const auto state = doc.at("state").get<std::string>();
        if (state == "converged" || state == "exhausted" || state == "failed")
            return doc;
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    FAIL("job did not finish");
    return {};
}

json small_search(double goal, std::uint64_t seed)
{
    return {{"goal", goal},
            {"tolerance", 0.05},
            {"horizon_steps", 10},
            {"seed", seed},
            {"ga", {{"population_size", 60}, {"max_generations", 40}}}};
}

} // namespace

TEST_SUITE("api")
{
    TEST_CASE("request parsing")
    {
        const auto& b = testutil::ga5_model().bundle;
        auto r = parse_search_request(small_search(3.0, 9), b, 2000);
        CHECK(r.goal.goal_value == 3.0);
        CHECK(r.goal.epsilon_rel == 0.05);
        CHECK(r.config.tolerance_rel == 0.05);
        CHECK(r.config.seed == 9);
        CHECK(r.config.population_size == 60);

        auto field_of = [&](const json& body) {
            try {
                parse_search_request(body, b, 2000);
            } catch (const FieldError& e) {
                return e.field();
            }
            return std::string("<none>");
        };
        CHECK(field_of(json{{"tolerance", 0.1}}) == "goal");
        CHECK(field_of(json{{"goal", "high"}}) == "goal");
        CHECK(field_of(json{{"goal", 1.0}, {"tolerance", -1}}) == "tolerance");
        CHECK(field_of(json{{"goal", 1.0}, {"colour", 1}}) == "colour");
        CHECK(field_of(json{{"goal", 1.0}, {"ga", {{"warp", 2}}}}) == "ga.warp");
        CHECK(field_of(json{{"goal", 1.0}, {"ga", {{"population_size", 10000000}}}}) == "ga");
        CHECK(field_of(json{{"goal", 1.0}, {"horizon_steps", 5000}}) == "horizon_steps");
        CHECK(field_of(json{{"goal", 1.0}, {"ga", {{"weights", {1, 2}}}}}) == "ga.weights");
    }

    TEST_CASE("read endpoints")
    {
        Server server;
        auto c = server.client();

        auto h = body_of(c.Get("/api/v1/health"));
        CHECK(h.at("status") == "ok");
        CHECK(h.at("version") == kApiVersion);
        CHECK(h.at("variables") == 5);
        CHECK(h.at("target") == "x5");

        auto meta = c.Get("/api/v1/series/meta");
        REQUIRE(meta);
        CHECK(meta->status == 200);
        CHECK(meta->get_header_value("Content-Type").rfind("application/json", 0) == 0);
        const auto m = json::parse(meta->body);
        CHECK(m.at("names").size() == 5);
        CHECK(m.at("alphabet").size() == 11);
        CHECK(m.at("actionable")[4] == false);
        CHECK(m.at("delta_seconds") == 3.0);

        const auto w = body_of(c.Get("/api/v1/series/window?last=7"));
        CHECK(w.at("rows") == 7);
        CHECK(w.at("timestamps").size() == 7);
        CHECK(w.at("columns").at("x1").size() == 7);
        CHECK(w.at("columns").at("x5")[6].get<double>() == testutil::ga5_model().series.at(1999, 4));
        CHECK(body_of(c.Get("/api/v1/series/window?last=999999")).at("rows") == 2000);
        auto bad = c.Get("/api/v1/series/window?last=0");
        CHECK(bad->status == 400);
        CHECK(json::parse(bad->body).at("field") == "last");

        const auto cz = body_of(c.Get("/api/v1/causality"));
        CHECK(cz.at("names").size() == 5);
        CHECK(cz.at("p_values")[2][2].is_null());

        auto missing = c.Get("/api/v1/nothing");
        CHECK(missing->status == 404);
        CHECK(json::parse(missing->body).contains("error"));
        CHECK(c.Get("/api/v1/search/nope")->status == 404);

        // The log line is written after the response is sent.
        auto log = server.log();
        for (int i = 0; i < 100 && log.size() < 8; ++i) {
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
            log = server.log();
        }
        CHECK(log.size() == 8);
        CHECK(json::parse(log.front()).contains("status"));
    }

    TEST_CASE("no bundle loaded")
    {
        Server server(false);
        auto c = server.client();
        CHECK(body_of(c.Get("/api/v1/health")).at("variables") == 0);
        CHECK(c.Get("/api/v1/series/meta")->status == 409);
        CHECK(post(c, "/api/v1/search", small_search(1.0, 1))->status == 409);
    }

    TEST_CASE("search lifecycle")
    {
        Server server;
        auto c = server.client();

        CHECK(c.Post("/api/v1/search", small_search(1.0, 1).dump(), "text/plain")->status == 415);
        auto bad = post(c, "/api/v1/search", json{{"goal", 1.0}, {"tolerance", 0}});
        CHECK(bad->status == 400);
        CHECK(json::parse(bad->body).at("field") == "tolerance");
        CHECK(post(c, "/api/v1/search", json{{"goal", 1.0}, {"extra", true}})->status == 400);
        CHECK(c.Post("/api/v1/search", "{not json", "application/json")->status == 400);

        auto accepted = post(c, "/api/v1/search", small_search(4.0, 7));
        REQUIRE(accepted->status == 202);
        const auto id = json::parse(accepted->body).at("id").get<std::string>();
        const auto done = wait_terminal(c, id);
        const auto result = done.at("result");
        const auto runs = result.at("generations_run").get<std::size_t>();
        CHECK(done.at("submitted").at("goal") == 4.0);
        CHECK(done.at("progress").at("generation") == runs - 1);
        CHECK((done.at("state") == "converged") == result.at("converged").get<bool>());

        const auto trace = body_of(c.Get("/api/v1/search/" + id + "/trace"));
        REQUIRE(trace.at("rows").size() == runs);
        for (std::size_t g = 1; g < runs; ++g)
            CHECK(trace.at("rows")[g].at("best").get<double>() <=
                  trace.at("rows")[g - 1].at("best").get<double>());
        CHECK(trace.at("rows")[0].contains("millis"));
        CHECK(body_of(c.Get("/api/v1/search/" + id + "/trace?from=2")).at("rows").size() == runs - 2);
        CHECK(c.Get("/api/v1/search/" + id + "/trace?from=-1")->status == 400);

        // Same request, same result.
        const auto again = json::parse(post(c, "/api/v1/search", small_search(4.0, 7))->body);
        const auto second = wait_terminal(c, again.at("id").get<std::string>());
        CHECK(second.at("result") == result);
    }

    TEST_CASE("admission limit")
    {
        Server server(true, ApiOptions{4, 1, 1});
        auto c = server.client();
        json slow{{"goal", 1e6}, {"tolerance", 1e-12}, {"ga", {{"max_generations", 100000}}}};
        for (int i = 0; i < 4; ++i)
            CHECK(post(c, "/api/v1/search", slow)->status == 202);
        auto full = post(c, "/api/v1/search", slow);
        CHECK(full->status == 429);
        CHECK(json::parse(full->body).at("error") == "queue_full");
        CHECK(body_of(c.Get("/api/v1/health")).at("active_jobs") == 4);
    }

    TEST_CASE("project endpoint")
    {
        Server server;
        auto c = server.client();
        json genes = json::array();
        for (int v = 0; v < 5; ++v)
            genes.push_back(std::vector<int>(4, 5));
        genes[0][3] = 10;
        auto r = post(c, "/api/v1/project", json{{"genes", genes}, {"goal", 1.0}});
        REQUIRE(r->status == 200);
        const auto doc = json::parse(r->body);
        CHECK(doc.at("steps") == 4);
        CHECK(doc.at("target_path").size() == 4);
        CHECK(doc.contains("satisfies_constraint"));
        CHECK(doc.at("goal").at("horizon_steps") == 4);

        const ScenarioEngine engine(testutil::ga5_model().bundle, testutil::ga5_model().series, 4);
        auto pol = median_policy(engine.space());
        pol.at(0, 3) = 10;
        CHECK(doc.at("terminal").get<double>() == engine.project(pol).terminal);

        CHECK(post(c, "/api/v1/project", json{{"genes", genes}})->status == 400);
        genes[4][0] = 0;
        auto pinned = post(c, "/api/v1/project", json{{"genes", genes}, {"goal", 1.0}});
        CHECK(pinned->status == 400);
        CHECK(json::parse(pinned->body).at("field") == "genes");
        CHECK(post(c, "/api/v1/project", json{{"genes", 3}, {"goal", 1.0}})->status == 400);
    }
}
