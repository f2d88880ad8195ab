#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "whatif/bundle.hpp"
#include "whatif/error.hpp"
#include "whatif/ga.hpp"
#include "whatif/series.hpp"

namespace whatif {

inline constexpr const char* kApiVersion = "1.0.0";

/// Request validation failure tied to one body field.
class FieldError : public ConfigError {
public:
    FieldError(std::string field, const std::string& detail) : ConfigError(detail), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

struct SearchRequest {
    GoalSpec goal;
    GAConfig config;
};

/// Strict parse of a POST /search body: unknown fields, wrong types and
/// out-of-range values raise FieldError naming the field.
SearchRequest parse_search_request(const nlohmann::json& body, const ModelBundle& bundle, std::size_t history_length);

struct ApiOptions {
    std::size_t max_active_jobs = 4; ///< queued + running; further submissions get 429
    std::size_t workers = 0;         ///< 0 = min(max_active_jobs, hardware concurrency)
    std::size_t search_threads = 1;  ///< evaluation threads inside one search
};

/// HTTP facade: /api/v1 endpoints over one loaded bundle plus an
/// asynchronous search job registry served from a FIFO queue.
class ApiService {
public:
    explicit ApiService(ApiOptions options = {});
    ~ApiService();
    ApiService(const ApiService&) = delete;
    ApiService& operator=(const ApiService&) = delete;

    /// Throws ConfigError when the history does not match the bundle.
    void load(ModelBundle bundle, MultivariateSeries history);

    /// Called once per request with a one-line JSON log record.
    void set_request_log(std::function<void(const std::string&)> sink);

    /// Returns the bound port, or -1 on failure.
    int bind_to_any_port(const std::string& host);
    bool bind(const std::string& host, int port);
    /// Blocks until stop().
    bool listen_after_bind();
    void stop();
    void wait_until_ready() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace whatif
