// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "ecgchat/llm_client.hpp"

#include <httplib.h>

#include <algorithm>
#include <cstdlib>
#include <thread>

namespace ecgchat::llm {

nlohmann::json CompletionRequest::to_json() const {
    nlohmann::json j;
    j["model"] = model;
    j["messages"] = nlohmann::json::array();
    for (const auto& t : messages) j["messages"].push_back({{"role", t.role}, {"content", t.content}});
    j["temperature"] = temperature;
    j["max_tokens"] = max_tokens;
    if (seed) j["seed"] = *seed;
    return j;
}

HttpClientConfig HttpClientConfig::from_json(const nlohmann::json& j) {
    HttpClientConfig c;
    c.endpoint = j.value("endpoint", c.endpoint);
    c.model = j.value("model", c.model);
    c.token_env = j.value("token_env", c.token_env);
    c.retries = j.value("retries", c.retries);
    c.backoff_s = j.value("backoff_s", c.backoff_s);
    c.timeout_s = j.value("timeout_s", c.timeout_s);
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    return c;
}

namespace {

struct Endpoint {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

Endpoint split_endpoint(const std::string& url) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos) throw LlmError("endpoint must be an absolute URL: " + url);
    const auto slash = url.find('/', scheme + 3);
    if (slash == std::string::npos) return {url, "/"};
    return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace

HttpClient::HttpClient(HttpClientConfig cfg)
    : cfg_(std::move(cfg)), slots_(std::clamp(cfg_.max_in_flight, 1, 64)) {}

std::string HttpClient::complete(const CompletionRequest& req) {
    const Endpoint ep = split_endpoint(cfg_.endpoint);
    CompletionRequest r = req;
    if (r.model.empty()) r.model = cfg_.model;
    const std::string body = r.to_json().dump();

    slots_.acquire();
    struct Release {
        std::counting_semaphore<64>& s;
        ~Release() { s.release(); }
    } release{slots_};

    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
        if (attempt > 0)
            std::this_thread::sleep_for(std::chrono::duration<double>(cfg_.backoff_s * (1 << (attempt - 1))));
        httplib::Client cli(ep.origin);
        const auto secs = static_cast<time_t>(cfg_.timeout_s);
        cli.set_read_timeout(secs, 0);
        cli.set_write_timeout(secs, 0);
        if (const char* tok = std::getenv(cfg_.token_env.c_str()); tok && *tok) cli.set_bearer_token_auth(tok);
        auto res = cli.Post(ep.path, body, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 429 || res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) throw LlmError("HTTP " + std::to_string(res->status) + ": " + res->body);
        try {
            const auto j = nlohmann::json::parse(res->body);
            return j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw LlmError(std::string("unexpected completion body: ") + e.what());
        }
    }
    throw LlmError("completion failed after " + std::to_string(cfg_.retries + 1) + " attempts: " + last_error);
}

void ScriptedClient::push(std::string reply) {
    std::lock_guard lock(mu_);
    queue_.emplace_back(std::move(reply));
}

void ScriptedClient::push_failure(std::string message) {
    std::lock_guard lock(mu_);
    queue_.emplace_back(std::nullopt);
    failures_.push_back(std::move(message));
}

std::string ScriptedClient::complete(const CompletionRequest& req) {
    std::lock_guard lock(mu_);
    log_.push_back(req);
    if (!queue_.empty()) {
        auto next = std::move(queue_.front());
        queue_.pop_front();
        if (!next) {
            std::string msg = std::move(failures_.front());
            failures_.pop_front();
            throw LlmError(msg);
        }
        return *next;
    }
    if (fn_) return fn_(req);
    throw LlmError("scripted client has no reply queued");
}

std::vector<CompletionRequest> ScriptedClient::requests() const {
    std::lock_guard lock(mu_);
    return log_;
}

}  // namespace ecgchat::llm
