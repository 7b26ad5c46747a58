// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

// Chat-completion clients used for multi-ECG QA generation and judging.

#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecgchat::llm {

class LlmError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Turn {
    std::string role;
    std::string content;
};

struct CompletionRequest {
    std::string model;
    std::vector<Turn> messages;
    double temperature = 0.7;
    std::optional<std::uint64_t> seed;
    int max_tokens = 2048;

    nlohmann::json to_json() const;
};

class Client {
public:
    virtual ~Client() = default;
    /// Returns the assistant text. Throws LlmError once retries are exhausted.
    virtual std::string complete(const CompletionRequest& req) = 0;
    virtual std::string model() const = 0;
};

struct HttpClientConfig {
    std::string endpoint = "http://127.0.0.1:8000/v1/chat/completions";
    std::string model = "generator";
    std::string token_env = "ECGCHAT_LLM_TOKEN";
    int retries = 3;
    double backoff_s = 0.5;
    double timeout_s = 120.0;
    int max_in_flight = 4;

    static HttpClientConfig from_json(const nlohmann::json& j);
};

/// OpenAI-style chat-completion endpoint. The bearer token is read from the
/// environment variable named in the config on every call.
class HttpClient final : public Client {
public:
    explicit HttpClient(HttpClientConfig cfg);
    std::string complete(const CompletionRequest& req) override;
    std::string model() const override { return cfg_.model; }

private:
    HttpClientConfig cfg_;
    std::counting_semaphore<64> slots_;
};

/// Deterministic stand-in: replies come from a queue, or from a function when
/// the queue is empty. Every request is recorded.
class ScriptedClient final : public Client {
public:
    using Responder = std::function<std::string(const CompletionRequest&)>;

    ScriptedClient() = default;
    explicit ScriptedClient(Responder fn) : fn_(std::move(fn)) {}

    void push(std::string reply);
    void push_failure(std::string message);
    std::string complete(const CompletionRequest& req) override;
    std::string model() const override { return "scripted"; }

    std::vector<CompletionRequest> requests() const;

private:
    mutable std::mutex mu_;
    std::deque<std::optional<std::string>> queue_;  // nullopt entries throw
    std::deque<std::string> failures_;
    Responder fn_;
    std::vector<CompletionRequest> log_;
};

}  // namespace ecgchat::llm
