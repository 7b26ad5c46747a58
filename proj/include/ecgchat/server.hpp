// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

// HTTP JSON API under /v1 on top of ChatService.

#pragma once

#include "ecgchat/chat.hpp"

#include <memory>
#include <string>

namespace ecgchat::server {

struct ServerOptions {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    int workers = 4;
    int queue_limit = 16;
    int preview_points = 500;  // per lead
    std::size_t max_upload_bytes = 64u << 20;
};

/// Routes:
///   POST /v1/session                 -> {"id", "checkpoint", "history"}
///   POST /v1/session/{id}/message    {"text", "ecg_refs"} -> {"reply", "session"}
///   POST /v1/ecg[?spans=<class>]     record body -> {"ref", "preview", "spans"?}
///   GET  /v1/session/{id}            -> transcript
///   GET  /healthz                    -> "ok"
/// Errors are {"error": {"code", "message"}}.
class Server {
public:
    Server(chat::ChatService& service, ServerOptions opts);
    ~Server();

    /// Binds and returns the port actually used.
    int bind();
    /// Serves until stop(); call bind() first.
    bool run();
    void stop();
    bool running() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Min and max per bucket, at most `points` buckets per present lead.
nlohmann::json waveform_preview(const records::CanonicalRecord& rec, int points);

}  // namespace ecgchat::server
