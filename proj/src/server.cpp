// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "ecgchat/server.hpp"

#include "ecgchat/datagen.hpp"
#include "ecgchat/record_io.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>

namespace ecgchat::server {

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, std::string_view message) {
    send_json(res, status, {{"error", {{"code", code}, {"message", message}}}});
}

std::string class_name_for(const std::string& query) {
    const auto table = datagen::ClassTable::defaults();
    for (const auto& c : table.classes())
        if (c.key == query) return c.name;
    return query;
}

}  // namespace

nlohmann::json waveform_preview(const records::CanonicalRecord& rec, int points) {
    const Index n = rec.samples();
    const Index buckets = std::max<Index>(1, std::min<Index>(n, points));
    nlohmann::json leads = nlohmann::json::object();
    for (int slot : rec.source_order) {
        auto mins = nlohmann::json::array();
        auto maxs = nlohmann::json::array();
        for (Index b = 0; b < buckets; ++b) {
            const Index lo = b * n / buckets;
            const Index hi = std::max(lo + 1, (b + 1) * n / buckets);
            const auto seg = rec.signal.row(slot).segment(lo, hi - lo);
            mins.push_back(seg.minCoeff());
            maxs.push_back(seg.maxCoeff());
        }
        leads[std::string(records::kCanonicalLeads[static_cast<std::size_t>(slot)])] = {{"min", mins}, {"max", maxs}};
    }
    return {{"duration_s", rec.duration()},
            {"buckets", buckets},
            {"bucket_s", rec.duration() / static_cast<double>(buckets)},
            {"leads", leads}};
}

struct Server::Impl {
    chat::ChatService& service;
    ServerOptions opts;
    httplib::Server http;
    std::atomic<bool> running{false};

    Impl(chat::ChatService& s, ServerOptions o) : service(s), opts(std::move(o)) {}

    template <class F>
    void guarded(httplib::Response& res, F&& f) {
        try {
            f();
        } catch (const chat::UnknownSession& e) {
            send_error(res, 404, "unknown_session", e.what());
        } catch (const chat::UnknownEcgRef& e) {
            send_error(res, 404, "unknown_ecg_ref", e.what());
        } catch (const fusion::ContextOverflow& e) {
            send_error(res, 413, "context_overflow", e.what());
        } catch (const fusion::PromptError& e) {
            send_error(res, 400, "bad_prompt", e.what());
        } catch (const records::RecordError& e) {
            send_error(res, 400, "bad_record", e.what());
        } catch (const nlohmann::json::exception& e) {
            send_error(res, 400, "bad_json", e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, "internal", e.what());
        }
    }

    void routes() {
        http.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { res.set_content("ok", "text/plain"); });

        http.Post("/v1/session", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] { send_json(res, 201, service.new_session()); });
        });

        http.Get(R"(/v1/session/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { send_json(res, 200, service.session(req.matches[1])); });
        });

        http.Post(R"(/v1/session/([^/]+)/message)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto body = nlohmann::json::parse(req.body);
                const auto text = body.at("text").get<std::string>();
                const auto refs = body.value("ecg_refs", std::vector<std::string>{});
                const std::string id = req.matches[1];
                const auto reply = service.send(id, text, refs);
                send_json(res, 200, {{"reply", reply}, {"session", id}});
            });
        });

        http.Post("/v1/ecg", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const bool binary = req.body.size() >= 4 && req.body.compare(0, 4, "ECGB") == 0;
                const auto rec = binary ? records::decode_interchange(req.body) : records::parse_columnar_text(req.body);
                const auto ref = service.upload(rec);
                const auto canon = service.library().get(ref);
                nlohmann::json out = {{"ref", ref},
                                      {"record_id", canon.record_id},
                                      {"leads", canon.present_leads()},
                                      {"preview", waveform_preview(canon, opts.preview_points)}};
                if (req.has_param("spans")) {
                    const auto turn = service.predict_spans(ref, class_name_for(req.get_param_value("spans")));
                    out["prediction"] = turn;
                    if (turn.spans) out["spans"] = chat::spans_json(*turn.spans);
                }
                send_json(res, 201, out);
            });
        });
    }
};

Server::Server(chat::ChatService& service, ServerOptions opts) : impl_(std::make_unique<Impl>(service, std::move(opts))) {
    const auto workers = static_cast<std::size_t>(std::max(1, impl_->opts.workers));
    const auto queue = static_cast<std::size_t>(std::max(1, impl_->opts.queue_limit));
    impl_->http.new_task_queue = [workers, queue] { return new httplib::ThreadPool(workers, queue); };
    impl_->http.set_payload_max_length(impl_->opts.max_upload_bytes);
    impl_->routes();
}

Server::~Server() { stop(); }

int Server::bind() {
    if (impl_->opts.port == 0) return impl_->opts.port = impl_->http.bind_to_any_port(impl_->opts.host);
    if (!impl_->http.bind_to_port(impl_->opts.host, impl_->opts.port)) return -1;
    return impl_->opts.port;
}

bool Server::run() {
    impl_->running = true;
    const bool ok = impl_->http.listen_after_bind();
    impl_->running = false;
    return ok;
}

void Server::stop() {
    if (impl_) impl_->http.stop();
}

bool Server::running() const { return impl_->running && impl_->http.is_running(); }

}  // namespace ecgchat::server
