// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "ecgchat/chat.hpp"
#include "ecgchat/record_io.hpp"
#include "ecgchat/server.hpp"

#include "../support/fixtures.hpp"

#include <gtest/gtest.h>
#include <httplib.h>

#include <sstream>
#include <thread>

using namespace ecgchat;
using namespace ecgchat::chat;

namespace {

struct Env {
    std::vector<synth::SynthRecord> corpus = synth::make_corpus(10, 8);
    fusion::Tokenizer tok;
    std::unique_ptr<fusion::EcgChatModel> model;

    Env() {
        std::vector<std::string> texts;
        for (const auto& s : corpus) texts.push_back(s.report);
        for (auto t : datagen::localization_templates()) texts.emplace_back(t);
        tok = fusion::Tokenizer::train(texts);
        model = fixture::toy_model(tok, 3);
    }
};

Env& env() {
    static Env e;
    return e;
}

EngineOptions engine_options() {
    EngineOptions o;
    o.decode.max_new = 12;
    o.decode.seed = 42;
    o.checkpoint_tag = "toy";
    return o;
}

class LiveServer {
public:
    explicit LiveServer(ChatService& service) : server_(service, {.host = "127.0.0.1", .port = 0, .workers = 2}) {
        port_ = server_.bind();
        thread_ = std::thread([this] { server_.run(); });
        for (int i = 0; i < 200 && !server_.running(); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    ~LiveServer() {
        server_.stop();
        thread_.join();
    }
    httplib::Client client() const {
        httplib::Client c("127.0.0.1", port_);
        c.set_read_timeout(60, 0);
        return c;
    }

private:
    server::Server server_;
    int port_ = 0;
    std::thread thread_;
};

std::string upload(httplib::Client& c, const records::EcgRecord& rec) {
    const auto res = c.Post("/v1/ecg", records::encode_interchange(rec), "application/octet-stream");
    EXPECT_TRUE(res);
    EXPECT_EQ(res->status, 201) << res->body;
    return nlohmann::json::parse(res->body).at("ref").get<std::string>();
}

httplib::Result post_message(httplib::Client& c, const std::string& id, const std::string& text,
                             const std::vector<std::string>& refs) {
    return c.Post("/v1/session/" + id + "/message", nlohmann::json{{"text", text}, {"ecg_refs", refs}}.dump(),
                  "application/json");
}

}  // namespace

TEST(Library, ContentRefsAreStable) {
    EcgLibrary lib;
    const auto rec = records::canonicalize(env().corpus[0].record);
    const auto a = lib.add(rec);
    EXPECT_EQ(a, lib.add(rec));
    EXPECT_EQ(a.size(), 20u);
    EXPECT_EQ(a.rfind("ecg-", 0), 0u);
    EXPECT_NE(a, content_ref(records::canonicalize(env().corpus[1].record)));
    EXPECT_THROW(lib.get("ecg-0000000000000000"), UnknownEcgRef);
}

TEST(Sessions, PersistAndReload) {
    const auto dir = fixture::scratch_dir("sessions");
    std::string id;
    ChatSession saved;
    {
        ChatService svc(*env().model, engine_options(), dir);
        id = svc.new_session().id;
        const auto ref = svc.upload(env().corpus[0].record);
        svc.send(id, "what does this show?", {ref});
        saved = svc.session(id);
        EXPECT_EQ(saved.history.size(), 2u);
    }
    ChatService again(*env().model, engine_options(), dir);
    EXPECT_EQ(again.session(id), saved);
    EXPECT_NE(again.new_session().id, id);
}

TEST(Sessions, FailedSendLeavesHistoryUntouched) {
    ChatService svc(*env().model, engine_options());
    const auto id = svc.new_session().id;
    EXPECT_THROW(svc.send(id, "hi", {"ecg-ffffffffffffffff"}), UnknownEcgRef);
    EXPECT_TRUE(svc.session(id).history.empty());
    EXPECT_THROW(svc.send("session-999", "hi", {}), UnknownSession);
}

TEST(Turn, JsonRoundTripKeepsSpans) {
    ChatTurn t{"assistant", "Duration: 1.0s-2.0s", {}, spans::parse("Duration: 1.0s-2.0s")};
    EXPECT_EQ(nlohmann::json(t).get<ChatTurn>(), t);
    ChatTurn nf{"assistant", "Not Found", {}, spans::SpanSet::not_found()};
    const nlohmann::json j = nf;
    EXPECT_FALSE(j.at("found").get<bool>());
    EXPECT_EQ(j.get<ChatTurn>(), nf);
}

TEST(Http, EndpointsAndErrors) {
    ChatService svc(*env().model, engine_options());
    LiveServer srv(svc);
    auto c = srv.client();

    auto h = c.Get("/healthz");
    ASSERT_TRUE(h);
    EXPECT_EQ(h->body, "ok");

    auto s = c.Post("/v1/session", "", "application/json");
    ASSERT_TRUE(s);
    EXPECT_EQ(s->status, 201);
    const auto id = nlohmann::json::parse(s->body).at("id").get<std::string>();

    std::vector<std::string> refs;
    for (int i = 0; i < 3; ++i) refs.push_back(upload(c, env().corpus[static_cast<std::size_t>(i)].record));

    auto one = post_message(c, id, "compare these recordings", refs);
    ASSERT_TRUE(one);
    EXPECT_EQ(one->status, 200) << one->body;
    for (const char* q : {"anything else?", "and the rhythm?"}) {
        auto r = post_message(c, id, q, {});
        ASSERT_TRUE(r);
        EXPECT_EQ(r->status, 200) << r->body;
    }
    auto g = c.Get("/v1/session/" + id);
    ASSERT_TRUE(g);
    const auto hist = nlohmann::json::parse(g->body).at("history");
    ASSERT_EQ(hist.size(), 6u);
    EXPECT_EQ(hist[0].at("ecg_refs").size(), 3u);
    EXPECT_EQ(hist[1].at("role"), "assistant");

    auto bad_ref = post_message(c, id, "hi", {"ecg-0123456789abcdef"});
    ASSERT_TRUE(bad_ref);
    EXPECT_EQ(bad_ref->status, 404);
    EXPECT_EQ(nlohmann::json::parse(bad_ref->body).at("error").at("code"), "unknown_ecg_ref");

    auto bad_session = c.Get("/v1/session/session-12345");
    ASSERT_TRUE(bad_session);
    EXPECT_EQ(bad_session->status, 404);
    EXPECT_EQ(nlohmann::json::parse(bad_session->body).at("error").at("code"), "unknown_session");

    auto bad_json = c.Post("/v1/session/" + id + "/message", "{nope", "application/json");
    ASSERT_TRUE(bad_json);
    EXPECT_EQ(bad_json->status, 400);

    auto bad_record = c.Post("/v1/ecg", "not a record", "text/plain");
    ASSERT_TRUE(bad_record);
    EXPECT_EQ(bad_record->status, 400);
    EXPECT_EQ(nlohmann::json::parse(bad_record->body).at("error").at("code"), "bad_record");
}

TEST(Http, ContextOverflowIsStructured) {
    ChatService svc(*env().model, engine_options());
    LiveServer srv(svc);
    auto c = srv.client();
    const auto id = nlohmann::json::parse(c.Post("/v1/session", "", "application/json")->body).at("id").get<std::string>();
    std::vector<std::string> refs;
    for (std::size_t i = 0; i < 9; ++i) refs.push_back(upload(c, env().corpus[i].record));
    auto r = post_message(c, id, "compare all of these", refs);
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 413);
    const auto err = nlohmann::json::parse(r->body).at("error");
    EXPECT_EQ(err.at("code"), "context_overflow");
    EXPECT_FALSE(err.at("message").get<std::string>().empty());
    EXPECT_TRUE(svc.session(id).history.empty());
}

TEST(Http, UploadPreviewAndSpans) {
    ChatService svc(*env().model, engine_options());
    LiveServer srv(svc);
    auto c = srv.client();
    const auto& rec = env().corpus[0].record;
    auto res = c.Post("/v1/ecg?spans=atrial fibrillation", records::encode_interchange(rec), "application/octet-stream");
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 201) << res->body;
    const auto j = nlohmann::json::parse(res->body);
    const auto& prev = j.at("preview");
    EXPECT_NEAR(prev.at("duration_s").get<double>(), rec.duration(), 1e-9);
    EXPECT_LE(prev.at("buckets").get<int>(), 500);
    EXPECT_EQ(prev.at("leads").size(), rec.lead_names.size());
    EXPECT_TRUE(j.contains("prediction"));
}

TEST(Parity, ReplAndHttpTranscriptsMatch) {
    const std::vector<std::string> questions = {"describe this ecg", "is there any arrhythmia?", "thanks"};

    ChatService repl_svc(*env().model, engine_options());
    const auto dir = fixture::scratch_dir("parity");
    const auto path = dir / "a.ecgb";
    records::write_interchange(env().corpus[2].record, path);
    std::stringstream in;
    in << "/attach " << path.string() << '\n';
    for (const auto& q : questions) in << q << '\n';
    in << "/quit\n";
    std::stringstream out;
    const auto repl_id = run_repl(repl_svc, in, out, false);
    const auto repl = repl_svc.session(repl_id);

    ChatService http_svc(*env().model, engine_options());
    LiveServer srv(http_svc);
    auto c = srv.client();
    const auto id = nlohmann::json::parse(c.Post("/v1/session", "", "application/json")->body).at("id").get<std::string>();
    const auto ref = upload(c, env().corpus[2].record);
    for (std::size_t i = 0; i < questions.size(); ++i) {
        auto r = post_message(c, id, questions[i], i == 0 ? std::vector<std::string>{ref} : std::vector<std::string>{});
        ASSERT_TRUE(r);
        ASSERT_EQ(r->status, 200);
    }
    const auto http = nlohmann::json::parse(c.Get("/v1/session/" + id)->body).get<ChatSession>();
    ASSERT_EQ(repl.history.size(), 6u);
    EXPECT_EQ(repl.id, http.id);
    EXPECT_EQ(repl.history, http.history);
    EXPECT_NE(out.str().find("assistant: " + repl.history[1].text), std::string::npos);
}

TEST(Repl, ReportsErrorsAndContinues) {
    ChatService svc(*env().model, engine_options());
    std::stringstream in("/ref ecg-0000000000000000\n/bogus\nhello\n/show\n");
    std::stringstream out;
    const auto id = run_repl(svc, in, out, false);
    const auto text = out.str();
    EXPECT_NE(text.find("error: unknown ECG ref"), std::string::npos);
    EXPECT_NE(text.find("error: unknown command /bogus"), std::string::npos);
    EXPECT_EQ(svc.session(id).history.size(), 2u);
    EXPECT_NE(text.find("\"history\""), std::string::npos);
}
