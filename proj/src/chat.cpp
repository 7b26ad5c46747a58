// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "ecgchat/chat.hpp"

#include "ecgchat/datagen.hpp"
#include "ecgchat/record_io.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace ecgchat::chat {

nlohmann::json spans_json(const spans::SpanSet& s) {
    auto arr = nlohmann::json::array();
    for (const auto& sp : s.spans) arr.push_back({sp.start, sp.end});
    return arr;
}

void to_json(nlohmann::json& j, const ChatTurn& t) {
    j = {{"role", t.role}, {"text", t.text}, {"ecg_refs", t.ecg_refs}};
    if (t.spans) {
        j["spans"] = spans_json(*t.spans);
        j["found"] = !t.spans->is_not_found();
    }
}

void from_json(const nlohmann::json& j, ChatTurn& t) {
    t.role = j.at("role").get<std::string>();
    t.text = j.at("text").get<std::string>();
    t.ecg_refs = j.value("ecg_refs", std::vector<std::string>{});
    t.spans.reset();
    if (j.contains("spans")) {
        if (!j.value("found", true)) {
            t.spans = spans::SpanSet::not_found();
        } else {
            std::vector<spans::Span> v;
            for (const auto& p : j.at("spans")) v.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
            t.spans = spans::SpanSet{spans::SpanStatus::Spans, std::move(v)};
        }
    }
}

void to_json(nlohmann::json& j, const ChatSession& s) {
    j = {{"id", s.id}, {"checkpoint", s.checkpoint_tag}, {"history", s.history}};
}

void from_json(const nlohmann::json& j, ChatSession& s) {
    s.id = j.at("id").get<std::string>();
    s.checkpoint_tag = j.value("checkpoint", std::string());
    s.history = j.at("history").get<std::vector<ChatTurn>>();
}

// ----------------------------------------------------------------- library

std::string content_ref(const records::CanonicalRecord& rec) {
    std::uint64_t h = hash_matrix(rec.signal);
    for (bool b : rec.lead_mask) {
        h ^= b ? 0x9e3779b97f4a7c15ull : 0x7f4a7c159e3779b9ull;
        h *= 1099511628211ull;
    }
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string("ecg-") + buf;
}

std::string EcgLibrary::add(records::CanonicalRecord rec) {
    std::string ref = content_ref(rec);
    std::lock_guard lock(mu_);
    records_.try_emplace(ref, std::move(rec));
    return ref;
}

bool EcgLibrary::contains(const std::string& ref) const {
    std::lock_guard lock(mu_);
    return records_.contains(ref);
}

records::CanonicalRecord EcgLibrary::get(const std::string& ref) const {
    std::lock_guard lock(mu_);
    const auto it = records_.find(ref);
    if (it == records_.end()) throw UnknownEcgRef("unknown ECG ref: " + ref);
    return it->second;
}

// ------------------------------------------------------------------ store

SessionStore::SessionStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    if (dir_.empty()) return;
    std::filesystem::create_directories(dir_);
    for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
        if (entry.path().extension() != ".json") continue;
        std::ifstream in(entry.path());
        ChatSession s = nlohmann::json::parse(in).get<ChatSession>();
        const std::string prefix = "session-";
        if (s.id.rfind(prefix, 0) == 0) {
            try {
                next_ = std::max(next_, std::stol(s.id.substr(prefix.size())) + 1);
            } catch (const std::exception&) {
            }
        }
        sessions_[s.id] = std::move(s);
    }
}

ChatSession SessionStore::create(const std::string& checkpoint_tag) {
    std::lock_guard lock(mu_);
    ChatSession s;
    s.id = "session-" + std::to_string(next_++);
    s.checkpoint_tag = checkpoint_tag;
    sessions_[s.id] = s;
    persist(s);
    return s;
}

ChatSession SessionStore::get(const std::string& id) const {
    std::lock_guard lock(mu_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw UnknownSession("unknown session: " + id);
    return it->second;
}

void SessionStore::append(const std::string& id, std::span<const ChatTurn> turns) {
    std::lock_guard lock(mu_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw UnknownSession("unknown session: " + id);
    it->second.history.insert(it->second.history.end(), turns.begin(), turns.end());
    persist(it->second);
}

std::vector<std::string> SessionStore::ids() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto& [id, s] : sessions_) out.push_back(id);
    return out;
}

void SessionStore::persist(const ChatSession& s) const {
    if (dir_.empty()) return;
    const auto path = dir_ / (s.id + ".json");
    const auto tmp = dir_ / (s.id + ".json.tmp");
    {
        std::ofstream out(tmp);
        out << nlohmann::json(s).dump(2) << '\n';
    }
    std::filesystem::rename(tmp, path);
}

// ----------------------------------------------------------------- engine

std::string user_prompt_text(const ChatTurn& user) {
    if (user.text.find(fusion::Tokenizer::kEcgPlaceholderText) != std::string::npos) return user.text;
    return fusion::ecg_prompt(user.ecg_refs.size(), user.text);
}

ChatEngine::ChatEngine(const fusion::EcgChatModel& model, EngineOptions opts) : model_(model), opts_(std::move(opts)) {}

ChatTurn ChatEngine::reply(std::span<const ChatTurn> history, const ChatTurn& user, const EcgLibrary& library,
                           std::uint64_t turn_seed) const {
    std::vector<records::CanonicalRecord> ecgs;
    std::vector<fusion::ChatMessage> msgs;
    auto add = [&](const ChatTurn& t) {
        if (t.role == "user") {
            for (const auto& r : t.ecg_refs) ecgs.push_back(library.get(r));
            msgs.push_back({"user", user_prompt_text(t)});
        } else {
            msgs.push_back({t.role, t.text});
        }
    };
    for (const auto& t : history) add(t);
    add(user);

    std::lock_guard lock(mu_);
    ag::NoGradGuard no_grad;
    std::vector<ag::Var> blocks;
    for (const auto& e : ecgs) blocks.push_back(model_.project_ecg(e));
    const auto prompt = model_.assemble_prompt(blocks, msgs, true);
    auto decode = opts_.decode;
    decode.seed = turn_seed;
    ChatTurn out;
    out.role = "assistant";
    out.text = model_.generate(prompt, decode);
    auto parsed = spans::parse(out.text);
    if (!parsed.is_failure()) out.spans = std::move(parsed);
    return out;
}

// ---------------------------------------------------------------- service

ChatService::ChatService(const fusion::EcgChatModel& model, EngineOptions opts, std::filesystem::path session_dir)
    : engine_(model, std::move(opts)), store_(std::move(session_dir)) {}

ChatSession ChatService::new_session() { return store_.create(engine_.options().checkpoint_tag); }

ChatTurn ChatService::send(const std::string& session_id, const std::string& text,
                           const std::vector<std::string>& refs) {
    std::lock_guard lock(send_mu_);
    const ChatSession s = store_.get(session_id);
    for (const auto& r : refs)
        if (!library_.contains(r)) throw UnknownEcgRef("unknown ECG ref: " + r);
    ChatTurn user{"user", text, refs, std::nullopt};
    const auto seed =
        derive_seed(engine_.options().decode.seed, s.id + "/turn" + std::to_string(s.history.size() / 2));
    ChatTurn reply = engine_.reply(s.history, user, library_, seed);
    const ChatTurn both[] = {user, reply};
    store_.append(session_id, both);
    return reply;
}

std::string ChatService::upload(const records::EcgRecord& rec) { return library_.add(records::canonicalize(rec)); }

ChatTurn ChatService::predict_spans(const std::string& ref, const std::string& class_name) {
    std::string q(datagen::localization_templates().front());
    const auto pos = q.find("{abnormal}");
    q.replace(pos, std::string_view("{abnormal}").size(), class_name);
    ChatTurn user{"user", q, {ref}, std::nullopt};
    return engine_.reply({}, user, library_, engine_.options().decode.seed);
}

// ------------------------------------------------------------------- REPL

namespace {

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::string run_repl(ChatService& service, std::istream& in, std::ostream& out, bool prompt) {
    std::string session = service.new_session().id;
    std::vector<std::string> staged;
    out << "session " << session << '\n';
    std::string line;
    while (true) {
        if (prompt) out << "> " << std::flush;
        if (!std::getline(in, line)) break;
        line = trim(line);
        if (line.empty()) continue;
        try {
            if (line[0] == '/') {
                const auto sp = line.find(' ');
                const std::string cmd = line.substr(0, sp);
                const std::string arg = sp == std::string::npos ? std::string() : trim(line.substr(sp + 1));
                if (cmd == "/quit" || cmd == "/exit") break;
                if (cmd == "/new") {
                    session = service.new_session().id;
                    staged.clear();
                    out << "session " << session << '\n';
                } else if (cmd == "/attach") {
                    const auto rec = records::ingest_record(arg, records::format_from_path(arg));
                    const auto ref = service.upload(rec);
                    staged.push_back(ref);
                    out << "attached " << ref << '\n';
                } else if (cmd == "/ref") {
                    if (!service.library().contains(arg)) throw UnknownEcgRef("unknown ECG ref: " + arg);
                    staged.push_back(arg);
                    out << "attached " << arg << '\n';
                } else if (cmd == "/show") {
                    out << nlohmann::json(service.session(session)).dump(2) << '\n';
                } else {
                    out << "error: unknown command " << cmd << '\n';
                }
                continue;
            }
            const ChatTurn reply = service.send(session, line, staged);
            staged.clear();
            out << "assistant: " << reply.text << '\n';
            if (reply.spans) out << "spans: " << spans_json(*reply.spans).dump() << '\n';
        } catch (const fusion::ContextOverflow& e) {
            out << "error: context overflow: " << e.what() << '\n';
        } catch (const std::exception& e) {
            out << "error: " << e.what() << '\n';
        }
    }
    return session;
}

}  // namespace ecgchat::chat
