// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

// Chat sessions over a loaded model: content-addressed ECG uploads, an
// append-only session store and the engine shared by the terminal REPL and
// the HTTP service.

#pragma once

#include "ecgchat/fusion.hpp"
#include "ecgchat/spans.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecgchat::chat {

class ChatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UnknownSession : public ChatError {
public:
    using ChatError::ChatError;
};

class UnknownEcgRef : public ChatError {
public:
    using ChatError::ChatError;
};

struct ChatTurn {
    std::string role;  // "user" | "assistant"
    std::string text;
    std::vector<std::string> ecg_refs;
    std::optional<spans::SpanSet> spans;  // assistant replies that parse as a span answer

    bool operator==(const ChatTurn&) const = default;
};

struct ChatSession {
    std::string id;
    std::string checkpoint_tag;
    std::vector<ChatTurn> history;

    bool operator==(const ChatSession&) const = default;
};

void to_json(nlohmann::json& j, const ChatTurn& t);
void from_json(const nlohmann::json& j, ChatTurn& t);
void to_json(nlohmann::json& j, const ChatSession& s);
void from_json(const nlohmann::json& j, ChatSession& s);

/// Spans as [[start, end], ...]; Not Found is an empty list.
nlohmann::json spans_json(const spans::SpanSet& s);

/// Uploaded records keyed by a content hash ("ecg-" + 16 hex digits).
class EcgLibrary {
public:
    std::string add(records::CanonicalRecord rec);
    bool contains(const std::string& ref) const;
    records::CanonicalRecord get(const std::string& ref) const;

private:
    mutable std::mutex mu_;
    std::map<std::string, records::CanonicalRecord> records_;
};

std::string content_ref(const records::CanonicalRecord& rec);

/// Session ids are "session-<n>" in creation order. With a persistence
/// directory every session is written to <dir>/<id>.json after each change
/// and existing files are loaded on construction.
class SessionStore {
public:
    explicit SessionStore(std::filesystem::path dir = {});

    ChatSession create(const std::string& checkpoint_tag);
    ChatSession get(const std::string& id) const;
    void append(const std::string& id, std::span<const ChatTurn> turns);
    std::vector<std::string> ids() const;

private:
    void persist(const ChatSession& s) const;

    std::filesystem::path dir_;
    mutable std::mutex mu_;
    std::map<std::string, ChatSession> sessions_;
    long next_ = 1;
};

struct EngineOptions {
    fusion::DecodeOptions decode{fusion::DecodeMode::Greedy, 48, 0.7, 0};
    std::string checkpoint_tag = "untagged";
};

/// Runs the model on a whole transcript. Inference is serialized.
class ChatEngine {
public:
    ChatEngine(const fusion::EcgChatModel& model, EngineOptions opts);

    /// Reply to `user` given the earlier turns. ECG blocks are taken from the
    /// refs of every user turn in order. Throws UnknownEcgRef for refs not in
    /// the library and fusion::ContextOverflow when the prompt is too long.
    ChatTurn reply(std::span<const ChatTurn> history, const ChatTurn& user, const EcgLibrary& library,
                   std::uint64_t turn_seed) const;

    const EngineOptions& options() const { return opts_; }
    const fusion::EcgChatModel& model() const { return model_; }

private:
    const fusion::EcgChatModel& model_;
    EngineOptions opts_;
    mutable std::mutex mu_;
};

/// The model-facing text of a user turn: one <ecg> per attached ref ahead of
/// the text, unless the text already carries placeholders.
std::string user_prompt_text(const ChatTurn& user);

/// Sessions, uploads and the engine behind one facade.
class ChatService {
public:
    ChatService(const fusion::EcgChatModel& model, EngineOptions opts, std::filesystem::path session_dir = {});

    ChatSession new_session();
    ChatSession session(const std::string& id) const { return store_.get(id); }
    /// Appends the user turn and the reply; nothing is appended on error.
    ChatTurn send(const std::string& session_id, const std::string& text, const std::vector<std::string>& refs);
    std::string upload(const records::EcgRecord& rec);

    /// Asks the localization question for one class about an uploaded record.
    ChatTurn predict_spans(const std::string& ref, const std::string& class_name);

    EcgLibrary& library() { return library_; }
    const ChatEngine& engine() const { return engine_; }

private:
    ChatEngine engine_;
    EcgLibrary library_;
    SessionStore store_;
    std::mutex send_mu_;
};

/// Terminal loop. Lines starting with '/' are commands:
///   /attach <path>   ingest a record file and attach it to the next message
///   /ref <ref>       attach an already uploaded record
///   /new             start a new session
///   /show            print the transcript as JSON
///   /quit            leave
/// Anything else is sent as a message. Returns the last session id.
std::string run_repl(ChatService& service, std::istream& in, std::ostream& out, bool prompt = true);

}  // namespace ecgchat::chat
