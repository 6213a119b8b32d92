#pragma once

#include <cstddef>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace pagent::llm {

enum class Role { System, User, Assistant, Tool };

std::string to_string(Role role);

struct ChatMessage {
    Role role = Role::User;
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

struct CompletionParams {
    double temperature = 0.1;
    int max_tokens = 1024;
    std::vector<std::string> stop_sequences;
};

struct CallRecord {
    std::vector<ChatMessage> request;
    std::string response;
};

// Flattens a message list into one searchable text block, one
// "role: content" line per message. Scripted rules match against this.
std::string render_messages(const std::vector<ChatMessage>& messages);

// Uniform chat-completion interface. Thread-safe: concurrent complete()
// calls are permitted and every call lands in the log exactly once.
class ChatBackend {
public:
    virtual ~ChatBackend() = default;

    std::string complete(const std::vector<ChatMessage>& messages,
                         const CompletionParams& params = {});

    std::vector<CallRecord> call_log() const;
    std::size_t call_count() const;

protected:
    virtual std::string do_complete(const std::vector<ChatMessage>& messages,
                                    const CompletionParams& params) = 0;

private:
    mutable std::mutex mutex_;
    std::vector<CallRecord> log_;
};

struct ScriptedRule {
    std::string match;
    bool is_regex = false;
    std::string response;
};

// Ordered first-match-wins rules over the rendered prompt. Fully
// deterministic, the stand-in for a live model in tests.
struct ScriptedFixture {
    std::vector<ScriptedRule> rules;
    std::optional<std::string> default_response;

    static ScriptedFixture load(const std::filesystem::path& path);
};

class ScriptedBackend final : public ChatBackend {
public:
    explicit ScriptedBackend(ScriptedFixture fixture) : fixture_(std::move(fixture)) {}

    const ScriptedFixture& fixture() const { return fixture_; }

protected:
    std::string do_complete(const std::vector<ChatMessage>& messages,
                            const CompletionParams& params) override;

private:
    ScriptedFixture fixture_;
};

// Request translation dialects for HTTP chat-completion providers.
enum class HttpDialect { OpenAi, Anthropic };

struct HttpBackendConfig {
    std::string base_url;  // e.g. "https://api.example.com/v1"
    std::string model;
    std::string api_key;
    HttpDialect dialect = HttpDialect::OpenAi;
    int timeout_seconds = 120;

    // Reads PERSONA_AGENT_API_BASE, PERSONA_AGENT_API_KEY, PERSONA_AGENT_MODEL.
    static HttpBackendConfig from_env();
};

class HttpBackend final : public ChatBackend {
public:
    explicit HttpBackend(HttpBackendConfig config);

protected:
    std::string do_complete(const std::vector<ChatMessage>& messages,
                            const CompletionParams& params) override;

private:
    std::string request_once(const std::vector<ChatMessage>& messages,
                             const CompletionParams& params);

    HttpBackendConfig config_;
};

} // namespace pagent::llm
