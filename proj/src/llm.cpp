#include "pagent/llm.hpp"

#include "pagent/errors.hpp"

#include "httplib.h"
#include "json.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

namespace pagent::llm {

std::string to_string(Role role) {
    switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
    case Role::Tool: return "tool";
    }
    return "user";
}

std::string render_messages(const std::vector<ChatMessage>& messages) {
    std::ostringstream out;
    for (const auto& message : messages) {
        out << to_string(message.role) << ": " << message.content << "\n";
    }
    return out.str();
}

std::string ChatBackend::complete(const std::vector<ChatMessage>& messages,
                                  const CompletionParams& params) {
    if (messages.empty()) {
        throw BackendError("complete() requires at least one message");
    }
    std::string response = do_complete(messages, params);
    {
        std::lock_guard<std::mutex> lock(mutex_);
        log_.push_back(CallRecord{messages, response});
    }
    return response;
}

std::vector<CallRecord> ChatBackend::call_log() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return log_;
}

std::size_t ChatBackend::call_count() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return log_.size();
}

ScriptedFixture ScriptedFixture::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open scripted fixture: " + path.string());
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("scripted fixture " + path.string() + ": " + e.what());
    }

    ScriptedFixture fixture;
    for (const auto& rule : doc.value("rules", nlohmann::json::array())) {
        ScriptedRule parsed;
        parsed.match = rule.at("match").get<std::string>();
        parsed.is_regex = rule.value("is_regex", false);
        parsed.response = rule.at("response").get<std::string>();
        if (parsed.is_regex) {
            try {
                std::regex probe(parsed.match);
            } catch (const std::regex_error& e) {
                throw FormatError("scripted fixture " + path.string() + ": bad regex '" +
                                  parsed.match + "': " + e.what());
            }
        }
        fixture.rules.push_back(std::move(parsed));
    }
    if (doc.contains("default") && !doc["default"].is_null()) {
        fixture.default_response = doc["default"].get<std::string>();
    }
    return fixture;
}

std::string ScriptedBackend::do_complete(const std::vector<ChatMessage>& messages,
                                         const CompletionParams&) {
    const std::string prompt = render_messages(messages);
    for (const auto& rule : fixture_.rules) {
        if (rule.is_regex) {
            if (std::regex_search(prompt, std::regex(rule.match))) {
                return rule.response;
            }
        } else if (prompt.find(rule.match) != std::string::npos) {
            return rule.response;
        }
    }
    if (fixture_.default_response) {
        return *fixture_.default_response;
    }
    throw NoMatchingRule("no scripted rule matches prompt:\n" + prompt);
}

HttpBackendConfig HttpBackendConfig::from_env() {
    HttpBackendConfig config;
    if (const char* base = std::getenv("PERSONA_AGENT_API_BASE")) {
        config.base_url = base;
    }
    if (const char* key = std::getenv("PERSONA_AGENT_API_KEY")) {
        config.api_key = key;
    }
    if (const char* model = std::getenv("PERSONA_AGENT_MODEL")) {
        config.model = model;
    }
    return config;
}

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
    if (config_.base_url.empty()) {
        throw ConfigError("http backend requires a base URL (PERSONA_AGENT_API_BASE)");
    }
}

namespace {

nlohmann::json openai_request(const HttpBackendConfig& config,
                              const std::vector<ChatMessage>& messages,
                              const CompletionParams& params) {
    nlohmann::json body;
    body["model"] = config.model;
    body["temperature"] = params.temperature;
    body["max_tokens"] = params.max_tokens;
    auto& list = body["messages"] = nlohmann::json::array();
    for (const auto& message : messages) {
        list.push_back({{"role", to_string(message.role)}, {"content", message.content}});
    }
    if (!params.stop_sequences.empty()) {
        body["stop"] = params.stop_sequences;
    }
    return body;
}

nlohmann::json anthropic_request(const HttpBackendConfig& config,
                                 const std::vector<ChatMessage>& messages,
                                 const CompletionParams& params) {
    nlohmann::json body;
    body["model"] = config.model;
    body["temperature"] = params.temperature;
    body["max_tokens"] = params.max_tokens;
    auto& list = body["messages"] = nlohmann::json::array();
    for (const auto& message : messages) {
        if (message.role == Role::System) {
            body["system"] = message.content;
        } else {
            list.push_back({{"role", message.role == Role::Assistant ? "assistant" : "user"},
                            {"content", message.content}});
        }
    }
    if (!params.stop_sequences.empty()) {
        body["stop_sequences"] = params.stop_sequences;
    }
    return body;
}

std::string extract_text(HttpDialect dialect, const std::string& body) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(std::string("backend reply is not JSON: ") + e.what());
    }
    try {
        if (dialect == HttpDialect::OpenAi) {
            return doc.at("choices").at(0).at("message").at("content").get<std::string>();
        }
        return doc.at("content").at(0).at("text").get<std::string>();
    } catch (const nlohmann::json::exception&) {
        throw BackendError("backend reply missing completion text: " + body);
    }
}

} // namespace

std::string HttpBackend::request_once(const std::vector<ChatMessage>& messages,
                                      const CompletionParams& params) {
    httplib::Client client(config_.base_url);
    client.set_connection_timeout(config_.timeout_seconds, 0);
    client.set_read_timeout(config_.timeout_seconds, 0);

    httplib::Headers headers;
    std::string path;
    nlohmann::json body;
    if (config_.dialect == HttpDialect::OpenAi) {
        path = "/chat/completions";
        if (!config_.api_key.empty()) {
            headers.emplace("Authorization", "Bearer " + config_.api_key);
        }
        body = openai_request(config_, messages, params);
    } else {
        path = "/v1/messages";
        if (!config_.api_key.empty()) {
            headers.emplace("x-api-key", config_.api_key);
        }
        headers.emplace("anthropic-version", "2023-06-01");
        body = anthropic_request(config_, messages, params);
    }

    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res) {
        throw TransportError("chat backend unreachable: " + httplib::to_string(res.error()));
    }
    if (res->status == 429) {
        throw RateLimited("chat backend rate limited: " + res->body);
    }
    if (res->status < 200 || res->status >= 300) {
        throw BackendError("chat backend returned HTTP " + std::to_string(res->status) +
                           ": " + res->body);
    }
    return extract_text(config_.dialect, res->body);
}

std::string HttpBackend::do_complete(const std::vector<ChatMessage>& messages,
                                     const CompletionParams& params) {
    // Exactly one retry with a 1s backoff, and only for transport-level
    // failures; HTTP-level errors are not retried except 429.
    try {
        return request_once(messages, params);
    } catch (const TransportError&) {
        std::this_thread::sleep_for(std::chrono::seconds(1));
        return request_once(messages, params);
    } catch (const RateLimited&) {
        std::this_thread::sleep_for(std::chrono::seconds(1));
        return request_once(messages, params);
    }
}

} // namespace pagent::llm
