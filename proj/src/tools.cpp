#include "pagent/tools.hpp"

#include "pagent/errors.hpp"
#include "pagent/prompts.hpp"

#include "httplib.h"
#include "json.hpp"

#include <algorithm>
#include <fstream>

namespace pagent::tools {

using nlohmann::json;

OfflineKnowledgeProvider::OfflineKnowledgeProvider(std::map<std::string, std::string> articles)
    : articles_(std::move(articles)) {}

OfflineKnowledgeProvider OfflineKnowledgeProvider::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open knowledge map: " + path.string());
    }
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw FormatError("knowledge map " + path.string() + ": " + e.what());
    }
    return OfflineKnowledgeProvider(doc.get<std::map<std::string, std::string>>());
}

ToolResult OfflineKnowledgeProvider::lookup(const std::string& topic) const {
    auto it = articles_.find(topic);
    if (it == articles_.end()) {
        return ToolResult{"no article found for '" + topic + "'", false,
                          ToolSource::Knowledge};
    }
    return ToolResult{it->second, true, ToolSource::Knowledge};
}

LiveKnowledgeProvider::LiveKnowledgeProvider(std::string base_url, int timeout_seconds)
    : base_url_(std::move(base_url)), timeout_seconds_(timeout_seconds) {}

ToolResult LiveKnowledgeProvider::lookup(const std::string& topic) const {
    httplib::Client client(base_url_);
    client.set_connection_timeout(timeout_seconds_, 0);
    client.set_read_timeout(timeout_seconds_, 0);
    client.set_follow_location(true);

    std::string title = topic;
    std::replace(title.begin(), title.end(), ' ', '_');
    auto res = client.Get("/api/rest_v1/page/summary/" + httplib::detail::encode_url(title));
    if (!res) {
        return ToolResult{"knowledge lookup failed: " + httplib::to_string(res.error()), false,
                          ToolSource::Knowledge};
    }
    if (res->status == 404) {
        return ToolResult{"no article found for '" + topic + "'", false,
                          ToolSource::Knowledge};
    }
    if (res->status != 200) {
        return ToolResult{"knowledge lookup failed: HTTP " + std::to_string(res->status),
                          false, ToolSource::Knowledge};
    }
    try {
        json doc = json::parse(res->body);
        if (doc.contains("extract") && doc["extract"].is_string()) {
            return ToolResult{doc["extract"].get<std::string>(), true, ToolSource::Knowledge};
        }
    } catch (const json::exception&) {
        // fall through to the generic failure below
    }
    return ToolResult{"no article found for '" + topic + "'", false, ToolSource::Knowledge};
}

ToolResult knowledge_lookup(const std::string& topic, const KnowledgeProvider& provider) {
    if (topic.empty()) {
        return ToolResult{"no topic given", false, ToolSource::Knowledge};
    }
    return provider.lookup(topic);
}

ToolResult memory_rag(const std::string& query, const memory::EpisodicBuffer& buffer,
                      std::size_t k, const Encoder& encoder,
                      std::optional<std::size_t> masked_record) {
    if (buffer.empty()) {
        return ToolResult{"no user history available", false, ToolSource::Memory};
    }
    std::vector<InteractionRecord> records;
    try {
        records = memory::retrieve(buffer, query, std::max<std::size_t>(k, 1), encoder,
                                   masked_record);
    } catch (const Error& e) {
        return ToolResult{std::string("memory retrieval failed: ") + e.what(), false,
                          ToolSource::Memory};
    }
    if (records.empty()) {
        return ToolResult{"no user history available", false, ToolSource::Memory};
    }
    return ToolResult{memory::render_records(records), true, ToolSource::Memory};
}

ToolSpec wikipedia_tool_spec() {
    return ToolSpec{kWikipediaToolName, prompts::kWikipediaToolDescription,
                    "a clear, specific topic name"};
}

ToolSpec user_memory_tool_spec() {
    return ToolSpec{kUserMemoryToolName, prompts::kUserMemoryToolDescription,
                    "a specific search query about the user's history"};
}

ToolRegistry default_registry() {
    return {wikipedia_tool_spec(), user_memory_tool_spec()};
}

bool has_tool(const ToolRegistry& registry, const std::string& name) {
    return std::any_of(registry.begin(), registry.end(),
                       [&](const ToolSpec& spec) { return spec.name == name; });
}

ToolResult dispatch(const ToolRegistry& registry, const ToolCall& call,
                    const ToolContext& context) {
    if (!has_tool(registry, call.tool_name)) {
        std::string available;
        for (std::size_t i = 0; i < registry.size(); ++i) {
            if (i > 0) {
                available += ", ";
            }
            available += registry[i].name;
        }
        return ToolResult{"unknown tool " + call.tool_name + "; available: " + available,
                          false, ToolSource::Knowledge};
    }

    if (call.tool_name == kWikipediaToolName) {
        if (!context.knowledge) {
            return ToolResult{"knowledge provider not configured", false,
                              ToolSource::Knowledge};
        }
        return knowledge_lookup(call.input, *context.knowledge);
    }
    if (call.tool_name == kUserMemoryToolName) {
        if (!context.buffer || !context.encoder) {
            return ToolResult{"no user history available", false, ToolSource::Memory};
        }
        return memory_rag(call.input, *context.buffer, context.k_memory, *context.encoder,
                          context.masked_record);
    }
    return ToolResult{"tool " + call.tool_name + " is registered but has no handler", false,
                      ToolSource::Knowledge};
}

} // namespace pagent::tools
