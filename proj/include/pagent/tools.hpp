#pragma once

#include "pagent/embedding.hpp"
#include "pagent/memory.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace pagent::tools {

inline constexpr const char* kWikipediaToolName = "wikipedia";
inline constexpr const char* kUserMemoryToolName = "user_memory";

struct ToolSpec {
    std::string name;
    std::string description;
    std::string input_hint;
};

struct ToolCall {
    std::string tool_name;
    std::string input;

    bool operator==(const ToolCall&) const = default;
};

enum class ToolSource { Knowledge, Memory };

// Tool failures are observations, not exceptions: ok=false with a
// human-readable description keeps the agent loop running.
struct ToolResult {
    std::string output;
    bool ok = false;
    ToolSource source = ToolSource::Knowledge;

    bool operator==(const ToolResult&) const = default;
};

class KnowledgeProvider {
public:
    virtual ~KnowledgeProvider() = default;
    virtual ToolResult lookup(const std::string& topic) const = 0;
};

// Local title -> summary map; the test and offline default.
class OfflineKnowledgeProvider final : public KnowledgeProvider {
public:
    OfflineKnowledgeProvider() = default;
    explicit OfflineKnowledgeProvider(std::map<std::string, std::string> articles);
    static OfflineKnowledgeProvider load(const std::filesystem::path& path);

    ToolResult lookup(const std::string& topic) const override;

private:
    std::map<std::string, std::string> articles_;
};

// Wikipedia REST page-summary endpoint.
class LiveKnowledgeProvider final : public KnowledgeProvider {
public:
    explicit LiveKnowledgeProvider(std::string base_url = "https://en.wikipedia.org",
                                   int timeout_seconds = 5);

    ToolResult lookup(const std::string& topic) const override;

private:
    std::string base_url_;
    int timeout_seconds_;
};

ToolResult knowledge_lookup(const std::string& topic, const KnowledgeProvider& provider);

// Everything a dispatched tool call may touch. `masked_record` hides one
// buffer record from retrieval (the alignment self-leak guard).
struct ToolContext {
    const memory::EpisodicBuffer* buffer = nullptr;
    const Encoder* encoder = nullptr;
    const KnowledgeProvider* knowledge = nullptr;
    std::size_t k_memory = 4;
    std::optional<std::size_t> masked_record;
};

ToolResult memory_rag(const std::string& query, const memory::EpisodicBuffer& buffer,
                      std::size_t k, const Encoder& encoder,
                      std::optional<std::size_t> masked_record = {});

using ToolRegistry = std::vector<ToolSpec>;

ToolSpec wikipedia_tool_spec();
ToolSpec user_memory_tool_spec();
ToolRegistry default_registry();

bool has_tool(const ToolRegistry& registry, const std::string& name);

// Routes the call to the named tool; never throws.
ToolResult dispatch(const ToolRegistry& registry, const ToolCall& call,
                    const ToolContext& context);

} // namespace pagent::tools
