#pragma once

#include "pagent/core.hpp"
#include "pagent/llm.hpp"
#include "pagent/memory.hpp"
#include "pagent/tools.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pagent::agent {

// The user-specific system prompt conditioning every agent action.
// version equals the number of update calls applied; history holds every
// prior text so any earlier version can be recovered.
struct Persona {
    UserId user;
    std::string text;
    int version = 0;
    std::vector<std::string> history;

    bool operator==(const Persona&) const = default;
};

enum class StepKind { Thought, Action, Observation, FinalAnswer };

struct AgentStep {
    StepKind kind = StepKind::Thought;
    std::string text;                       // thought / final answer text
    std::optional<tools::ToolCall> call;    // set for Action
    std::optional<tools::ToolResult> result; // set for Observation

    bool operator==(const AgentStep&) const = default;
};

// One episode's interleaved context. `forced` marks a fallback answer
// emitted when the step budget ran out; `tool_rule_violated` marks an
// answer accepted even though the tool minimum was not met.
struct Trajectory {
    std::vector<AgentStep> steps;
    std::string query;
    int persona_version = 0;
    bool forced = false;
    bool tool_rule_violated = false;

    std::size_t tool_call_count() const;
    std::size_t tool_call_count(const std::string& tool_name) const;

    bool operator==(const Trajectory&) const = default;
};

struct RunConfig {
    int max_steps = 8;
    int min_tool_calls = 2;
    std::size_t k_memory = 4;
    std::string task_instruction; // prepended to the question when non-empty
    llm::CompletionParams params;
};

// Version-0 persona: the initialization template with the semantic profile
// substituted in.
Persona init_persona(const UserId& user, const memory::SemanticProfile& profile);

// Non-personalized system prompt used by generic agent baselines.
std::string generic_system_prompt();

// Parses one model turn of the line-oriented protocol. Output with an
// `Action:`/`Action Input:` pair becomes an Action, `Final Answer:`
// becomes a FinalAnswer, anything else is a Thought (the loop handles the
// protocol retry).
AgentStep parse_action(const std::string& llm_output);

struct EpisodeResult {
    std::string answer;
    Trajectory trajectory;
};

// Persona-conditioned think/act/observe loop. The system message of every
// backend call is exactly persona.text; tool specs and the protocol are
// described in the first user message.
EpisodeResult run_episode(const Persona& persona, const std::string& query,
                          const tools::ToolRegistry& registry,
                          const tools::ToolContext& context, llm::ChatBackend& backend,
                          const RunConfig& config);

// Trajectory log: JSON-lines, one step per line.
void save_trajectory(const Trajectory& trajectory, const std::filesystem::path& path);
Trajectory load_trajectory(const std::filesystem::path& path);

// Personas persist as <store_root>/<user_id>/persona.json with their
// full version history.
void save_persona(const Persona& persona, const std::filesystem::path& store_root);
std::optional<Persona> load_persona(const UserId& user,
                                    const std::filesystem::path& store_root);

} // namespace pagent::agent
