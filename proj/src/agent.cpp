#include "pagent/agent.hpp"

#include "pagent/errors.hpp"
#include "pagent/prompts.hpp"

#include "json.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace pagent::agent {

using nlohmann::json;

std::size_t Trajectory::tool_call_count() const {
    return static_cast<std::size_t>(std::count_if(
        steps.begin(), steps.end(),
        [](const AgentStep& step) { return step.kind == StepKind::Action; }));
}

std::size_t Trajectory::tool_call_count(const std::string& tool_name) const {
    return static_cast<std::size_t>(
        std::count_if(steps.begin(), steps.end(), [&](const AgentStep& step) {
            return step.kind == StepKind::Action && step.call && step.call->tool_name == tool_name;
        }));
}

Persona init_persona(const UserId& user, const memory::SemanticProfile& profile) {
    if (profile.text.empty()) {
        throw FormatError("cannot initialize a persona from an empty profile");
    }
    Persona persona;
    persona.user = user;
    persona.text = prompts::substitute(prompts::kPersonaInitTemplate,
                                       "[Initial Semantic Memory]", profile.text);
    persona.version = 0;
    return persona;
}

std::string generic_system_prompt() {
    return prompts::substitute(prompts::kPersonaInitTemplate, "[Initial Semantic Memory]",
                               "(not available)");
}

namespace {

std::string trim(const std::string& text) {
    const auto begin = text.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) {
        return "";
    }
    const auto end = text.find_last_not_of(" \t\r\n");
    return text.substr(begin, end - begin + 1);
}

// Position and remainder of the first line starting with `marker`.
struct MarkerHit {
    std::size_t line_start = std::string::npos;
    std::string rest_of_line;
    std::size_t value_start = std::string::npos; // offset just past the marker
};

std::optional<MarkerHit> find_marker(const std::string& text, const std::string& marker) {
    std::size_t line_start = 0;
    while (line_start <= text.size()) {
        std::size_t line_end = text.find('\n', line_start);
        if (line_end == std::string::npos) {
            line_end = text.size();
        }
        std::string line = text.substr(line_start, line_end - line_start);
        const std::string stripped = trim(line);
        if (stripped.rfind(marker, 0) == 0) {
            MarkerHit hit;
            hit.line_start = line_start;
            hit.rest_of_line = trim(stripped.substr(marker.size()));
            hit.value_start = line_start + line.find(marker) + marker.size();
            return hit;
        }
        if (line_end == text.size()) {
            break;
        }
        line_start = line_end + 1;
    }
    return std::nullopt;
}

} // namespace

AgentStep parse_action(const std::string& llm_output) {
    const auto action = find_marker(llm_output, "Action:");
    const auto final_answer = find_marker(llm_output, "Final Answer:");

    if (action && (!final_answer || action->line_start < final_answer->line_start)) {
        AgentStep step;
        step.kind = StepKind::Action;
        tools::ToolCall call;
        call.tool_name = action->rest_of_line;
        if (const auto input = find_marker(llm_output, "Action Input:")) {
            if (input->line_start > action->line_start) {
                call.input = input->rest_of_line;
            }
        }
        step.call = std::move(call);
        return step;
    }
    if (final_answer) {
        AgentStep step;
        step.kind = StepKind::FinalAnswer;
        // The answer may wrap onto following lines; take everything after
        // the marker.
        step.text = trim(llm_output.substr(final_answer->value_start));
        return step;
    }

    AgentStep step;
    step.kind = StepKind::Thought;
    if (const auto thought = find_marker(llm_output, "Thought:")) {
        step.text = trim(llm_output.substr(thought->value_start));
    } else {
        step.text = trim(llm_output);
    }
    return step;
}

namespace {

constexpr const char* kProtocolReminder =
    "Reply using the required format: either a 'Thought:' line followed by 'Action:' and "
    "'Action Input:' lines, or 'Final Answer: <answer>'.";

constexpr const char* kToolRuleReminder = "You must use at least two tools before answering";

std::string render_task_message(const std::string& query, const tools::ToolRegistry& registry,
                                const RunConfig& config) {
    std::ostringstream out;
    if (!registry.empty()) {
        out << "You have access to the following tools:\n\n";
        for (const auto& spec : registry) {
            out << spec.name << ": " << spec.description << "\n\n";
        }
        out << "Use this format:\n"
            << "Thought: what you need to find out next\n"
            << "Action: the tool name, one of [";
        for (std::size_t i = 0; i < registry.size(); ++i) {
            out << (i > 0 ? ", " : "") << registry[i].name;
        }
        out << "]\n"
            << "Action Input: the input to the tool\n"
            << "Then wait for the Observation before continuing.\n"
            << "When you know the answer, reply with:\n"
            << "Final Answer: <answer>\n\n";
    }
    if (!config.task_instruction.empty()) {
        out << config.task_instruction << "\n\n";
    }
    out << "Question: " << query;
    return out.str();
}

} // namespace

EpisodeResult run_episode(const Persona& persona, const std::string& query,
                          const tools::ToolRegistry& registry,
                          const tools::ToolContext& context, llm::ChatBackend& backend,
                          const RunConfig& config) {
    if (config.max_steps < 1) {
        throw ConfigError("max_steps must be >= 1");
    }
    if (config.min_tool_calls > config.max_steps) {
        throw ConfigError("min_tool_calls (" + std::to_string(config.min_tool_calls) +
                          ") cannot exceed max_steps (" + std::to_string(config.max_steps) +
                          ")");
    }
    Trajectory trajectory;
    trajectory.query = query;
    trajectory.persona_version = persona.version;

    std::vector<llm::ChatMessage> messages;
    messages.push_back({llm::Role::System, persona.text});
    messages.push_back({llm::Role::User, render_task_message(query, registry, config)});

    const bool memory_required = tools::has_tool(registry, tools::kUserMemoryToolName);
    std::size_t tool_calls = 0;
    std::size_t memory_calls = 0;
    bool previous_turn_was_protocol_retry = false;
    bool tool_rule_reminder_sent = false;
    std::string last_thought;
    std::string final_answer;
    bool answered = false;

    auto tool_minimum_met = [&] {
        return tool_calls >= static_cast<std::size_t>(config.min_tool_calls) &&
               (!memory_required || memory_calls >= 1);
    };

    for (int turn = 0; turn < config.max_steps && !answered; ++turn) {
        const std::string output = backend.complete(messages, config.params);
        messages.push_back({llm::Role::Assistant, output});
        AgentStep step = parse_action(output);

        switch (step.kind) {
        case StepKind::Action: {
            previous_turn_was_protocol_retry = false;
            tools::ToolResult result = tools::dispatch(registry, *step.call, context);
            // Unknown-tool attempts produce observations but do not count
            // toward the tool minimum.
            if (tools::has_tool(registry, step.call->tool_name)) {
                ++tool_calls;
                if (step.call->tool_name == tools::kUserMemoryToolName) {
                    ++memory_calls;
                }
            }
            trajectory.steps.push_back(step);
            AgentStep observation;
            observation.kind = StepKind::Observation;
            observation.result = result;
            observation.text = result.output;
            trajectory.steps.push_back(observation);
            messages.push_back({llm::Role::User, "Observation: " + result.output});
            break;
        }
        case StepKind::FinalAnswer: {
            previous_turn_was_protocol_retry = false;
            if (!tool_minimum_met() && !tool_rule_reminder_sent) {
                // One enforcement re-prompt; the rejected answer stays in
                // the trajectory as a thought and becomes the fallback if
                // the budget runs out before a compliant answer arrives.
                tool_rule_reminder_sent = true;
                AgentStep rejected;
                rejected.kind = StepKind::Thought;
                rejected.text = step.text;
                last_thought = step.text;
                trajectory.steps.push_back(rejected);
                messages.push_back({llm::Role::User, kToolRuleReminder});
                break;
            }
            final_answer = step.text;
            answered = true;
            if (!tool_minimum_met()) {
                trajectory.tool_rule_violated = true;
            }
            break;
        }
        case StepKind::Thought: {
            if (previous_turn_was_protocol_retry) {
                throw ProtocolError("model ignored the action protocol twice; last output:\n" +
                                    output);
            }
            previous_turn_was_protocol_retry = true;
            last_thought = step.text;
            trajectory.steps.push_back(step);
            messages.push_back({llm::Role::User, kProtocolReminder});
            break;
        }
        case StepKind::Observation:
            break; // parse_action never produces observations
        }
    }

    if (!answered) {
        trajectory.forced = true;
        final_answer = last_thought;
    }
    AgentStep final_step;
    final_step.kind = StepKind::FinalAnswer;
    final_step.text = final_answer;
    trajectory.steps.push_back(final_step);

    return EpisodeResult{final_answer, std::move(trajectory)};
}

namespace {

json step_to_json(const AgentStep& step, const Trajectory& trajectory, bool is_last) {
    json line;
    switch (step.kind) {
    case StepKind::Thought:
        line["kind"] = "thought";
        line["text"] = step.text;
        break;
    case StepKind::Action:
        line["kind"] = "action";
        line["tool"] = step.call ? step.call->tool_name : "";
        line["input"] = step.call ? step.call->input : "";
        break;
    case StepKind::Observation:
        line["kind"] = "observation";
        line["text"] = step.text;
        line["ok"] = step.result ? step.result->ok : false;
        line["source"] = step.result && step.result->source == tools::ToolSource::Memory
                             ? "memory"
                             : "knowledge";
        break;
    case StepKind::FinalAnswer:
        line["kind"] = "final_answer";
        line["text"] = step.text;
        if (is_last) {
            line["forced"] = trajectory.forced;
            line["tool_rule_violated"] = trajectory.tool_rule_violated;
        }
        break;
    }
    return line;
}

} // namespace

void save_trajectory(const Trajectory& trajectory, const std::filesystem::path& path) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write trajectory: " + path.string());
    }
    for (std::size_t i = 0; i < trajectory.steps.size(); ++i) {
        out << step_to_json(trajectory.steps[i], trajectory,
                            i + 1 == trajectory.steps.size())
                   .dump()
            << "\n";
    }
}

Trajectory load_trajectory(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open trajectory: " + path.string());
    }
    Trajectory trajectory;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        json doc;
        try {
            doc = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        AgentStep step;
        const std::string kind = doc.value("kind", "");
        if (kind == "thought") {
            step.kind = StepKind::Thought;
            step.text = doc.value("text", "");
        } else if (kind == "action") {
            step.kind = StepKind::Action;
            step.call = tools::ToolCall{doc.value("tool", ""), doc.value("input", "")};
        } else if (kind == "observation") {
            step.kind = StepKind::Observation;
            step.text = doc.value("text", "");
            tools::ToolResult result;
            result.output = step.text;
            result.ok = doc.value("ok", false);
            result.source = doc.value("source", "knowledge") == "memory"
                                ? tools::ToolSource::Memory
                                : tools::ToolSource::Knowledge;
            step.result = result;
        } else if (kind == "final_answer") {
            step.kind = StepKind::FinalAnswer;
            step.text = doc.value("text", "");
            trajectory.forced = doc.value("forced", trajectory.forced);
            trajectory.tool_rule_violated =
                doc.value("tool_rule_violated", trajectory.tool_rule_violated);
        } else {
            throw FormatError(path.string() + ":" + std::to_string(line_no) +
                              ": unknown step kind '" + kind + "'");
        }
        trajectory.steps.push_back(std::move(step));
    }
    return trajectory;
}

void save_persona(const Persona& persona, const std::filesystem::path& store_root) {
    memory::UserStore store(store_root);
    const auto dir = store.user_dir(persona.user);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
    }
    json doc;
    doc["format_version"] = 1;
    doc["user_id"] = persona.user.value;
    doc["version"] = persona.version;
    doc["text"] = persona.text;
    doc["history"] = persona.history;
    std::ofstream out(dir / "persona.json", std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + (dir / "persona.json").string());
    }
    out << doc.dump(2) << "\n";
}

std::optional<Persona> load_persona(const UserId& user,
                                    const std::filesystem::path& store_root) {
    memory::UserStore store(store_root);
    const auto path = store.user_dir(user) / "persona.json";
    std::ifstream in(path);
    if (!in) {
        return std::nullopt;
    }
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    try {
        Persona persona;
        persona.user = user;
        persona.version = doc.at("version").get<int>();
        persona.text = doc.at("text").get<std::string>();
        persona.history = doc.at("history").get<std::vector<std::string>>();
        return persona;
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

} // namespace pagent::agent
