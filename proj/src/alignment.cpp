#include "pagent/alignment.hpp"

#include "pagent/errors.hpp"
#include "pagent/prompts.hpp"

#include "json.hpp"

#include <algorithm>
#include <fstream>

namespace pagent::alignment {

using nlohmann::json;

namespace {

class AuditLog {
public:
    explicit AuditLog(const std::filesystem::path& path) {
        if (path.empty()) {
            return;
        }
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        out_.open(path, std::ios::app);
        if (!out_) {
            throw IoError("cannot open alignment audit log: " + path.string());
        }
    }

    void write(json entry) {
        if (out_.is_open()) {
            out_ << entry.dump() << "\n";
            out_.flush();
        }
    }

private:
    std::ofstream out_;
};

json trajectory_to_json(const agent::Trajectory& trajectory) {
    json steps = json::array();
    for (const auto& step : trajectory.steps) {
        json line;
        switch (step.kind) {
        case agent::StepKind::Thought:
            line = {{"kind", "thought"}, {"text", step.text}};
            break;
        case agent::StepKind::Action:
            line = {{"kind", "action"},
                    {"tool", step.call ? step.call->tool_name : ""},
                    {"input", step.call ? step.call->input : ""}};
            break;
        case agent::StepKind::Observation:
            line = {{"kind", "observation"},
                    {"text", step.text},
                    {"ok", step.result ? step.result->ok : false}};
            break;
        case agent::StepKind::FinalAnswer:
            line = {{"kind", "final_answer"}, {"text", step.text}};
            break;
        }
        steps.push_back(std::move(line));
    }
    return steps;
}

std::string render_critic_prompt(const std::string& query, const std::string& agent_response,
                                 const std::string& ground_truth) {
    std::string rendered = prompts::substitute(prompts::kCriticTemplate, "[Question]", query);
    rendered = prompts::substitute(rendered, "[Ground Truth]", ground_truth);
    rendered = prompts::substitute(rendered, "[Response]", agent_response);
    return rendered;
}

std::string render_update_prompt(const std::string& persona_text,
                                 const std::vector<TextualGradient>& gradients) {
    std::string aggregated;
    for (std::size_t i = 0; i < gradients.size(); ++i) {
        if (i > 0) {
            aggregated += "\n---\n";
        }
        aggregated += gradients[i].feedback;
    }
    std::string rendered =
        prompts::substitute(prompts::kUpdateTemplate, "[Current Persona]", persona_text);
    rendered = prompts::substitute(rendered, "[Aggregated Feedback]", aggregated);
    return rendered;
}

} // namespace

std::vector<BatchItem> build_batch(const memory::EpisodicBuffer& buffer, std::size_t n) {
    if (buffer.empty()) {
        throw EmptyBuffer("cannot build an alignment batch from an empty buffer");
    }
    // Records are kept sorted by timestamp, so the latest n form the tail.
    const std::size_t count = std::min(n, buffer.size());
    std::vector<BatchItem> batch;
    batch.reserve(count);
    for (std::size_t i = buffer.size() - count; i < buffer.size(); ++i) {
        BatchItem item;
        item.record_index = i;
        item.query = buffer.records[i].query;
        item.ground_truth = buffer.records[i].ground_truth;
        batch.push_back(std::move(item));
    }
    return batch;
}

SimulationResult simulate_responses(const std::vector<BatchItem>& batch,
                                    const agent::Persona& persona,
                                    const AlignmentContext& context,
                                    bool allow_self_retrieval) {
    if (!context.responder) {
        throw ConfigError("alignment context has no responder");
    }
    SimulationResult result;
    result.batch = batch;
    for (auto& item : result.batch) {
        std::optional<std::size_t> mask;
        if (!allow_self_retrieval) {
            mask = item.record_index;
        }
        agent::EpisodeResult episode = context.responder(persona, item.query, mask);
        item.agent_response = episode.answer;
        result.trajectories.push_back(std::move(episode.trajectory));
    }
    return result;
}

TextualGradient compute_gradient(const std::string& query, const std::string& agent_response,
                                 const std::string& ground_truth, llm::ChatBackend& backend,
                                 const llm::CompletionParams& params) {
    if (query.empty() || agent_response.empty() || ground_truth.empty()) {
        throw FormatError("compute_gradient requires non-empty query, response, and ground truth");
    }
    const std::string prompt = render_critic_prompt(query, agent_response, ground_truth);
    const std::string reply = backend.complete({{llm::Role::User, prompt}}, params);
    if (reply.empty()) {
        throw EmptyCompletion("critic returned empty feedback");
    }
    return TextualGradient{reply, 0};
}

agent::Persona update_persona(const agent::Persona& persona,
                              const std::vector<TextualGradient>& gradients,
                              llm::ChatBackend& backend, const llm::CompletionParams& params) {
    if (gradients.empty()) {
        throw FormatError("update_persona requires at least one gradient");
    }
    const std::string prompt = render_update_prompt(persona.text, gradients);
    const std::string reply = backend.complete({{llm::Role::User, prompt}}, params);
    if (reply.empty()) {
        throw EmptyCompletion("persona update returned empty text");
    }
    agent::Persona updated = persona;
    updated.history.push_back(persona.text);
    updated.text = reply;
    updated.version = persona.version + 1;
    return updated;
}

AlignResult align(const memory::EpisodicBuffer& buffer, const agent::Persona& init,
                  const AlignmentConfig& config, const AlignmentContext& context) {
    if (config.iterations_e < 1) {
        throw ConfigError("alignment iterations must be >= 1; disable alignment explicitly "
                          "instead of passing 0");
    }
    if (config.batch_size_n < 1) {
        throw ConfigError("alignment batch size must be >= 1");
    }
    if (!context.backend) {
        throw ConfigError("alignment context has no backend");
    }
    if (buffer.empty()) {
        throw EmptyBuffer("cannot align on an empty buffer");
    }

    AuditLog audit(context.audit_log);
    AlignResult result;
    result.persona = init;

    for (int iteration = 0; iteration < config.iterations_e; ++iteration) {
        try {
            const auto batch =
                build_batch(buffer, static_cast<std::size_t>(config.batch_size_n));
            SimulationResult simulated = simulate_responses(
                batch, result.persona, context, config.allow_self_retrieval);
            for (std::size_t j = 0; j < simulated.batch.size(); ++j) {
                audit.write({{"phase", "simulate"},
                             {"iteration", iteration},
                             {"item", j},
                             {"query", simulated.batch[j].query},
                             {"ground_truth", simulated.batch[j].ground_truth},
                             {"response", simulated.batch[j].agent_response},
                             {"trajectory", trajectory_to_json(simulated.trajectories[j])}});
            }

            std::vector<TextualGradient> gradients;
            gradients.reserve(simulated.batch.size());
            for (std::size_t j = 0; j < simulated.batch.size(); ++j) {
                const auto& item = simulated.batch[j];
                TextualGradient gradient = compute_gradient(
                    item.query, item.agent_response, item.ground_truth, *context.backend,
                    context.params);
                gradient.item_index = j;
                audit.write({{"phase", "gradient"},
                             {"iteration", iteration},
                             {"item", j},
                             {"prompt", render_critic_prompt(item.query, item.agent_response,
                                                             item.ground_truth)},
                             {"feedback", gradient.feedback}});
                gradients.push_back(std::move(gradient));
            }

            const std::string update_prompt =
                render_update_prompt(result.persona.text, gradients);
            result.persona =
                update_persona(result.persona, gradients, *context.backend, context.params);
            audit.write({{"phase", "update"},
                         {"iteration", iteration},
                         {"prompt", update_prompt},
                         {"version", result.persona.version},
                         {"text", result.persona.text}});
            result.completed_iterations = iteration + 1;
        } catch (const Error& e) {
            result.warning = "alignment iteration " + std::to_string(iteration + 1) +
                             " aborted: " + e.what();
            audit.write({{"phase", "abort"}, {"iteration", iteration}, {"error", e.what()}});
            break;
        }
    }
    return result;
}

} // namespace pagent::alignment
