#pragma once

#include "pagent/agent.hpp"
#include "pagent/llm.hpp"
#include "pagent/memory.hpp"
#include "pagent/tools.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace pagent::alignment {

struct AlignmentConfig {
    int batch_size_n = 3;
    int iterations_e = 1;
    bool allow_self_retrieval = false; // lifts the simulation self-leak mask
};

struct BatchItem {
    std::size_t record_index = 0; // position in the episodic buffer
    std::string query;
    std::string ground_truth;
    std::string agent_response;
};

using AlignmentBatch = std::vector<BatchItem>;

struct TextualGradient {
    std::string feedback;
    std::size_t item_index = 0;
};

// How a simulated response is produced for one batch query. The default
// responder runs the full episode loop; ablations substitute a single
// direct completion here.
using Responder = std::function<agent::EpisodeResult(
    const agent::Persona& persona, const std::string& query,
    std::optional<std::size_t> masked_record)>;

struct AlignmentContext {
    llm::ChatBackend* backend = nullptr;
    Responder responder; // required
    llm::CompletionParams params;
    std::filesystem::path audit_log; // align.log.jsonl; empty disables logging
};

// The min(n, buffer size) latest records by timestamp, chronological order.
std::vector<BatchItem> build_batch(const memory::EpisodicBuffer& buffer, std::size_t n);

// Runs the responder per batch item under the current persona, masking
// each item's own record from retrieval unless self-retrieval is allowed.
// Returns the filled batch and the per-item trajectories.
struct SimulationResult {
    AlignmentBatch batch;
    std::vector<agent::Trajectory> trajectories;
};
SimulationResult simulate_responses(const std::vector<BatchItem>& batch,
                                    const agent::Persona& persona,
                                    const AlignmentContext& context,
                                    bool allow_self_retrieval = false);

// One critic call for one simulated interaction.
TextualGradient compute_gradient(const std::string& query, const std::string& agent_response,
                                 const std::string& ground_truth, llm::ChatBackend& backend,
                                 const llm::CompletionParams& params = {});

// One update call rewriting the persona from the concatenated feedback.
agent::Persona update_persona(const agent::Persona& persona,
                              const std::vector<TextualGradient>& gradients,
                              llm::ChatBackend& backend,
                              const llm::CompletionParams& params = {});

struct AlignResult {
    agent::Persona persona;
    int completed_iterations = 0;
    std::optional<std::string> warning; // set when an iteration aborted mid-way
};

// Per iteration: build batch, simulate, n critic calls, one update call.
// The updated persona feeds the next iteration. On a mid-iteration failure
// the last fully-updated persona is returned with a warning.
AlignResult align(const memory::EpisodicBuffer& buffer, const agent::Persona& init,
                  const AlignmentConfig& config, const AlignmentContext& context);

} // namespace pagent::alignment
