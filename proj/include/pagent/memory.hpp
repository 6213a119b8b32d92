#pragma once

#include "pagent/core.hpp"
#include "pagent/embedding.hpp"
#include "pagent/llm.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pagent::memory {

// Per-user raw history. Records stay sorted by (timestamp, insertion
// order) and the embeddings list is index-parallel to the records, all
// computed under the fingerprinted encoder.
struct EpisodicBuffer {
    UserId user;
    std::vector<InteractionRecord> records;
    std::vector<Vector> embeddings;
    std::string encoder_fingerprint;

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }

    bool operator==(const EpisodicBuffer&) const = default;
};

// LLM-generated abstract of a user's stable traits.
struct SemanticProfile {
    UserId user;
    std::string text;
    std::size_t source_count = 0;
    std::int64_t created_at = 0;
    TaskKind task = TaskKind::MovieTagging;

    bool operator==(const SemanticProfile&) const = default;
};

// Template for the task-based summarization call. Must contain both the
// [Task] and [History] placeholders.
struct SummarizationPrompt {
    std::string template_text;

    explicit SummarizationPrompt(std::string text);
    static SummarizationPrompt default_prompt();
};

EpisodicBuffer make_buffer(UserId user, const Encoder& encoder);

// Canonical rendering of a record for embedding purposes; the whole
// interaction is embedded, not just the query.
std::string record_embed_text(const InteractionRecord& record);

// Rendering used when inlining records into prompts.
std::string render_record(const InteractionRecord& record);
std::string render_records(const std::vector<InteractionRecord>& records);

// Inserts preserving timestamp order (ties keep insertion order) and
// appends the record's embedding at the matching position.
void append_interaction(EpisodicBuffer& buffer, InteractionRecord record,
                        const Encoder& encoder);

// Indices of the top-k records most similar to `query`, excluding
// `exclude_index` from consideration when set.
std::vector<std::size_t> retrieve_indices(const EpisodicBuffer& buffer,
                                          const std::string& query, std::size_t k,
                                          const Encoder& encoder,
                                          std::optional<std::size_t> exclude_index = {});

std::vector<InteractionRecord> retrieve(const EpisodicBuffer& buffer,
                                        const std::string& query, std::size_t k,
                                        const Encoder& encoder,
                                        std::optional<std::size_t> exclude_index = {});

struct SummarizationOptions {
    std::size_t char_budget = 24000; // rendered-history budget before truncation
    std::size_t max_records_over_budget = 50;
    llm::CompletionParams params;
};

// Renders the buffer into the template (latest records only when over the
// character budget), makes exactly one completion call, and wraps the
// reply as the profile.
SemanticProfile summarize_profile(const EpisodicBuffer& buffer, TaskKind task,
                                  const SummarizationPrompt& prompt,
                                  llm::ChatBackend& backend,
                                  const SummarizationOptions& options = {});

// On-disk layout: <store_root>/<user_id>/episodic.jsonl holds one record
// per line; <store_root>/<user_id>/profile.json holds the profile plus the
// buffer's embeddings and encoder fingerprint.
class UserStore {
public:
    explicit UserStore(std::filesystem::path store_root);

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path user_dir(const UserId& user) const;

    void save_buffer(const EpisodicBuffer& buffer) const;
    EpisodicBuffer load_buffer(const UserId& user) const;

    void save_profile(const SemanticProfile& profile) const;
    std::optional<SemanticProfile> load_profile(const UserId& user) const;

    std::vector<UserId> list_users() const;

private:
    std::filesystem::path root_;
};

} // namespace pagent::memory
