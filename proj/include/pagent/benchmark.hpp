#pragma once

#include "pagent/agent.hpp"
#include "pagent/core.hpp"
#include "pagent/embedding.hpp"
#include "pagent/llm.hpp"
#include "pagent/tools.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pagent::bench {

// Task definition file: {"task": "...", "labels": [...]}. Rating tasks
// may omit labels and default to "1".."5".
struct TaskDef {
    TaskKind task = TaskKind::MovieTagging;
    std::vector<std::string> labels;

    static TaskDef load(const std::filesystem::path& path);
};

// One user's chronologically split history: profile records personalize,
// test records are held out for evaluation.
struct UserDataset {
    UserId user;
    TaskKind task = TaskKind::MovieTagging;
    std::vector<InteractionRecord> profile_records;
    std::vector<InteractionRecord> test_records;
    std::vector<std::string> label_set;

    std::size_t total_records() const {
        return profile_records.size() + test_records.size();
    }
};

enum class MethodKind {
    DirectPrompt,
    Icl,
    Rag,
    Pag,
    ReactAgent,
    MemoryBankAgent,
    PersonaAgentMethod,
};

struct AblationFlags {
    bool alignment = true;
    bool persona = true;
    bool memory = true;
    bool action = true;

    bool operator==(const AblationFlags&) const = default;
};

struct MethodSpec {
    MethodKind kind = MethodKind::DirectPrompt;
    int k = 4; // retrieved records (RAG/PAG) or demonstrations (ICL)
    AblationFlags flags;

    std::string id() const;
    static MethodSpec parse(const std::string& text); // throws ConfigError
};

struct MetricReport {
    TaskKind task = TaskKind::MovieTagging;
    std::optional<double> accuracy;
    std::optional<double> f1;
    std::optional<double> mae;
    std::optional<double> rmse;
    std::size_t n_examples = 0;
    std::size_t n_parse_failures = 0;
};

// Input schema: JSON-lines, one user per line:
// {"user_id", "records": [{"query","ground_truth","timestamp"}], "split_index"}.
// Records missing a timestamp get a synthetic one equal to their index so
// chronological order is preserved.
std::vector<UserDataset> load_dataset(const std::filesystem::path& path, const TaskDef& def);

// The `count` users with the largest total record counts; ties go to the
// lexicographically smaller UserId.
std::vector<UserDataset> select_top_users(std::vector<UserDataset> datasets,
                                          std::size_t count = 100);

struct RunParams {
    int alignment_n = 3;
    int alignment_iters = 1;
    std::size_t k_memory = 4;
    int max_steps = 8;
    int min_tool_calls = 2;
    double temperature = 0.1;
    int max_tokens = 1024;
    std::uint64_t seed = 17;
    std::size_t membank_chunk = 20; // records per memory-note refresh
    bool allow_self_retrieval = false;
};

struct BenchContext {
    llm::ChatBackend* backend = nullptr;
    const Encoder* encoder = nullptr;
    const tools::KnowledgeProvider* knowledge = nullptr;
    const std::vector<UserDataset>* all_users = nullptr; // ICL demonstration pool
    RunParams params;
    std::filesystem::path run_dir;    // trajectory/alignment logs; empty disables
    std::filesystem::path store_root; // persona/profile persistence; empty disables
};

// Where in the backend call log a test record's own evaluation began;
// earlier calls must not contain the record.
struct EvalMarker {
    UserId user;
    std::size_t query_index = 0;
    std::string query;
    std::string ground_truth;
    std::size_t call_index_at_start = 0;
};

struct MethodRunResult {
    std::vector<Prediction> predictions; // one per test record
    std::optional<agent::Persona> final_persona;
    std::vector<EvalMarker> markers;
    std::vector<std::string> warnings; // e.g. aborted alignment iterations
};

// Runs one method over one user's dataset. Per-query failures become
// parse-failure predictions; the run continues.
MethodRunResult run_method(const MethodSpec& spec, const UserDataset& dataset,
                           const BenchContext& context);

// label_set may be empty, in which case it is derived from the ground
// truths (classification only).
MetricReport compute_metrics(const std::vector<Prediction>& predictions,
                             const std::vector<std::string>& ground_truths, TaskKind task,
                             std::vector<std::string> label_set = {});

// Number of (test record, earlier call) pairs where the record's query
// text appears in a prompt issued before its own evaluation turn.
// `scan_from` bounds the scan to one method's slice of the call log;
// earlier methods evaluate the same records legitimately.
std::size_t scan_temporal_leakage(const std::vector<llm::CallRecord>& call_log,
                                  const std::vector<EvalMarker>& markers,
                                  std::size_t scan_from = 0);

struct ExperimentConfig {
    TaskDef task;
    std::filesystem::path data_file;
    std::vector<MethodSpec> methods;
    std::filesystem::path run_dir;
    std::filesystem::path store_root;
    std::size_t user_count = 100;
    RunParams params;
};

struct ExperimentResult {
    std::vector<std::pair<std::string, MetricReport>> reports; // (method id, report)
    std::size_t leakage_violations = 0;
    std::filesystem::path results_path;
};

// Evaluates every configured method, writes results.json and
// per_user.jsonl under run_dir, and runs the temporal-leakage scan.
// Deterministic for scripted backends: reruns produce identical output.
ExperimentResult run_experiment(const ExperimentConfig& config, const BenchContext& context);

std::string task_instruction(TaskKind task, const std::vector<std::string>& label_set);

} // namespace pagent::bench
