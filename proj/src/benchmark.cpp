#include "pagent/benchmark.hpp"

#include "pagent/alignment.hpp"
#include "pagent/errors.hpp"
#include "pagent/memory.hpp"
#include "pagent/prompts.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

namespace pagent::bench {

using nlohmann::json;

TaskDef TaskDef::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open task definition: " + path.string());
    }
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    TaskDef def;
    try {
        def.task = task_from_string(doc.at("task").get<std::string>());
        if (doc.contains("labels")) {
            def.labels = doc["labels"].get<std::vector<std::string>>();
        }
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    if (def.labels.empty()) {
        if (!is_rating_task(def.task)) {
            throw FormatError(path.string() + ": classification tasks need a label set");
        }
        def.labels = {"1", "2", "3", "4", "5"};
    }
    // Duplicates would double-count in macro-F1.
    std::vector<std::string> unique;
    for (const auto& label : def.labels) {
        if (std::find(unique.begin(), unique.end(), label) == unique.end()) {
            unique.push_back(label);
        }
    }
    def.labels = std::move(unique);
    return def;
}

std::string MethodSpec::id() const {
    switch (kind) {
    case MethodKind::DirectPrompt: return "prompt";
    case MethodKind::Icl: return "icl-" + std::to_string(k);
    case MethodKind::Rag: return "rag-" + std::to_string(k);
    case MethodKind::Pag: return "pag-" + std::to_string(k);
    case MethodKind::ReactAgent: return "react";
    case MethodKind::MemoryBankAgent: return "membank-like";
    case MethodKind::PersonaAgentMethod: {
        std::string name = "persona_agent";
        if (!flags.alignment) name += ":no_alignment";
        if (!flags.persona) name += ":no_persona";
        if (!flags.memory) name += ":no_memory";
        if (!flags.action) name += ":no_action";
        return name;
    }
    }
    return "unknown";
}

MethodSpec MethodSpec::parse(const std::string& text) {
    MethodSpec spec;
    auto with_k = [&](const std::string& prefix, MethodKind kind) -> bool {
        if (text == prefix) {
            spec.kind = kind;
            return true;
        }
        if (text.rfind(prefix + "-", 0) == 0) {
            spec.kind = kind;
            const std::string suffix = text.substr(prefix.size() + 1);
            try {
                spec.k = std::stoi(suffix);
            } catch (const std::exception&) {
                throw ConfigError("bad method spec '" + text + "'");
            }
            if (spec.k < 1) {
                throw ConfigError("method '" + text + "' needs k >= 1");
            }
            return true;
        }
        return false;
    };

    if (text == "prompt") {
        spec.kind = MethodKind::DirectPrompt;
        return spec;
    }
    if (with_k("icl", MethodKind::Icl) || with_k("rag", MethodKind::Rag) ||
        with_k("pag", MethodKind::Pag)) {
        return spec;
    }
    if (text == "react") {
        spec.kind = MethodKind::ReactAgent;
        return spec;
    }
    if (text == "membank" || text == "membank-like") {
        spec.kind = MethodKind::MemoryBankAgent;
        return spec;
    }
    if (text.rfind("persona_agent", 0) == 0) {
        spec.kind = MethodKind::PersonaAgentMethod;
        std::string rest = text.substr(std::string("persona_agent").size());
        while (!rest.empty()) {
            if (rest[0] != ':') {
                throw ConfigError("bad method spec '" + text + "'");
            }
            rest.erase(0, 1);
            const auto colon = rest.find(':');
            const std::string flag = rest.substr(0, colon);
            rest = colon == std::string::npos ? "" : rest.substr(colon);
            if (flag == "no_alignment") spec.flags.alignment = false;
            else if (flag == "no_persona") spec.flags.persona = false;
            else if (flag == "no_memory") spec.flags.memory = false;
            else if (flag == "no_action") spec.flags.action = false;
            else throw ConfigError("unknown ablation flag '" + flag + "' in '" + text + "'");
        }
        return spec;
    }
    throw ConfigError("unknown method spec '" + text + "'");
}

std::vector<UserDataset> load_dataset(const std::filesystem::path& path, const TaskDef& def) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open dataset: " + path.string());
    }

    std::vector<UserDataset> datasets;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const std::string where = path.string() + ":" + std::to_string(line_no);
        json doc;
        try {
            doc = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(where + ": " + e.what());
        }

        UserDataset dataset;
        dataset.task = def.task;
        dataset.label_set = def.labels;
        std::vector<InteractionRecord> records;
        std::size_t split_index = 0;
        try {
            dataset.user = UserId{doc.at("user_id").get<std::string>()};
            split_index = doc.at("split_index").get<std::size_t>();
            std::size_t index = 0;
            for (const auto& entry : doc.at("records")) {
                InteractionRecord record;
                record.query = entry.at("query").get<std::string>();
                record.ground_truth = entry.at("ground_truth").get<std::string>();
                record.metadata.timestamp = entry.contains("timestamp")
                                                ? entry["timestamp"].get<std::int64_t>()
                                                : static_cast<std::int64_t>(index);
                if (entry.contains("session_id") && !entry["session_id"].is_null()) {
                    record.metadata.session_id = entry["session_id"].get<std::string>();
                }
                records.push_back(std::move(record));
                ++index;
            }
        } catch (const json::exception& e) {
            throw FormatError(where + ": " + e.what());
        }
        if (dataset.user.value.empty()) {
            throw FormatError(where + ": empty user_id");
        }
        if (split_index > records.size()) {
            throw FormatError(where + ": split_index " + std::to_string(split_index) +
                              " exceeds record count " + std::to_string(records.size()));
        }

        std::stable_sort(records.begin(), records.end(),
                         [](const InteractionRecord& lhs, const InteractionRecord& rhs) {
                             return lhs.metadata.timestamp < rhs.metadata.timestamp;
                         });
        dataset.profile_records.assign(records.begin(),
                                       records.begin() + static_cast<std::ptrdiff_t>(split_index));
        dataset.test_records.assign(records.begin() + static_cast<std::ptrdiff_t>(split_index),
                                    records.end());
        datasets.push_back(std::move(dataset));
    }
    return datasets;
}

std::vector<UserDataset> select_top_users(std::vector<UserDataset> datasets, std::size_t count) {
    std::sort(datasets.begin(), datasets.end(), [](const UserDataset& lhs, const UserDataset& rhs) {
        if (lhs.total_records() != rhs.total_records()) {
            return lhs.total_records() > rhs.total_records();
        }
        return lhs.user.value < rhs.user.value;
    });
    if (datasets.size() > count) {
        datasets.resize(count);
    }
    return datasets;
}

std::string task_instruction(TaskKind task, const std::vector<std::string>& label_set) {
    std::ostringstream out;
    switch (task) {
    case TaskKind::CitationIdentification:
        out << "Decide which candidate reference the user would cite.";
        break;
    case TaskKind::MovieTagging:
        out << "Choose the tag this user would assign to the movie.";
        break;
    case TaskKind::NewsCategorization:
        out << "Choose the category this user would assign to the article.";
        break;
    case TaskKind::ProductRating:
        out << "Predict the rating this user would give, as a single integer from 1 to 5.";
        return out.str();
    }
    out << " Answer with exactly one of: ";
    for (std::size_t i = 0; i < label_set.size(); ++i) {
        out << (i > 0 ? ", " : "") << label_set[i];
    }
    out << ".";
    return out.str();
}

namespace {

constexpr std::size_t kSummaryMaxRecords = 50;

std::uint64_t stable_hash(const std::string& text) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

memory::EpisodicBuffer build_profile_buffer(const UserDataset& dataset,
                                            const Encoder& encoder) {
    memory::EpisodicBuffer buffer = memory::make_buffer(dataset.user, encoder);
    for (const auto& record : dataset.profile_records) {
        memory::append_interaction(buffer, record, encoder);
    }
    return buffer;
}

llm::CompletionParams completion_params(const RunParams& params) {
    llm::CompletionParams out;
    out.temperature = params.temperature;
    out.max_tokens = params.max_tokens;
    return out;
}

std::string single_completion(llm::ChatBackend& backend, const RunParams& params,
                              const std::string& user_text,
                              const std::optional<std::string>& system_text = {}) {
    std::vector<llm::ChatMessage> messages;
    if (system_text) {
        messages.push_back({llm::Role::System, *system_text});
    }
    messages.push_back({llm::Role::User, user_text});
    return backend.complete(messages, completion_params(params));
}

// Demonstrations for ICL come from *other* users' profile records; the
// pool order and the seeded draw are both deterministic.
std::vector<InteractionRecord> icl_demonstrations(const UserDataset& dataset,
                                                  const BenchContext& context,
                                                  std::size_t count) {
    std::vector<InteractionRecord> pool;
    if (context.all_users) {
        for (const auto& other : *context.all_users) {
            if (other.user == dataset.user) {
                continue;
            }
            pool.insert(pool.end(), other.profile_records.begin(),
                        other.profile_records.end());
        }
    }
    const std::size_t want = std::min(count, pool.size());
    std::mt19937_64 rng(context.params.seed ^ stable_hash(dataset.user.value));
    std::vector<InteractionRecord> demos;
    for (std::size_t i = 0; i < want; ++i) {
        // Engine output modulo pool size keeps the draw reproducible
        // across standard libraries, unlike uniform_int_distribution.
        const std::size_t pick = static_cast<std::size_t>(rng() % pool.size());
        demos.push_back(pool[pick]);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    return demos;
}

std::string render_demonstrations(const std::vector<InteractionRecord>& demos) {
    std::ostringstream out;
    for (const auto& demo : demos) {
        out << "Q: " << demo.query << "\nA: " << demo.ground_truth << "\n\n";
    }
    return out.str();
}

// MemBank-style running note: re-summarized after every chunk of profile
// records, previous note folded into the next summarization call.
std::string build_memory_note(const UserDataset& dataset, const BenchContext& context) {
    if (dataset.profile_records.empty()) {
        return "(no user history available)";
    }
    std::string note = "(empty)";
    const std::size_t chunk = std::max<std::size_t>(context.params.membank_chunk, 1);
    for (std::size_t start = 0; start < dataset.profile_records.size(); start += chunk) {
        const std::size_t end = std::min(start + chunk, dataset.profile_records.size());
        std::vector<InteractionRecord> slice(dataset.profile_records.begin() +
                                                 static_cast<std::ptrdiff_t>(start),
                                             dataset.profile_records.begin() +
                                                 static_cast<std::ptrdiff_t>(end));
        std::ostringstream prompt;
        prompt << "Update the long-term memory note about this user with the new "
                  "interactions. Keep it concise and cumulative.\n\n"
               << "Current note: " << note << "\n\nNew interactions:\n"
               << memory::render_records(slice) << "\n\nUpdated note:";
        note = single_completion(*context.backend, context.params, prompt.str());
        if (note.empty()) {
            throw EmptyCompletion("memory note summarization returned empty text");
        }
    }
    return note;
}

std::string retrieved_history(const memory::EpisodicBuffer& buffer, const std::string& query,
                              std::size_t k, const Encoder& encoder,
                              std::optional<std::size_t> exclude = {}) {
    if (buffer.empty()) {
        return "(no user history available)";
    }
    return memory::render_records(memory::retrieve(buffer, query, k, encoder, exclude));
}

struct PersonaSetup {
    agent::Persona persona;
    tools::ToolRegistry registry;
    std::optional<std::string> warning;
};

agent::RunConfig make_run_config(const BenchContext& context, const UserDataset& dataset) {
    agent::RunConfig config;
    config.max_steps = context.params.max_steps;
    config.min_tool_calls = context.params.min_tool_calls;
    config.k_memory = context.params.k_memory;
    config.task_instruction = task_instruction(dataset.task, dataset.label_set);
    config.params = completion_params(context.params);
    return config;
}

// Responder used both for alignment simulation and test-query evaluation.
// action=false degenerates to one direct completion with persona plus
// retrieved context.
agent::EpisodeResult respond(const agent::Persona& persona, const std::string& query,
                             std::optional<std::size_t> masked_record,
                             const UserDataset& dataset, const memory::EpisodicBuffer& buffer,
                             const tools::ToolRegistry& registry, const BenchContext& context,
                             const AblationFlags& flags) {
    if (flags.action) {
        tools::ToolContext tool_context;
        tool_context.buffer = &buffer;
        tool_context.encoder = context.encoder;
        tool_context.knowledge = context.knowledge;
        tool_context.k_memory = context.params.k_memory;
        tool_context.masked_record = masked_record;
        return agent::run_episode(persona, query, registry, tool_context, *context.backend,
                                  make_run_config(context, dataset));
    }

    std::ostringstream prompt;
    prompt << task_instruction(dataset.task, dataset.label_set) << "\n\n";
    if (flags.memory && !buffer.empty()) {
        prompt << "User history:\n"
               << retrieved_history(buffer, query, context.params.k_memory, *context.encoder,
                                    masked_record)
               << "\n\n";
    }
    prompt << "Question: " << query;
    const std::string answer =
        single_completion(*context.backend, context.params, prompt.str(), persona.text);

    agent::Trajectory trajectory;
    trajectory.query = query;
    trajectory.persona_version = persona.version;
    agent::AgentStep final_step;
    final_step.kind = agent::StepKind::FinalAnswer;
    final_step.text = answer;
    trajectory.steps.push_back(final_step);
    return agent::EpisodeResult{answer, std::move(trajectory)};
}

PersonaSetup prepare_persona(const MethodSpec& spec, const UserDataset& dataset,
                             const memory::EpisodicBuffer& buffer,
                             const BenchContext& context) {
    PersonaSetup setup;
    setup.registry = spec.flags.memory
                         ? tools::default_registry()
                         : tools::ToolRegistry{tools::wikipedia_tool_spec()};

    memory::SemanticProfile profile;
    profile.user = dataset.user;
    profile.task = dataset.task;
    profile.source_count = buffer.size();
    profile.text = "(not available)";
    if (spec.flags.persona && spec.flags.memory && !buffer.empty()) {
        profile = memory::summarize_profile(buffer, dataset.task,
                                            memory::SummarizationPrompt::default_prompt(),
                                            *context.backend,
                                            {24000, kSummaryMaxRecords,
                                             completion_params(context.params)});
        if (!context.store_root.empty()) {
            memory::UserStore(context.store_root).save_profile(profile);
        }
    }

    if (spec.flags.persona) {
        setup.persona = agent::init_persona(dataset.user, profile);
    } else {
        setup.persona.user = dataset.user;
        setup.persona.text = agent::generic_system_prompt();
    }

    const bool can_align = spec.flags.alignment && spec.flags.persona && !buffer.empty();
    if (can_align) {
        alignment::AlignmentConfig align_config;
        align_config.batch_size_n = context.params.alignment_n;
        align_config.iterations_e = context.params.alignment_iters;
        align_config.allow_self_retrieval = context.params.allow_self_retrieval;

        alignment::AlignmentContext align_context;
        align_context.backend = context.backend;
        align_context.params = completion_params(context.params);
        if (!context.run_dir.empty()) {
            align_context.audit_log =
                context.run_dir / dataset.user.value / "align.log.jsonl";
        }
        align_context.responder = [&](const agent::Persona& persona, const std::string& query,
                                      std::optional<std::size_t> masked_record) {
            return respond(persona, query, masked_record, dataset, buffer, setup.registry,
                           context, spec.flags);
        };

        alignment::AlignResult aligned = alignment::align(buffer, setup.persona, align_config,
                                                          align_context);
        setup.persona = aligned.persona;
        setup.warning = aligned.warning;
    }
    return setup;
}

Prediction predict_from_answer(const std::string& answer, const UserDataset& dataset) {
    return parse_label(answer, dataset.task, dataset.label_set);
}

Prediction failure_prediction(const std::string& reason) {
    Prediction prediction;
    prediction.raw_text = "<error: " + reason + ">";
    return prediction;
}

} // namespace

MethodRunResult run_method(const MethodSpec& spec, const UserDataset& dataset,
                           const BenchContext& context) {
    if (!context.backend || !context.encoder) {
        throw ConfigError("benchmark context needs a backend and an encoder");
    }
    MethodRunResult result;
    memory::EpisodicBuffer buffer = build_profile_buffer(dataset, *context.encoder);
    const std::string instruction = task_instruction(dataset.task, dataset.label_set);

    // Per-method, per-user setup that happens before any test query.
    std::optional<PersonaSetup> persona_setup;
    std::string memory_note;
    std::string pag_profile_text;
    std::vector<InteractionRecord> demos;

    switch (spec.kind) {
    case MethodKind::Icl:
        demos = icl_demonstrations(dataset, context, static_cast<std::size_t>(spec.k));
        break;
    case MethodKind::Pag: {
        if (!buffer.empty()) {
            pag_profile_text =
                memory::summarize_profile(buffer, dataset.task,
                                          memory::SummarizationPrompt::default_prompt(),
                                          *context.backend,
                                          {24000, kSummaryMaxRecords,
                                           completion_params(context.params)})
                    .text;
        } else {
            pag_profile_text = "(no user history available)";
        }
        break;
    }
    case MethodKind::MemoryBankAgent:
        memory_note = build_memory_note(dataset, context);
        break;
    case MethodKind::PersonaAgentMethod:
        persona_setup = prepare_persona(spec, dataset, buffer, context);
        result.final_persona = persona_setup->persona;
        if (persona_setup->warning) {
            result.warnings.push_back(*persona_setup->warning);
        }
        if (!context.store_root.empty()) {
            memory::UserStore(context.store_root).save_buffer(buffer);
            agent::save_persona(persona_setup->persona, context.store_root);
        }
        break;
    default:
        break;
    }

    for (std::size_t i = 0; i < dataset.test_records.size(); ++i) {
        const auto& record = dataset.test_records[i];
        result.markers.push_back(EvalMarker{dataset.user, i, record.query,
                                            record.ground_truth,
                                            context.backend->call_count()});
        try {
            std::string answer;
            std::optional<agent::Trajectory> trajectory;

            switch (spec.kind) {
            case MethodKind::DirectPrompt:
                answer = single_completion(*context.backend, context.params,
                                           instruction + "\n\nQuestion: " + record.query);
                break;
            case MethodKind::Icl:
                answer = single_completion(*context.backend, context.params,
                                           instruction + "\n\nExamples:\n" +
                                               render_demonstrations(demos) +
                                               "Question: " + record.query);
                break;
            case MethodKind::Rag:
                answer = single_completion(
                    *context.backend, context.params,
                    instruction + "\n\nUser history:\n" +
                        retrieved_history(buffer, record.query,
                                          static_cast<std::size_t>(spec.k),
                                          *context.encoder) +
                        "\n\nQuestion: " + record.query);
                break;
            case MethodKind::Pag:
                answer = single_completion(
                    *context.backend, context.params,
                    instruction + "\n\nUser profile: " + pag_profile_text +
                        "\n\nUser history:\n" +
                        retrieved_history(buffer, record.query,
                                          static_cast<std::size_t>(spec.k),
                                          *context.encoder) +
                        "\n\nQuestion: " + record.query);
                break;
            case MethodKind::ReactAgent:
            case MethodKind::MemoryBankAgent: {
                agent::Persona generic;
                generic.user = dataset.user;
                generic.text = agent::generic_system_prompt();
                tools::ToolContext tool_context;
                tool_context.buffer = &buffer;
                tool_context.encoder = context.encoder;
                tool_context.knowledge = context.knowledge;
                tool_context.k_memory = context.params.k_memory;
                agent::RunConfig run_config = make_run_config(context, dataset);
                if (spec.kind == MethodKind::MemoryBankAgent) {
                    run_config.task_instruction =
                        "Long-term memory note about the user: " + memory_note + "\n\n" +
                        run_config.task_instruction;
                }
                agent::EpisodeResult episode =
                    agent::run_episode(generic, record.query, tools::default_registry(),
                                       tool_context, *context.backend, run_config);
                answer = episode.answer;
                trajectory = std::move(episode.trajectory);
                break;
            }
            case MethodKind::PersonaAgentMethod: {
                agent::EpisodeResult episode =
                    respond(persona_setup->persona, record.query, std::nullopt, dataset,
                            buffer, persona_setup->registry, context, spec.flags);
                answer = episode.answer;
                trajectory = std::move(episode.trajectory);
                break;
            }
            }

            if (trajectory && !context.run_dir.empty()) {
                agent::save_trajectory(*trajectory,
                                       context.run_dir / dataset.user.value /
                                           (std::to_string(i) + ".traj.jsonl"));
            }
            result.predictions.push_back(predict_from_answer(answer, dataset));
        } catch (const std::exception& e) {
            result.predictions.push_back(failure_prediction(e.what()));
        }
    }
    return result;
}

namespace {

std::string lowercase_copy(std::string text) {
    std::transform(text.begin(), text.end(), text.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return text;
}

std::string trim_copy(const std::string& text) {
    const auto begin = text.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) {
        return "";
    }
    const auto end = text.find_last_not_of(" \t\r\n");
    return text.substr(begin, end - begin + 1);
}

int ground_truth_rating(const std::string& text) {
    const Prediction parsed = parse_label(text, TaskKind::ProductRating, {});
    if (!parsed.rating) {
        throw FormatError("ground truth is not a rating: '" + text + "'");
    }
    return *parsed.rating;
}

} // namespace

MetricReport compute_metrics(const std::vector<Prediction>& predictions,
                             const std::vector<std::string>& ground_truths, TaskKind task,
                             std::vector<std::string> label_set) {
    if (predictions.size() != ground_truths.size()) {
        throw LengthMismatch("metrics need " + std::to_string(ground_truths.size()) +
                             " predictions, got " + std::to_string(predictions.size()));
    }
    if (predictions.empty()) {
        throw LengthMismatch("metrics need at least one prediction");
    }

    MetricReport report;
    report.task = task;
    report.n_examples = predictions.size();
    report.n_parse_failures = static_cast<std::size_t>(
        std::count_if(predictions.begin(), predictions.end(),
                      [](const Prediction& p) { return p.failed(); }));

    if (is_rating_task(task)) {
        double abs_sum = 0.0;
        double sq_sum = 0.0;
        for (std::size_t i = 0; i < predictions.size(); ++i) {
            // Parse failures impute the scale midpoint; n_parse_failures
            // keeps the imputation visible.
            const int predicted = predictions[i].rating.value_or(3);
            const int truth = ground_truth_rating(ground_truths[i]);
            const double diff = std::abs(predicted - truth);
            abs_sum += diff;
            sq_sum += diff * diff;
        }
        report.mae = abs_sum / static_cast<double>(predictions.size());
        report.rmse = std::sqrt(sq_sum / static_cast<double>(predictions.size()));
        return report;
    }

    if (label_set.empty()) {
        std::set<std::string> seen;
        for (const auto& gt : ground_truths) {
            seen.insert(trim_copy(gt));
        }
        label_set.assign(seen.begin(), seen.end());
    }

    std::vector<std::string> predicted;
    std::vector<std::string> truth;
    predicted.reserve(predictions.size());
    truth.reserve(ground_truths.size());
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        predicted.push_back(predictions[i].label ? lowercase_copy(*predictions[i].label)
                                                 : std::string("<parse-failure>"));
        truth.push_back(lowercase_copy(trim_copy(ground_truths[i])));
    }

    std::size_t correct = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i] == truth[i]) {
            ++correct;
        }
    }
    report.accuracy = static_cast<double>(correct) / static_cast<double>(predicted.size());

    // Macro one-vs-rest F1 over the task label set; labels with no true
    // positives and no support score 0.
    double f1_sum = 0.0;
    for (const auto& raw_label : label_set) {
        const std::string label = lowercase_copy(raw_label);
        std::size_t tp = 0;
        std::size_t fp = 0;
        std::size_t fn = 0;
        for (std::size_t i = 0; i < predicted.size(); ++i) {
            const bool is_pred = predicted[i] == label;
            const bool is_true = truth[i] == label;
            if (is_pred && is_true) ++tp;
            else if (is_pred) ++fp;
            else if (is_true) ++fn;
        }
        if (tp > 0) {
            const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
            const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
            f1_sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    report.f1 = f1_sum / static_cast<double>(label_set.size());
    return report;
}

std::size_t scan_temporal_leakage(const std::vector<llm::CallRecord>& call_log,
                                  const std::vector<EvalMarker>& markers,
                                  std::size_t scan_from) {
    std::size_t violations = 0;
    for (const auto& marker : markers) {
        const std::size_t limit = std::min(marker.call_index_at_start, call_log.size());
        for (std::size_t i = scan_from; i < limit; ++i) {
            const std::string rendered = llm::render_messages(call_log[i].request);
            if (rendered.find(marker.query) != std::string::npos) {
                ++violations;
            }
        }
    }
    return violations;
}

namespace {

json report_to_json(const std::string& method_id, const MetricReport& report) {
    json out;
    out["method"] = method_id;
    out["task"] = to_string(report.task);
    out["n_examples"] = report.n_examples;
    out["n_parse_failures"] = report.n_parse_failures;
    if (report.accuracy) out["accuracy"] = *report.accuracy;
    if (report.f1) out["f1"] = *report.f1;
    if (report.mae) out["mae"] = *report.mae;
    if (report.rmse) out["rmse"] = *report.rmse;
    return out;
}

} // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, const BenchContext& context) {
    if (config.methods.empty()) {
        throw ConfigError("experiment config lists no methods");
    }
    if (!context.backend || !context.encoder) {
        throw ConfigError("benchmark context needs a backend and an encoder");
    }

    std::vector<UserDataset> users =
        select_top_users(load_dataset(config.data_file, config.task), config.user_count);
    if (users.empty()) {
        throw ConfigError("dataset has no users: " + config.data_file.string());
    }

    std::error_code ec;
    std::filesystem::create_directories(config.run_dir, ec);
    if (ec) {
        throw IoError("cannot create run dir " + config.run_dir.string() + ": " + ec.message());
    }

    std::ofstream per_user(config.run_dir / "per_user.jsonl", std::ios::trunc);
    if (!per_user) {
        throw IoError("cannot write " + (config.run_dir / "per_user.jsonl").string());
    }

    ExperimentResult result;
    std::vector<std::pair<std::vector<EvalMarker>, std::size_t>> marker_groups;

    for (const auto& spec : config.methods) {
        const std::size_t method_start = context.backend->call_count();
        BenchContext method_context = context;
        method_context.all_users = &users;
        // Each method run gets its own directory so trajectory files keep
        // the per-user layout without cross-method collisions.
        method_context.run_dir =
            config.run_dir.empty() ? config.run_dir : config.run_dir / spec.id();
        method_context.store_root =
            config.store_root.empty() ? context.store_root : config.store_root;
        method_context.params = config.params;

        std::vector<Prediction> predictions;
        std::vector<std::string> ground_truths;
        std::vector<EvalMarker> method_markers;
        for (const auto& user : users) {
            MethodRunResult run = run_method(spec, user, method_context);
            for (const auto& warning : run.warnings) {
                std::cerr << spec.id() << " / " << user.user.value << ": " << warning << "\n";
            }
            method_markers.insert(method_markers.end(), run.markers.begin(),
                                  run.markers.end());

            std::vector<std::string> user_gts;
            for (const auto& record : user.test_records) {
                user_gts.push_back(record.ground_truth);
            }
            if (!run.predictions.empty()) {
                const MetricReport user_report = compute_metrics(
                    run.predictions, user_gts, config.task.task, config.task.labels);
                json line = report_to_json(spec.id(), user_report);
                line["user_id"] = user.user.value;
                per_user << line.dump() << "\n";
            }
            predictions.insert(predictions.end(), run.predictions.begin(),
                               run.predictions.end());
            ground_truths.insert(ground_truths.end(), user_gts.begin(), user_gts.end());
        }

        MetricReport report =
            compute_metrics(predictions, ground_truths, config.task.task, config.task.labels);
        result.reports.emplace_back(spec.id(), report);
        marker_groups.emplace_back(std::move(method_markers), method_start);
    }

    const auto call_log = context.backend->call_log();
    for (const auto& [markers, method_start] : marker_groups) {
        result.leakage_violations += scan_temporal_leakage(call_log, markers, method_start);
    }

    json doc;
    doc["task"] = to_string(config.task.task);
    doc["labels"] = config.task.labels;
    doc["n_users"] = users.size();
    doc["metadata"] = {{"f1_averaging", "macro one-vs-rest over the task label set"},
                       {"parse_failure_policy",
                        "classification: scored incorrect; rating: imputed midpoint 3"},
                       {"membank_note", "running-summary approximation, labeled membank-like"}};
    doc["leakage_violations"] = result.leakage_violations;
    auto& reports = doc["reports"] = json::array();
    for (const auto& [method_id, report] : result.reports) {
        reports.push_back(report_to_json(method_id, report));
    }

    result.results_path = config.run_dir / "results.json";
    std::ofstream out(result.results_path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + result.results_path.string());
    }
    out << doc.dump(2) << "\n";
    return result;
}

} // namespace pagent::bench
