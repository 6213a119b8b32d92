#include "pagent/cli.hpp"

#include "pagent/alignment.hpp"
#include "pagent/analysis.hpp"
#include "pagent/benchmark.hpp"
#include "pagent/config.hpp"
#include "pagent/errors.hpp"

#include "CLI11.hpp"

#include <iomanip>
#include <iostream>
#include <memory>

namespace pagent::cli {

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& value) {
    std::filesystem::path p(value);
    if (p.is_absolute() || base.empty()) {
        return p;
    }
    return base / p;
}

struct Runtime {
    std::unique_ptr<llm::ChatBackend> backend;
    std::unique_ptr<Encoder> encoder;
    std::unique_ptr<tools::KnowledgeProvider> knowledge;
    bench::RunParams params;
};

Runtime build_runtime(const KvConfig& config, const std::filesystem::path& base) {
    Runtime runtime;

    const std::string backend_kind = config.get_string("backend", "scripted");
    if (backend_kind == "scripted") {
        const std::string fixture = config.require_string("fixture_file");
        runtime.backend = std::make_unique<llm::ScriptedBackend>(
            llm::ScriptedFixture::load(resolve(base, fixture)));
    } else if (backend_kind == "http") {
        llm::HttpBackendConfig http = llm::HttpBackendConfig::from_env();
        http.base_url = config.get_string("api_base", http.base_url);
        http.api_key = config.get_string("api_key", http.api_key);
        http.model = config.get_string("model", http.model);
        const std::string dialect = config.get_string("dialect", "openai");
        if (dialect == "anthropic") {
            http.dialect = llm::HttpDialect::Anthropic;
        } else if (dialect != "openai") {
            throw ConfigError("unknown dialect '" + dialect + "'");
        }
        runtime.backend = std::make_unique<llm::HttpBackend>(http);
    } else {
        throw ConfigError("unknown backend '" + backend_kind + "'");
    }

    const std::string encoder_kind = config.get_string("encoder", "hashed_tfidf");
    if (encoder_kind == "hashed_tfidf") {
        runtime.encoder = std::make_unique<HashedTfIdfEncoder>(
            static_cast<std::size_t>(config.get_int("encoder_dim", 256)),
            static_cast<std::uint64_t>(config.get_int("encoder_seed", 42)));
    } else if (encoder_kind == "external") {
        ExternalEncoderConfig external;
        external.base_url = config.require_string("encoder_url");
        external.path = config.get_string("encoder_path", "/embed");
        external.auth_token = config.get_string("encoder_token", "");
        external.dim = static_cast<std::size_t>(config.get_int("encoder_dim", 0));
        runtime.encoder = std::make_unique<ExternalEncoder>(external);
    } else {
        throw ConfigError("unknown encoder '" + encoder_kind + "'");
    }

    if (config.has("knowledge_file")) {
        runtime.knowledge = std::make_unique<tools::OfflineKnowledgeProvider>(
            tools::OfflineKnowledgeProvider::load(
                resolve(base, config.require_string("knowledge_file"))));
    } else if (config.get_string("knowledge", "offline") == "live") {
        runtime.knowledge = std::make_unique<tools::LiveKnowledgeProvider>(
            config.get_string("knowledge_url", "https://en.wikipedia.org"));
    } else {
        runtime.knowledge = std::make_unique<tools::OfflineKnowledgeProvider>();
    }

    runtime.params.alignment_n = static_cast<int>(config.get_int("alignment_n", 3));
    runtime.params.alignment_iters = static_cast<int>(config.get_int("alignment_iters", 1));
    runtime.params.k_memory =
        static_cast<std::size_t>(config.get_int("k_memory", 4));
    runtime.params.max_steps = static_cast<int>(config.get_int("max_steps", 8));
    runtime.params.min_tool_calls = static_cast<int>(config.get_int("min_tool_calls", 2));
    runtime.params.temperature = config.get_double("temperature", 0.1);
    runtime.params.max_tokens = static_cast<int>(config.get_int("max_tokens", 1024));
    runtime.params.seed = static_cast<std::uint64_t>(config.get_int("seed", 17));
    runtime.params.membank_chunk =
        static_cast<std::size_t>(config.get_int("membank_chunk", 20));
    runtime.params.allow_self_retrieval = config.get_bool("allow_self_retrieval", false);
    return runtime;
}

void print_report_row(const std::string& method, const bench::MetricReport& report) {
    std::cout << std::left << std::setw(32) << method;
    std::cout << std::fixed << std::setprecision(4);
    if (report.accuracy) {
        std::cout << "  acc=" << *report.accuracy;
    }
    if (report.f1) {
        std::cout << "  f1=" << *report.f1;
    }
    if (report.mae) {
        std::cout << "  mae=" << *report.mae;
    }
    if (report.rmse) {
        std::cout << "  rmse=" << *report.rmse;
    }
    std::cout << "  n=" << report.n_examples
              << "  parse_failures=" << report.n_parse_failures << "\n";
}

int run_bench(const std::string& config_path, bool allow_self_retrieval) {
    const std::filesystem::path base = std::filesystem::path(config_path).parent_path();
    const KvConfig config = KvConfig::parse(config_path);

    bench::ExperimentConfig experiment;
    experiment.task = bench::TaskDef::load(resolve(base, config.require_string("task_file")));
    experiment.data_file = resolve(base, config.require_string("data_file"));
    for (const auto& method : config.get_list("methods")) {
        experiment.methods.push_back(bench::MethodSpec::parse(method));
    }
    experiment.run_dir = resolve(base, config.get_string("run_dir", "run"));
    experiment.store_root = resolve(base, config.get_string("store_root", "store"));
    experiment.user_count = static_cast<std::size_t>(config.get_int("user_count", 100));

    Runtime runtime = build_runtime(config, base);
    runtime.params.allow_self_retrieval =
        runtime.params.allow_self_retrieval || allow_self_retrieval;
    experiment.params = runtime.params;

    bench::BenchContext context;
    context.backend = runtime.backend.get();
    context.encoder = runtime.encoder.get();
    context.knowledge = runtime.knowledge.get();
    context.params = runtime.params;

    const bench::ExperimentResult result = bench::run_experiment(experiment, context);
    std::cout << "task: " << to_string(experiment.task.task) << "\n";
    for (const auto& [method, report] : result.reports) {
        print_report_row(method, report);
    }
    std::cout << "leakage violations: " << result.leakage_violations << "\n";
    std::cout << "results: " << result.results_path.string() << "\n";
    return 0;
}

int run_align(const std::string& config_path, const std::string& user_id,
              bool allow_self_retrieval) {
    const std::filesystem::path base = std::filesystem::path(config_path).parent_path();
    const KvConfig config = KvConfig::parse(config_path);

    const bench::TaskDef task =
        bench::TaskDef::load(resolve(base, config.require_string("task_file")));
    const auto datasets =
        bench::load_dataset(resolve(base, config.require_string("data_file")), task);
    const auto it = std::find_if(datasets.begin(), datasets.end(), [&](const auto& d) {
        return d.user.value == user_id;
    });
    if (it == datasets.end()) {
        throw ConfigError("user '" + user_id + "' not found in dataset");
    }

    Runtime runtime = build_runtime(config, base);
    runtime.params.allow_self_retrieval =
        runtime.params.allow_self_retrieval || allow_self_retrieval;
    const std::filesystem::path store_root =
        resolve(base, config.get_string("store_root", "store"));
    const std::filesystem::path run_dir = resolve(base, config.get_string("run_dir", "run"));

    memory::EpisodicBuffer buffer = memory::make_buffer(it->user, *runtime.encoder);
    for (const auto& record : it->profile_records) {
        memory::append_interaction(buffer, record, *runtime.encoder);
    }
    if (buffer.empty()) {
        throw ConfigError("user '" + user_id + "' has no profile records to align on");
    }

    llm::CompletionParams completion;
    completion.temperature = runtime.params.temperature;
    completion.max_tokens = runtime.params.max_tokens;

    agent::Persona persona;
    if (auto existing = agent::load_persona(it->user, store_root)) {
        persona = *existing;
    } else {
        memory::SummarizationOptions summary_options;
        summary_options.params = completion;
        const memory::SemanticProfile profile = memory::summarize_profile(
            buffer, task.task, memory::SummarizationPrompt::default_prompt(),
            *runtime.backend, summary_options);
        persona = agent::init_persona(it->user, profile);
    }

    alignment::AlignmentConfig align_config;
    align_config.batch_size_n = runtime.params.alignment_n;
    align_config.iterations_e = runtime.params.alignment_iters;
    align_config.allow_self_retrieval = runtime.params.allow_self_retrieval;

    const tools::ToolRegistry registry = tools::default_registry();
    alignment::AlignmentContext align_context;
    align_context.backend = runtime.backend.get();
    align_context.params = completion;
    align_context.audit_log = run_dir / user_id / "align.log.jsonl";
    align_context.responder = [&](const agent::Persona& current, const std::string& query,
                                  std::optional<std::size_t> masked_record) {
        tools::ToolContext tool_context;
        tool_context.buffer = &buffer;
        tool_context.encoder = runtime.encoder.get();
        tool_context.knowledge = runtime.knowledge.get();
        tool_context.k_memory = runtime.params.k_memory;
        tool_context.masked_record = masked_record;
        agent::RunConfig run_config;
        run_config.max_steps = runtime.params.max_steps;
        run_config.min_tool_calls = runtime.params.min_tool_calls;
        run_config.k_memory = runtime.params.k_memory;
        run_config.task_instruction = bench::task_instruction(task.task, task.labels);
        run_config.params = completion;
        return agent::run_episode(current, query, registry, tool_context, *runtime.backend,
                                  run_config);
    };

    const agent::Persona before = persona;
    const alignment::AlignResult result =
        alignment::align(buffer, persona, align_config, align_context);
    agent::save_persona(result.persona, store_root);

    std::cout << "user: " << user_id << "\n"
              << "persona version: " << before.version << " -> " << result.persona.version
              << "\n\n--- before ---\n"
              << before.text << "\n--- after ---\n"
              << result.persona.text << "\n";
    if (result.warning) {
        std::cerr << "warning: " << *result.warning << "\n";
    }
    return 0;
}

std::vector<agent::Persona> load_store_personas(const std::filesystem::path& store_root) {
    std::vector<agent::Persona> personas;
    memory::UserStore store(store_root);
    for (const auto& user : store.list_users()) {
        if (auto persona = agent::load_persona(user, store_root)) {
            personas.push_back(std::move(*persona));
        }
    }
    if (personas.empty()) {
        throw ConfigError("no personas found under " + store_root.string());
    }
    return personas;
}

int run_similarity(const std::string& store_root, const std::string& out_path) {
    const auto personas = load_store_personas(store_root);
    const analysis::SimilarityMatrix matrix = analysis::jaccard_matrix(personas);
    std::cout << "tokenization: lowercase alphanumeric token sets (deduplicated)\n";
    if (!matrix.empty_pairs.empty()) {
        std::cout << "note: " << matrix.empty_pairs.size()
                  << " pair(s) of empty token sets scored 1.0 by convention\n";
    }
    if (!out_path.empty()) {
        analysis::write_matrix_csv(matrix, out_path);
        std::cout << "wrote " << out_path << "\n";
    }
    std::cout << "user_id";
    for (const auto& id : matrix.user_ids) {
        std::cout << "," << id.value;
    }
    std::cout << "\n" << std::fixed << std::setprecision(4);
    for (std::size_t i = 0; i < matrix.user_ids.size(); ++i) {
        std::cout << matrix.user_ids[i].value;
        for (double value : matrix.values[i]) {
            std::cout << "," << value;
        }
        std::cout << "\n";
    }
    return 0;
}

int run_embeddings(const std::string& store_root, const std::string& out_path,
                   std::size_t dim, std::uint64_t seed) {
    const auto personas = load_store_personas(store_root);
    const HashedTfIdfEncoder encoder(dim, seed);
    analysis::export_embeddings(personas, encoder, out_path);
    std::cout << "wrote " << personas.size() << " embeddings to " << out_path << "\n";
    return 0;
}

int run_inspect(const std::string& path) {
    const agent::Trajectory trajectory = agent::load_trajectory(path);
    std::size_t index = 0;
    for (const auto& step : trajectory.steps) {
        ++index;
        std::cout << std::setw(3) << index << ". ";
        switch (step.kind) {
        case agent::StepKind::Thought:
            std::cout << "Thought     | " << step.text << "\n";
            break;
        case agent::StepKind::Action:
            std::cout << "Action      | " << (step.call ? step.call->tool_name : "?") << " <- \""
                      << (step.call ? step.call->input : "") << "\"\n";
            break;
        case agent::StepKind::Observation:
            std::cout << "Observation | " << (step.result && step.result->ok ? "ok" : "FAILED")
                      << " | " << step.text << "\n";
            break;
        case agent::StepKind::FinalAnswer:
            std::cout << "FinalAnswer | " << step.text << "\n";
            break;
        }
    }
    if (trajectory.forced) {
        std::cout << "(forced answer: step budget exhausted)\n";
    }
    if (trajectory.tool_rule_violated) {
        std::cout << "(tool minimum not met; answer accepted after one reminder)\n";
    }
    return 0;
}

} // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"Personalized agent benchmark and analysis toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::string user_id;
    std::string store_root;
    std::string out_path;
    std::string traj_path;
    std::size_t dim = 256;
    std::uint64_t seed = 42;
    bool allow_self_retrieval = false;

    auto* bench_cmd = app.add_subcommand("bench", "Run the benchmark described by a config file");
    bench_cmd->add_option("--config", config_path, "Config file")->required();
    bench_cmd->add_flag("--allow-self-retrieval", allow_self_retrieval,
                        "Let alignment simulations retrieve the record they simulate");

    auto* align_cmd =
        app.add_subcommand("align", "Align one user's persona and print the diff");
    align_cmd->add_option("--config", config_path, "Config file")->required();
    align_cmd->add_option("--user", user_id, "User id")->required();
    align_cmd->add_flag("--allow-self-retrieval", allow_self_retrieval,
                        "Let alignment simulations retrieve the record they simulate");

    auto* analyze_cmd = app.add_subcommand("analyze", "Persona analysis");
    analyze_cmd->require_subcommand(1);
    auto* similarity_cmd =
        analyze_cmd->add_subcommand("similarity", "Jaccard similarity matrix of stored personas");
    similarity_cmd->add_option("--store", store_root, "Store root directory")->required();
    similarity_cmd->add_option("--out", out_path, "Write the matrix CSV here");
    auto* embeddings_cmd =
        analyze_cmd->add_subcommand("embeddings", "Export persona embeddings as CSV");
    embeddings_cmd->add_option("--store", store_root, "Store root directory")->required();
    embeddings_cmd->add_option("--out", out_path, "Output CSV path")->required();
    embeddings_cmd->add_option("--dim", dim, "Encoder dimension");
    embeddings_cmd->add_option("--seed", seed, "Encoder seed");

    auto* inspect_cmd = app.add_subcommand("inspect", "Pretty-print a trajectory log");
    inspect_cmd->add_option("file", traj_path, "Trajectory .traj.jsonl file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << "\n";
        return 1;
    }

    try {
        if (bench_cmd->parsed()) {
            return run_bench(config_path, allow_self_retrieval);
        }
        if (align_cmd->parsed()) {
            return run_align(config_path, user_id, allow_self_retrieval);
        }
        if (analyze_cmd->parsed()) {
            if (similarity_cmd->parsed()) {
                return run_similarity(store_root, out_path);
            }
            return run_embeddings(store_root, out_path, dim, seed);
        }
        if (inspect_cmd->parsed()) {
            return run_inspect(traj_path);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

} // namespace pagent::cli
