#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "pagent/alignment.hpp"
#include "pagent/errors.hpp"
#include "pagent/prompts.hpp"

#include "json.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <unistd.h>

using namespace pagent;
using namespace pagent::alignment;

namespace {

constexpr const char* kCriticAnchor = "meticulous and critical evaluator";
constexpr const char* kUpdateAnchor = "prompt engineering assistant tasked with refining";

InteractionRecord make_record(const std::string& query, const std::string& answer,
                              std::int64_t timestamp) {
    InteractionRecord record;
    record.query = query;
    record.ground_truth = answer;
    record.metadata.timestamp = timestamp;
    return record;
}

memory::EpisodicBuffer make_test_buffer(const Encoder& encoder, int n) {
    memory::EpisodicBuffer buffer = memory::make_buffer(UserId{"u1"}, encoder);
    for (int i = 1; i <= n; ++i) {
        append_interaction(buffer,
                           make_record("question number " + std::to_string(i),
                                       "gt-" + std::to_string(i) + "-marker", i),
                           encoder);
    }
    return buffer;
}

llm::ScriptedBackend scripted(std::vector<llm::ScriptedRule> rules,
                              std::optional<std::string> fallback = {}) {
    llm::ScriptedFixture fixture;
    fixture.rules = std::move(rules);
    fixture.default_response = std::move(fallback);
    return llm::ScriptedBackend(std::move(fixture));
}

agent::Persona make_persona(const std::string& text) {
    agent::Persona persona;
    persona.user = UserId{"u1"};
    persona.text = text;
    return persona;
}

// Responder that burns exactly one backend call per simulation, so call
// partitions stay easy to count.
Responder one_call_responder(llm::ChatBackend& backend, const std::string& reply_tag) {
    return [&backend, reply_tag](const agent::Persona& persona, const std::string& query,
                                 std::optional<std::size_t>) {
        const std::string out = backend.complete(
            {{llm::Role::System, persona.text}, {llm::Role::User, "SIMULATE: " + query}});
        agent::Trajectory trajectory;
        trajectory.query = query;
        agent::AgentStep step;
        step.kind = agent::StepKind::FinalAnswer;
        step.text = out.empty() ? reply_tag : out;
        trajectory.steps.push_back(step);
        return agent::EpisodeResult{step.text, std::move(trajectory)};
    };
}

enum class CallKind { Simulate, Critic, Update, Other };

CallKind classify(const llm::CallRecord& record) {
    const std::string rendered = llm::render_messages(record.request);
    if (rendered.find(kCriticAnchor) != std::string::npos) {
        return CallKind::Critic;
    }
    if (rendered.find(kUpdateAnchor) != std::string::npos) {
        return CallKind::Update;
    }
    if (rendered.find("SIMULATE:") != std::string::npos) {
        return CallKind::Simulate;
    }
    return CallKind::Other;
}

} // namespace

TEST_CASE("build_batch truncates to the buffer size") {
    const HashedTfIdfEncoder encoder(32, 1);
    const auto buffer = make_test_buffer(encoder, 2);
    const auto batch = build_batch(buffer, 3);
    REQUIRE(batch.size() == 2);
    CHECK(batch[0].query == "question number 1");
    CHECK(batch[1].query == "question number 2");
}

TEST_CASE("build_batch picks the latest n in chronological order") {
    const HashedTfIdfEncoder encoder(32, 1);
    const auto buffer = make_test_buffer(encoder, 10);
    const auto batch = build_batch(buffer, 3);
    REQUIRE(batch.size() == 3);
    CHECK(batch[0].query == "question number 8");
    CHECK(batch[1].query == "question number 9");
    CHECK(batch[2].query == "question number 10");
    CHECK(batch[0].record_index == 7);
    CHECK(batch[2].record_index == 9);
}

TEST_CASE("build_batch equals a sort-then-slice oracle on shuffled input") {
    const HashedTfIdfEncoder encoder(32, 1);
    std::mt19937_64 rng(43);
    std::vector<InteractionRecord> source;
    for (int i = 0; i < 20; ++i) {
        source.push_back(make_record("q" + std::to_string(i), "a" + std::to_string(i),
                                     static_cast<std::int64_t>(rng() % 1000)));
    }
    memory::EpisodicBuffer buffer = memory::make_buffer(UserId{"u1"}, encoder);
    for (const auto& record : source) {
        append_interaction(buffer, record, encoder);
    }

    std::vector<InteractionRecord> oracle = source;
    std::stable_sort(oracle.begin(), oracle.end(),
                     [](const InteractionRecord& lhs, const InteractionRecord& rhs) {
                         return lhs.metadata.timestamp < rhs.metadata.timestamp;
                     });
    const auto batch = build_batch(buffer, 5);
    REQUIRE(batch.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(batch[i].query == oracle[oracle.size() - 5 + i].query);
    }
}

TEST_CASE("build_batch on an empty buffer fails") {
    const HashedTfIdfEncoder encoder(32, 1);
    const memory::EpisodicBuffer buffer = memory::make_buffer(UserId{"u1"}, encoder);
    CHECK_THROWS_AS(build_batch(buffer, 3), EmptyBuffer);
}

TEST_CASE("simulate_responses fills every agent_response") {
    const HashedTfIdfEncoder encoder(32, 1);
    const auto buffer = make_test_buffer(encoder, 5);
    auto backend = scripted({}, "X");
    AlignmentContext context;
    context.backend = &backend;
    context.responder = one_call_responder(backend, "X");

    const auto result = simulate_responses(build_batch(buffer, 3), make_persona("p"), context);
    REQUIRE(result.batch.size() == 3);
    for (const auto& item : result.batch) {
        CHECK(item.agent_response == "X");
    }
    CHECK(result.trajectories.size() == 3);
    CHECK(backend.call_count() == 3); // one episode per batch item
}

TEST_CASE("simulation masks each item's own record by default") {
    const HashedTfIdfEncoder encoder(32, 1);
    const auto buffer = make_test_buffer(encoder, 6);
    auto backend = scripted({}, "X");
    std::vector<std::optional<std::size_t>> seen_masks;
    AlignmentContext context;
    context.backend = &backend;
    context.responder = [&](const agent::Persona&, const std::string&,
                            std::optional<std::size_t> mask) {
        seen_masks.push_back(mask);
        agent::Trajectory trajectory;
        agent::AgentStep step;
        step.kind = agent::StepKind::FinalAnswer;
        step.text = "X";
        trajectory.steps.push_back(step);
        return agent::EpisodeResult{"X", std::move(trajectory)};
    };

    const auto batch = build_batch(buffer, 3);
    simulate_responses(batch, make_persona("p"), context);
    REQUIRE(seen_masks.size() == 3);
    for (std::size_t j = 0; j < 3; ++j) {
        REQUIRE(seen_masks[j].has_value());
        CHECK(*seen_masks[j] == batch[j].record_index);
    }

    seen_masks.clear();
    simulate_responses(batch, make_persona("p"), context, /*allow_self_retrieval=*/true);
    for (const auto& mask : seen_masks) {
        CHECK_FALSE(mask.has_value());
    }
}

TEST_CASE("episode simulation never observes the record it simulates") {
    const HashedTfIdfEncoder encoder(64, 3);
    const auto buffer = make_test_buffer(encoder, 6);
    std::map<std::string, std::string> articles{{"Topic", "wikipedia says things"}};
    const tools::OfflineKnowledgeProvider knowledge(articles);
    auto backend =
        scripted({{"wikipedia says", false, "Final Answer: done"},
                  {"Past Q:", false, "Thought: wiki\nAction: wikipedia\nAction Input: Topic"}},
                 "Thought: history\nAction: user_memory\nAction Input: question number");

    AlignmentContext context;
    context.backend = &backend;
    context.responder = [&](const agent::Persona& persona, const std::string& query,
                            std::optional<std::size_t> mask) {
        tools::ToolContext tool_context;
        tool_context.buffer = &buffer;
        tool_context.encoder = &encoder;
        tool_context.knowledge = &knowledge;
        tool_context.k_memory = 4;
        tool_context.masked_record = mask;
        return agent::run_episode(persona, query, tools::default_registry(), tool_context,
                                  backend, {});
    };

    const auto batch = build_batch(buffer, 3);
    const auto result = simulate_responses(batch, make_persona("p"), context);
    for (std::size_t j = 0; j < result.batch.size(); ++j) {
        const std::string own_marker = "gt-" + std::to_string(batch[j].record_index + 1) +
                                       "-marker";
        for (const auto& step : result.trajectories[j].steps) {
            if (step.kind == agent::StepKind::Observation) {
                CHECK(step.text.find(own_marker) == std::string::npos);
            }
        }
    }
}

TEST_CASE("compute_gradient renders the critic template and passes the reply through") {
    auto backend = scripted({{kCriticAnchor, false, "sharpen search keywords"}});
    const TextualGradient gradient =
        compute_gradient("the question", "the response", "the truth", backend);
    CHECK(gradient.feedback == "sharpen search keywords");

    const auto log = backend.call_log();
    REQUIRE(log.size() == 1);
    const std::string prompt = log[0].request[0].content;
    CHECK(prompt.find("Question: the question") != std::string::npos);
    CHECK(prompt.find("Expected Answer: the truth") != std::string::npos);
    CHECK(prompt.find("Agent Response: the response") != std::string::npos);
    CHECK(prompt.find("1. Explain on how to improve the search keywords of tools for this "
                      "user.") != std::string::npos);
    CHECK(prompt.find("2. Take the user's prior interactions, preferences, and any "
                      "personalization aspects into consideration.") != std::string::npos);
    CHECK(prompt.find("3. Provide explicit description for user profile and preferences "
                      "that is not specific to this task.") != std::string::npos);
    CHECK(prompt.find("[Question]") == std::string::npos);
    CHECK(prompt.find("[Ground Truth]") == std::string::npos);
    CHECK(prompt.find("[Response]") == std::string::npos);
}

TEST_CASE("compute_gradient validates inputs and replies") {
    auto backend = scripted({{kCriticAnchor, false, ""}});
    CHECK_THROWS_AS(compute_gradient("", "r", "g", backend), FormatError);
    CHECK_THROWS_AS(compute_gradient("q", "", "g", backend), FormatError);
    CHECK_THROWS_AS(compute_gradient("q", "r", "", backend), FormatError);
    CHECK_THROWS_AS(compute_gradient("q", "r", "g", backend), EmptyCompletion);
}

TEST_CASE("update_persona rewrites the text and versions the history") {
    auto backend = scripted({{kUpdateAnchor, false, "NEW PERSONA"}});
    const agent::Persona persona = make_persona("OLD PERSONA");
    const agent::Persona updated =
        update_persona(persona, {{"feedback one", 0}, {"feedback two", 1}}, backend);
    CHECK(updated.text == "NEW PERSONA");
    CHECK(updated.version == 1);
    REQUIRE(updated.history.size() == 1);
    CHECK(updated.history[0] == "OLD PERSONA");

    const std::string prompt = backend.call_log()[0].request[0].content;
    CHECK(prompt.find("Current system prompt: OLD PERSONA") != std::string::npos);
    CHECK(prompt.find("feedback one") != std::string::npos);
    CHECK(prompt.find("feedback two") != std::string::npos);
    CHECK(prompt.find("---") != std::string::npos);
}

TEST_CASE("an identity update still increments the version") {
    auto backend = scripted({{kUpdateAnchor, false, "SAME TEXT"}});
    const agent::Persona persona = make_persona("SAME TEXT");
    const agent::Persona updated = update_persona(persona, {{"fb", 0}}, backend);
    CHECK(updated.text == persona.text);
    CHECK(updated.version == 1);
}

TEST_CASE("align with an identity update returns version 1") {
    const HashedTfIdfEncoder encoder(32, 1);
    const auto buffer = make_test_buffer(encoder, 5);
    auto backend = scripted({{kCriticAnchor, false, "fb"}, {kUpdateAnchor, false, "p"}}, "sim");
    AlignmentConfig config;
    AlignmentContext context;
    context.backend = &backend;
    context.responder = one_call_responder(backend, "sim");

    const AlignResult result = align(buffer, make_persona("p"), config, context);
    CHECK(result.persona.text == "p");
    CHECK(result.persona.version == 1);
    CHECK(result.completed_iterations == 1);
    CHECK_FALSE(result.warning.has_value());
}

TEST_CASE("one iteration makes n critic calls and one update call") {
    const HashedTfIdfEncoder encoder(32, 1);
    const auto buffer = make_test_buffer(encoder, 5);
    auto backend = scripted(
        {{kCriticAnchor, false, "fb"}, {kUpdateAnchor, false, "new text"}}, "sim-answer");
    AlignmentConfig config;
    config.batch_size_n = 3;
    config.iterations_e = 1;
    AlignmentContext context;
    context.backend = &backend;
    context.responder = one_call_responder(backend, "sim-answer");

    align(buffer, make_persona("p0"), config, context);

    std::size_t sims = 0;
    std::size_t critics = 0;
    std::size_t updates = 0;
    for (const auto& record : backend.call_log()) {
        switch (classify(record)) {
        case CallKind::Simulate: ++sims; break;
        case CallKind::Critic: ++critics; break;
        case CallKind::Update: ++updates; break;
        case CallKind::Other: FAIL("unexpected backend call"); break;
        }
    }
    CHECK(sims == 3);
    CHECK(critics == 3);
    CHECK(updates == 1);
}

TEST_CASE("iterations run in (sim*n, critic*n, update) order and chain personas") {
    const HashedTfIdfEncoder encoder(32, 1);
    const auto buffer = make_test_buffer(encoder, 5);
    auto backend = scripted(
        {{kCriticAnchor, false, "fb"}, {kUpdateAnchor, false, "vNEXT"}}, "sim-answer");
    AlignmentConfig config;
    config.batch_size_n = 3;
    config.iterations_e = 2;
    AlignmentContext context;
    context.backend = &backend;
    context.responder = one_call_responder(backend, "sim-answer");

    const AlignResult result = align(buffer, make_persona("v0"), config, context);
    CHECK(result.persona.version == 2);
    REQUIRE(result.persona.history.size() == 2);
    CHECK(result.persona.history[0] == "v0");
    CHECK(result.persona.history[1] == "vNEXT");

    std::vector<CallKind> kinds;
    for (const auto& record : backend.call_log()) {
        kinds.push_back(classify(record));
    }
    const std::vector<CallKind> expected = {
        CallKind::Simulate, CallKind::Simulate, CallKind::Simulate,
        CallKind::Critic,   CallKind::Critic,   CallKind::Critic,
        CallKind::Update,
        CallKind::Simulate, CallKind::Simulate, CallKind::Simulate,
        CallKind::Critic,   CallKind::Critic,   CallKind::Critic,
        CallKind::Update,
    };
    CHECK(kinds == expected);

    // The second iteration simulates under the updated persona.
    const auto log = backend.call_log();
    CHECK(log[7].request[0].content == "vNEXT");
}

TEST_CASE("the call partition holds for every n and E in 1..3") {
    const HashedTfIdfEncoder encoder(32, 1);
    const auto buffer = make_test_buffer(encoder, 5);
    for (int n = 1; n <= 3; ++n) {
        for (int e = 1; e <= 3; ++e) {
            auto backend = scripted(
                {{kCriticAnchor, false, "fb"}, {kUpdateAnchor, false, "pX"}}, "sim");
            AlignmentConfig config;
            config.batch_size_n = n;
            config.iterations_e = e;
            AlignmentContext context;
            context.backend = &backend;
            context.responder = one_call_responder(backend, "sim");

            const AlignResult result = align(buffer, make_persona("p0"), config, context);
            CHECK(result.persona.version == e);

            std::vector<CallKind> sequence;
            for (const auto& record : backend.call_log()) {
                const CallKind kind = classify(record);
                if (kind == CallKind::Critic || kind == CallKind::Update) {
                    sequence.push_back(kind);
                }
            }
            REQUIRE(sequence.size() == static_cast<std::size_t>(e * (n + 1)));
            for (int iteration = 0; iteration < e; ++iteration) {
                for (int j = 0; j < n; ++j) {
                    CHECK(sequence[static_cast<std::size_t>(iteration * (n + 1) + j)] ==
                          CallKind::Critic);
                }
                CHECK(sequence[static_cast<std::size_t>(iteration * (n + 1) + n)] ==
                      CallKind::Update);
            }
        }
    }
}

TEST_CASE("E=0 is a config error, not a silent no-op") {
    const HashedTfIdfEncoder encoder(32, 1);
    const auto buffer = make_test_buffer(encoder, 3);
    auto backend = scripted({}, "x");
    AlignmentConfig config;
    config.iterations_e = 0;
    AlignmentContext context;
    context.backend = &backend;
    context.responder = one_call_responder(backend, "x");
    CHECK_THROWS_AS(align(buffer, make_persona("p"), config, context), ConfigError);
    config.iterations_e = 1;
    config.batch_size_n = 0;
    CHECK_THROWS_AS(align(buffer, make_persona("p"), config, context), ConfigError);
}

TEST_CASE("mid-iteration failure returns the last fully-updated persona") {
    const HashedTfIdfEncoder encoder(32, 1);
    const auto buffer = make_test_buffer(encoder, 5);
    // Simulation replies differ per iteration; the critic only knows how
    // to grade the first one, so iteration 2 dies mid-way.
    int sim_calls = 0;
    auto backend = scripted({{"RESP-A", false, "fb"}, {kUpdateAnchor, false, "v1-text"}});
    AlignmentConfig config;
    config.batch_size_n = 2;
    config.iterations_e = 3;
    AlignmentContext context;
    context.backend = &backend;
    context.responder = [&](const agent::Persona&, const std::string& query,
                            std::optional<std::size_t>) {
        ++sim_calls;
        const std::string answer = sim_calls <= 2 ? "RESP-A" : "RESP-B";
        agent::Trajectory trajectory;
        trajectory.query = query;
        agent::AgentStep step;
        step.kind = agent::StepKind::FinalAnswer;
        step.text = answer;
        trajectory.steps.push_back(step);
        return agent::EpisodeResult{answer, std::move(trajectory)};
    };

    const AlignResult result = align(buffer, make_persona("v0"), config, context);
    CHECK(result.persona.version == 1);
    CHECK(result.persona.text == "v1-text");
    CHECK(result.completed_iterations == 1);
    REQUIRE(result.warning.has_value());
    CHECK(result.warning->find("iteration 2") != std::string::npos);
}

TEST_CASE("align writes an audit log with every phase") {
    const HashedTfIdfEncoder encoder(32, 1);
    const auto buffer = make_test_buffer(encoder, 4);
    auto backend = scripted(
        {{kCriticAnchor, false, "fb"}, {kUpdateAnchor, false, "p1"}}, "sim");
    const auto log_path = std::filesystem::temp_directory_path() /
                          ("pagent_align_" + std::to_string(::getpid())) / "align.log.jsonl";
    std::filesystem::remove_all(log_path.parent_path());

    AlignmentConfig config;
    config.batch_size_n = 2;
    AlignmentContext context;
    context.backend = &backend;
    context.responder = one_call_responder(backend, "sim");
    context.audit_log = log_path;
    align(buffer, make_persona("p0"), config, context);

    std::ifstream in(log_path);
    REQUIRE(in.good());
    std::map<std::string, int> phases;
    std::string line;
    while (std::getline(in, line)) {
        const auto doc = nlohmann::json::parse(line);
        const std::string phase = doc.at("phase").get<std::string>();
        ++phases[phase];
        if (phase == "gradient" || phase == "update") {
            // The audit log carries the exact rendered prompt.
            CHECK(doc.contains("prompt"));
            CHECK_FALSE(doc["prompt"].get<std::string>().empty());
        }
    }
    CHECK(phases["simulate"] == 2);
    CHECK(phases["gradient"] == 2);
    CHECK(phases["update"] == 1);
    std::filesystem::remove_all(log_path.parent_path());
}

TEST_CASE("alignment is deterministic under a scripted backend") {
    const HashedTfIdfEncoder encoder(32, 1);
    const auto buffer = make_test_buffer(encoder, 5);
    auto run_once = [&] {
        auto backend = scripted(
            {{kCriticAnchor, false, "fb"}, {kUpdateAnchor, false, "aligned text"}}, "sim");
        AlignmentConfig config;
        config.batch_size_n = 3;
        config.iterations_e = 2;
        AlignmentContext context;
        context.backend = &backend;
        context.responder = one_call_responder(backend, "sim");
        return align(buffer, make_persona("p0"), config, context).persona;
    };
    const agent::Persona first = run_once();
    const agent::Persona second = run_once();
    CHECK(first == second);
}
