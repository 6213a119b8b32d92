#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "pagent/agent.hpp"
#include "pagent/errors.hpp"
#include "pagent/prompts.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <unistd.h>

using namespace pagent;
using namespace pagent::agent;

namespace {

memory::SemanticProfile make_profile(const std::string& user, const std::string& text) {
    memory::SemanticProfile profile;
    profile.user = UserId{user};
    profile.text = text;
    profile.source_count = 1;
    return profile;
}

llm::ScriptedBackend scripted(std::vector<llm::ScriptedRule> rules,
                              std::optional<std::string> fallback = {}) {
    llm::ScriptedFixture fixture;
    fixture.rules = std::move(rules);
    fixture.default_response = std::move(fallback);
    return llm::ScriptedBackend(std::move(fixture));
}

struct World {
    HashedTfIdfEncoder encoder{64, 3};
    memory::EpisodicBuffer buffer;
    tools::OfflineKnowledgeProvider knowledge;
    tools::ToolRegistry registry = tools::default_registry();

    World() : buffer(memory::make_buffer(UserId{"u1"}, encoder)) {
        InteractionRecord record;
        record.query = "films are fun";
        record.ground_truth = "classic";
        record.metadata.timestamp = 1;
        memory::append_interaction(buffer, record, encoder);
        std::map<std::string, std::string> articles{
            {"Topic", "wikipedia says topic stuff"}};
        knowledge = tools::OfflineKnowledgeProvider(articles);
    }

    tools::ToolContext context() const {
        tools::ToolContext ctx;
        ctx.buffer = &buffer;
        ctx.encoder = &encoder;
        ctx.knowledge = &knowledge;
        ctx.k_memory = 4;
        return ctx;
    }
};

// A cooperative two-tool episode: memory first, then wikipedia, then the
// answer. Later-stage markers come first so they win once present.
std::vector<llm::ScriptedRule> cooperative_rules() {
    return {
        {"wikipedia says", false, "Final Answer: classic"},
        {"Past Q:", false, "Thought: now wiki\nAction: wikipedia\nAction Input: Topic"},
    };
}

} // namespace

TEST_CASE("init_persona substitutes the profile into the template") {
    const Persona persona = init_persona(UserId{"u1"}, make_profile("u1", "likes noir films"));
    CHECK(persona.version == 0);
    CHECK(persona.history.empty());
    CHECK(persona.text.find("User summary: likes noir films") != std::string::npos);
}

TEST_CASE("different profiles give different personas on one skeleton") {
    const Persona a = init_persona(UserId{"a"}, make_profile("a", "loves westerns"));
    const Persona b = init_persona(UserId{"b"}, make_profile("b", "loves musicals"));
    CHECK(a.text != b.text);
    CHECK(a.text.find("STRICT RULES") != std::string::npos);
    CHECK(b.text.find("STRICT RULES") != std::string::npos);
}

TEST_CASE("persona text carries all four strict rules") {
    const Persona persona = init_persona(UserId{"u"}, make_profile("u", "p"));
    CHECK(persona.text.find("1. Think step-by-step about what information you need.") !=
          std::string::npos);
    CHECK(persona.text.find("2. MUST use at least TWO tools to answer the question.") !=
          std::string::npos);
    CHECK(persona.text.find("3. Use tools precisely and deliberately and try to get the most "
                            "accurate information from different tools.") != std::string::npos);
    CHECK(persona.text.find("4. Provide clear, concise responses. Do not give explanation in "
                            "the final answer.") != std::string::npos);
}

TEST_CASE("empty profile is rejected") {
    CHECK_THROWS_AS(init_persona(UserId{"u"}, make_profile("u", "")), FormatError);
}

TEST_CASE("parse_action recognizes the canonical action form") {
    const AgentStep step =
        parse_action("Thought: need history\nAction: user_memory\nAction Input: noir films");
    CHECK(step.kind == StepKind::Action);
    REQUIRE(step.call.has_value());
    CHECK(step.call->tool_name == "user_memory");
    CHECK(step.call->input == "noir films");
}

TEST_CASE("parse_action recognizes the terminal form") {
    const AgentStep step = parse_action("Final Answer: classic");
    CHECK(step.kind == StepKind::FinalAnswer);
    CHECK(step.text == "classic");
}

TEST_CASE("parse_action takes whichever marker comes first") {
    const AgentStep action_first =
        parse_action("Action: wikipedia\nAction Input: x\nFinal Answer: y");
    CHECK(action_first.kind == StepKind::Action);
    const AgentStep final_first = parse_action("Final Answer: y\nAction: wikipedia");
    CHECK(final_first.kind == StepKind::FinalAnswer);
}

TEST_CASE("marker-free output parses as a thought") {
    const AgentStep step = parse_action("I think the answer is classic");
    CHECK(step.kind == StepKind::Thought);
    CHECK(step.text == "I think the answer is classic");
    const AgentStep marked = parse_action("Thought: just musing");
    CHECK(marked.kind == StepKind::Thought);
    CHECK(marked.text == "just musing");
}

TEST_CASE("action without input gets an empty input") {
    const AgentStep step = parse_action("Action: wikipedia");
    REQUIRE(step.call.has_value());
    CHECK(step.call->input.empty());
}

TEST_CASE("a scripted two-tool episode produces the expected trajectory") {
    World world;
    auto backend = scripted(cooperative_rules(),
                            "Thought: check history\nAction: user_memory\nAction Input: films");
    const Persona persona = init_persona(UserId{"u1"}, make_profile("u1", "profile"));
    RunConfig config;

    const EpisodeResult result =
        run_episode(persona, "what tag?", world.registry, world.context(), backend, config);

    CHECK(result.answer == "classic");
    CHECK_FALSE(result.trajectory.forced);
    CHECK_FALSE(result.trajectory.tool_rule_violated);
    REQUIRE(result.trajectory.steps.size() == 5);
    CHECK(result.trajectory.steps[0].kind == StepKind::Action);
    CHECK(result.trajectory.steps[0].call->tool_name == "user_memory");
    CHECK(result.trajectory.steps[1].kind == StepKind::Observation);
    CHECK(result.trajectory.steps[2].kind == StepKind::Action);
    CHECK(result.trajectory.steps[2].call->tool_name == "wikipedia");
    CHECK(result.trajectory.steps[3].kind == StepKind::Observation);
    CHECK(result.trajectory.steps[4].kind == StepKind::FinalAnswer);
    CHECK(result.trajectory.tool_call_count() == 2);
    CHECK(result.trajectory.tool_call_count("user_memory") == 1);
}

TEST_CASE("premature answers get one tool-rule re-prompt") {
    World world;
    auto backend = scripted(
        {
            {"wikipedia says", false, "Final Answer: classic"},
            {"Past Q:", false, "Thought: now wiki\nAction: wikipedia\nAction Input: Topic"},
            {"You must use at least two tools", false,
             "Thought: fine\nAction: user_memory\nAction Input: films"},
        },
        "Final Answer: classic");
    const Persona persona = init_persona(UserId{"u1"}, make_profile("u1", "profile"));

    const EpisodeResult result =
        run_episode(persona, "what tag?", world.registry, world.context(), backend, {});
    CHECK(result.answer == "classic");
    CHECK(result.trajectory.tool_call_count() == 2);
    CHECK(result.trajectory.tool_call_count("user_memory") == 1);
    CHECK_FALSE(result.trajectory.tool_rule_violated);
    // The rejected early answer stays visible as a thought.
    CHECK(result.trajectory.steps.front().kind == StepKind::Thought);
}

TEST_CASE("a stubborn early answer is accepted under protest") {
    World world;
    auto backend = scripted({}, "Final Answer: classic");
    const Persona persona = init_persona(UserId{"u1"}, make_profile("u1", "profile"));
    const EpisodeResult result =
        run_episode(persona, "what tag?", world.registry, world.context(), backend, {});
    CHECK(result.answer == "classic");
    CHECK(result.trajectory.tool_rule_violated);
    CHECK_FALSE(result.trajectory.forced);
    CHECK(backend.call_count() == 2); // the answer, then the answer again after the reminder
}

TEST_CASE("protocol violations are retried exactly once") {
    World world;
    auto backend = scripted({{"Reply using the required format", false, "Final Answer: classic"}},
                            "I think the answer is classic");
    const Persona persona = init_persona(UserId{"u1"}, make_profile("u1", "profile"));
    RunConfig config;
    config.min_tool_calls = 0;
    const tools::ToolRegistry wiki_only = {tools::wikipedia_tool_spec()};

    const EpisodeResult result =
        run_episode(persona, "q", wiki_only, world.context(), backend, config);
    CHECK(result.answer == "classic");
    CHECK(backend.call_count() == 2);
    CHECK(result.trajectory.steps.front().kind == StepKind::Thought);
}

TEST_CASE("budget exhaustion after a rejected answer falls back to that answer") {
    World world;
    auto backend = scripted({}, "Final Answer: classic");
    const Persona persona = init_persona(UserId{"u1"}, make_profile("u1", "p"));
    RunConfig config;
    config.max_steps = 1;
    config.min_tool_calls = 1;
    const EpisodeResult result =
        run_episode(persona, "q", world.registry, world.context(), backend, config);
    CHECK(result.trajectory.forced);
    CHECK(result.answer == "classic");
}

TEST_CASE("inconsistent run configs are rejected") {
    World world;
    auto backend = scripted({}, "Final Answer: x");
    const Persona persona = init_persona(UserId{"u1"}, make_profile("u1", "p"));
    RunConfig config;
    config.max_steps = 1; // default min_tool_calls is 2
    CHECK_THROWS_AS(
        run_episode(persona, "q", world.registry, world.context(), backend, config),
        ConfigError);
    config.max_steps = 0;
    config.min_tool_calls = 0;
    CHECK_THROWS_AS(
        run_episode(persona, "q", world.registry, world.context(), backend, config),
        ConfigError);
}

TEST_CASE("two protocol violations in a row raise ProtocolError") {
    World world;
    auto backend = scripted({}, "never following the format");
    const Persona persona = init_persona(UserId{"u1"}, make_profile("u1", "profile"));
    RunConfig config;
    config.min_tool_calls = 0;
    CHECK_THROWS_AS(
        run_episode(persona, "q", world.registry, world.context(), backend, config),
        ProtocolError);
}

TEST_CASE("exhausting the step budget forces an answer") {
    World world;
    auto backend =
        scripted({}, "Thought: still looking\nAction: wikipedia\nAction Input: Topic");
    const Persona persona = init_persona(UserId{"u1"}, make_profile("u1", "profile"));
    RunConfig config;
    config.max_steps = 1;
    config.min_tool_calls = 1;

    const EpisodeResult result =
        run_episode(persona, "q", world.registry, world.context(), backend, config);
    CHECK(result.trajectory.forced);
    CHECK(result.trajectory.steps.size() <= 3);
    CHECK(result.trajectory.steps.back().kind == StepKind::FinalAnswer);
}

TEST_CASE("trajectory length never exceeds 2*max_steps + 1") {
    World world;
    const Persona persona = init_persona(UserId{"u1"}, make_profile("u1", "profile"));
    for (int max_steps = 1; max_steps <= 6; ++max_steps) {
        RunConfig config;
        config.max_steps = max_steps;
        config.min_tool_calls = std::min(2, max_steps);
        auto fresh = scripted({}, "Thought: loop\nAction: user_memory\nAction Input: films");
        const EpisodeResult result =
            run_episode(persona, "q", world.registry, world.context(), fresh, config);
        CHECK(result.trajectory.steps.size() <=
              static_cast<std::size_t>(2 * max_steps + 1));
    }
}

TEST_CASE("the system message is byte-identical to the persona across every call") {
    World world;
    auto backend = scripted(cooperative_rules(),
                            "Thought: check history\nAction: user_memory\nAction Input: films");
    const Persona persona = init_persona(UserId{"u1"}, make_profile("u1", "very specific"));
    run_episode(persona, "q", world.registry, world.context(), backend, {});
    const auto log = backend.call_log();
    REQUIRE(log.size() >= 3);
    for (const auto& record : log) {
        REQUIRE_FALSE(record.request.empty());
        CHECK(record.request.front().role == llm::Role::System);
        CHECK(record.request.front().content == persona.text);
    }
}

TEST_CASE("the first user message lists both tool descriptions") {
    World world;
    auto backend = scripted(cooperative_rules(),
                            "Thought: check history\nAction: user_memory\nAction Input: films");
    const Persona persona = init_persona(UserId{"u1"}, make_profile("u1", "p"));
    run_episode(persona, "the question", world.registry, world.context(), backend, {});
    const auto log = backend.call_log();
    const std::string& first_user = log.front().request.at(1).content;
    CHECK(first_user.find(prompts::kWikipediaToolDescription) != std::string::npos);
    CHECK(first_user.find(prompts::kUserMemoryToolDescription) != std::string::npos);
    CHECK(first_user.find("Question: the question") != std::string::npos);
}

TEST_CASE("episodes replay identically under the same fixture") {
    World world;
    const Persona persona = init_persona(UserId{"u1"}, make_profile("u1", "p"));
    auto run_once = [&] {
        auto backend =
            scripted(cooperative_rules(),
                     "Thought: check history\nAction: user_memory\nAction Input: films");
        return run_episode(persona, "q", world.registry, world.context(), backend, {});
    };
    const EpisodeResult first = run_once();
    const EpisodeResult second = run_once();
    CHECK(first.answer == second.answer);
    CHECK(first.trajectory == second.trajectory);
}

TEST_CASE("episode prompts never contain another user's buffer text") {
    World world;
    memory::EpisodicBuffer other = memory::make_buffer(UserId{"other"}, world.encoder);
    InteractionRecord secret;
    secret.query = "OTHER-USER-SECRET-QUERY";
    secret.ground_truth = "OTHER-USER-SECRET-ANSWER";
    secret.metadata.timestamp = 1;
    memory::append_interaction(other, secret, world.encoder);

    auto backend = scripted(cooperative_rules(),
                            "Thought: check history\nAction: user_memory\nAction Input: films");
    const Persona persona = init_persona(UserId{"u1"}, make_profile("u1", "p"));
    run_episode(persona, "q", world.registry, world.context(), backend, {});
    for (const auto& record : backend.call_log()) {
        const std::string rendered = llm::render_messages(record.request);
        CHECK(rendered.find("OTHER-USER-SECRET") == std::string::npos);
    }
}

TEST_CASE("trajectories round-trip through the JSONL log") {
    World world;
    auto backend = scripted(cooperative_rules(),
                            "Thought: check history\nAction: user_memory\nAction Input: films");
    const Persona persona = init_persona(UserId{"u1"}, make_profile("u1", "p"));
    const EpisodeResult result =
        run_episode(persona, "q", world.registry, world.context(), backend, {});

    const auto path = std::filesystem::temp_directory_path() /
                      ("pagent_traj_" + std::to_string(::getpid())) / "0.traj.jsonl";
    save_trajectory(result.trajectory, path);
    const Trajectory loaded = load_trajectory(path);
    CHECK(loaded.steps == result.trajectory.steps);
    CHECK(loaded.forced == result.trajectory.forced);
    CHECK(loaded.tool_rule_violated == result.trajectory.tool_rule_violated);
    std::filesystem::remove_all(path.parent_path());
}

TEST_CASE("personas persist with their history") {
    const auto root = std::filesystem::temp_directory_path() /
                      ("pagent_persona_" + std::to_string(::getpid()));
    std::filesystem::remove_all(root);
    Persona persona = init_persona(UserId{"u9"}, make_profile("u9", "p"));
    persona.history.push_back(persona.text);
    persona.text = "updated text";
    persona.version = 1;
    save_persona(persona, root);
    const auto loaded = load_persona(UserId{"u9"}, root);
    REQUIRE(loaded.has_value());
    CHECK(*loaded == persona);
    CHECK_FALSE(load_persona(UserId{"nobody"}, root).has_value());
    std::filesystem::remove_all(root);
}
