#pragma once

#include <string>

namespace pagent::prompts {

// Persona system-prompt skeleton; "[Initial Semantic Memory]" is replaced
// with the user's semantic profile at version 0.
inline constexpr const char* kPersonaInitTemplate =
    "You are a helpful personalized assistant. Take more than two actions to infer the "
    "user preference and answer the question. User summary: [Initial Semantic Memory]\n"
    "\n"
    "STRICT RULES: when using tools, always:\n"
    "1. Think step-by-step about what information you need.\n"
    "2. MUST use at least TWO tools to answer the question.\n"
    "3. Use tools precisely and deliberately and try to get the most accurate information "
    "from different tools.\n"
    "4. Provide clear, concise responses. Do not give explanation in the final answer.\n";

// Critic prompt producing one textual gradient per simulated interaction.
inline constexpr const char* kCriticTemplate =
    "You are a meticulous and critical evaluator of personalized AI agent responses.\n"
    "\n"
    "Analyze the following and give the feedback on how to improve the system prompt to "
    "align with the user's preferences.\n"
    "\n"
    "Question: [Question]\n"
    "Expected Answer: [Ground Truth]\n"
    "Agent Response: [Response]\n"
    "\n"
    "Your feedback should focus on how to adjust the persona system prompt to tailor the "
    "agent's responses to the individual user's unique characteristics. Make sure the "
    "feedback is concise and and clear.\n"
    "\n"
    "Tips:\n"
    "1. Explain on how to improve the search keywords of tools for this user.\n"
    "2. Take the user's prior interactions, preferences, and any personalization aspects "
    "into consideration.\n"
    "3. Provide explicit description for user profile and preferences that is not "
    "specific to this task.\n"
    "\n"
    "Feedback:\n";

// Rewrites the persona from the aggregated critic feedback.
inline constexpr const char* kUpdateTemplate =
    "You are a prompt engineering assistant tasked with refining the personal agent "
    "system prompts for improved user preference alignment.\n"
    "\n"
    "Current system prompt: [Current Persona]\n"
    "\n"
    "Provided Feedback: [Aggregated Feedback]\n"
    "\n"
    "Based on the feedback above, generate an updated system prompt that explicitly "
    "highlights the user's unique preferences.\n"
    "Ensure that the prompt instructs the agent to align its responses with the user's "
    "preferences, including detailed user profile or preferences.\n"
    "Please maintain a helpful and clear tone in the system prompt.\n"
    "\n"
    "New system prompt:\n";

inline constexpr const char* kWikipediaToolDescription =
    "Use this tool to get a brief summary from Wikipedia about a specific topic.\n"
    "Best for: getting general background information, learning basic facts, and "
    "understanding historical events or people.\n"
    "Input: a clear, specific topic name (e.g., 'Albert Einstein', 'World War II').\n"
    "Output: returns a concise Wikipedia summary.\n"
    "Note: use precise topic names for better results.";

inline constexpr const char* kUserMemoryToolDescription =
    "Retrieve top-k relevant items/histories from the user memory using RAG "
    "(Retrieval-Augmented Generation).\n"
    "Best for: finding detailed information on related items, answering specific "
    "questions from personal data, and incorporating user preferences into the final "
    "answer.\n"
    "Input: a specific search query or question about the content.\n"
    "Output: relevant interaction histories from the user memory.\n"
    "Note: more specific queries yield more accurate results.\n"
    "Requirement: must use this tool at least once to answer the question.";

// Default task-based summarization prompt used to build semantic profiles.
inline constexpr const char* kDefaultSummarizationTemplate =
    "Summarize this user's stable preferences and characteristics for the [Task] task, "
    "based on the interaction history below. Focus on recurring interests, style, and "
    "answer tendencies. Reply with a concise user profile.\n"
    "\n"
    "Interaction history:\n"
    "[History]\n"
    "\n"
    "User profile:\n";

// Replaces every occurrence of `placeholder` in `text` with `value`.
std::string substitute(std::string text, const std::string& placeholder,
                       const std::string& value);

} // namespace pagent::prompts
