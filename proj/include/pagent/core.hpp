#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace pagent {

// Stable per-user identifier. Non-empty, unique within a dataset.
struct UserId {
    std::string value;

    bool operator==(const UserId&) const = default;
    auto operator<=>(const UserId&) const = default;
};

struct Metadata {
    std::int64_t timestamp = 0; // epoch seconds, >= 0
    std::optional<std::string> session_id;
    std::map<std::string, std::string> extra;

    bool operator==(const Metadata&) const = default;
};

// One (query, ground-truth response, metadata) triple of a user's history.
struct InteractionRecord {
    std::string query;
    std::string ground_truth;
    Metadata metadata;

    bool operator==(const InteractionRecord&) const = default;
};

enum class TaskKind {
    CitationIdentification,
    MovieTagging,
    NewsCategorization,
    ProductRating,
};

std::string to_string(TaskKind task);
TaskKind task_from_string(const std::string& name); // throws FormatError
bool is_rating_task(TaskKind task);

// A parsed final answer. For classification tasks `label` is set, for
// rating tasks `rating` is set; neither set marks a parse failure.
struct Prediction {
    std::string raw_text;
    std::optional<std::string> label;
    std::optional<int> rating; // always in [1,5] when set

    bool failed() const { return !label.has_value() && !rating.has_value(); }

    bool operator==(const Prediction&) const = default;
};

// Extract the task label from a raw model answer.
//
// Classification: earliest case-insensitive occurrence of any label from
// `label_set` wins; ties at the same position go to the longer label, so
// "live action" beats "action" when both start there. Rating: the first
// integer token, clamped to [1,5]. Returns a failed Prediction when
// nothing matches.
Prediction parse_label(const std::string& raw_text, TaskKind task,
                       const std::vector<std::string>& label_set);

} // namespace pagent

template <>
struct std::hash<pagent::UserId> {
    std::size_t operator()(const pagent::UserId& id) const noexcept {
        return std::hash<std::string>{}(id.value);
    }
};
