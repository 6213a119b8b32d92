#include "pagent/core.hpp"

#include "pagent/errors.hpp"

#include <algorithm>
#include <cctype>

namespace pagent {

namespace {

std::string lowercase(const std::string& text) {
    std::string out = text;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

// First integer token in the text, saturated so huge digit runs still clamp.
std::optional<long long> first_integer_token(const std::string& text) {
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(text[i]))) {
            continue;
        }
        long long value = 0;
        while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
            if (value < 1000000) {
                value = value * 10 + (text[i] - '0');
            }
            ++i;
        }
        return value;
    }
    return std::nullopt;
}

} // namespace

std::string to_string(TaskKind task) {
    switch (task) {
    case TaskKind::CitationIdentification: return "citation_identification";
    case TaskKind::MovieTagging: return "movie_tagging";
    case TaskKind::NewsCategorization: return "news_categorization";
    case TaskKind::ProductRating: return "product_rating";
    }
    return "unknown";
}

TaskKind task_from_string(const std::string& name) {
    if (name == "citation_identification") return TaskKind::CitationIdentification;
    if (name == "movie_tagging") return TaskKind::MovieTagging;
    if (name == "news_categorization") return TaskKind::NewsCategorization;
    if (name == "product_rating") return TaskKind::ProductRating;
    throw FormatError("unknown task kind: " + name);
}

bool is_rating_task(TaskKind task) {
    return task == TaskKind::ProductRating;
}

Prediction parse_label(const std::string& raw_text, TaskKind task,
                       const std::vector<std::string>& label_set) {
    Prediction prediction;
    prediction.raw_text = raw_text;

    if (task == TaskKind::ProductRating) {
        if (auto value = first_integer_token(raw_text)) {
            prediction.rating = static_cast<int>(std::clamp<long long>(*value, 1, 5));
        }
        return prediction;
    }

    const std::string haystack = lowercase(raw_text);
    std::size_t best_pos = std::string::npos;
    std::size_t best_len = 0;
    for (const auto& label : label_set) {
        if (label.empty()) {
            continue;
        }
        const std::size_t pos = haystack.find(lowercase(label));
        if (pos == std::string::npos) {
            continue;
        }
        if (pos < best_pos || (pos == best_pos && label.size() > best_len)) {
            best_pos = pos;
            best_len = label.size();
            prediction.label = label;
        }
    }
    return prediction;
}

} // namespace pagent
