#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "pagent/core.hpp"
#include "pagent/errors.hpp"

#include <algorithm>
#include <cctype>
#include <random>
#include <string>
#include <vector>

using namespace pagent;

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

// Independent oracle: scan every position of the text against every label
// and pick the (position, longest-label) winner.
std::optional<std::string> oracle_match(const std::string& raw,
                                        const std::vector<std::string>& labels) {
    const std::string text = lower(raw);
    std::optional<std::string> best;
    std::size_t best_pos = std::string::npos;
    std::size_t best_len = 0;
    for (std::size_t pos = 0; pos < text.size(); ++pos) {
        for (const auto& label : labels) {
            const std::string needle = lower(label);
            if (needle.empty() || pos + needle.size() > text.size()) {
                continue;
            }
            if (text.compare(pos, needle.size(), needle) == 0) {
                if (pos < best_pos || (pos == best_pos && needle.size() > best_len)) {
                    best_pos = pos;
                    best_len = needle.size();
                    best = label;
                }
            }
        }
    }
    return best;
}

const std::vector<std::string> kMovieLabels = {"classic", "dystopia", "action"};

} // namespace

TEST_CASE("parse_label echoes an exact citation label") {
    const auto p = parse_label("[1]", TaskKind::CitationIdentification, {"[1]", "[2]"});
    REQUIRE(p.label.has_value());
    CHECK(*p.label == "[1]");
    CHECK_FALSE(p.rating.has_value());
}

TEST_CASE("parse_label clamps out-of-range ratings") {
    const auto p = parse_label("I'd rate this 7/5, amazing", TaskKind::ProductRating, {});
    REQUIRE(p.rating.has_value());
    CHECK(*p.rating == 5);
}

TEST_CASE("parse_label finds labels inside prose") {
    const auto p = parse_label("the tag is classic", TaskKind::MovieTagging, kMovieLabels);
    REQUIRE(p.label.has_value());
    CHECK(*p.label == "classic");
    CHECK(*p.label == *oracle_match("the tag is classic", kMovieLabels));
}

TEST_CASE("parse_label matches the oracle on generated answers") {
    std::mt19937_64 rng(7);
    const std::vector<std::string> labels = {"classic", "dystopia", "action", "live action",
                                             "sci-fi", "comedy"};
    const std::vector<std::string> fillers = {"the tag is ",  "maybe ",       "",
                                              "answer: ",     "i think it's ", "LIVE ",
                                              "inaction and "};
    for (int trial = 0; trial < 500; ++trial) {
        std::string text = fillers[rng() % fillers.size()];
        for (std::size_t i = 0, n = rng() % 3; i < n; ++i) {
            text += labels[rng() % labels.size()];
            text += (rng() % 2 == 0) ? " " : ", ";
        }
        if (rng() % 4 == 0) {
            text += "nothing relevant";
        }
        const auto got = parse_label(text, TaskKind::MovieTagging, labels).label;
        const auto want = oracle_match(text, labels);
        CAPTURE(text);
        CHECK(got == want);
    }
}

TEST_CASE("longer labels win over their substrings at the same spot") {
    const std::vector<std::string> labels = {"action", "live action"};
    const auto p = parse_label("that was live action footage", TaskKind::MovieTagging, labels);
    REQUIRE(p.label.has_value());
    CHECK(*p.label == "live action");
}

TEST_CASE("earliest occurrence wins regardless of label-set order") {
    const std::vector<std::string> labels = {"dystopia", "classic"};
    const auto p =
        parse_label("classic first, dystopia later", TaskKind::MovieTagging, labels);
    REQUIRE(p.label.has_value());
    CHECK(*p.label == "classic");
}

TEST_CASE("parse_label is case-insensitive") {
    const auto p = parse_label("The Tag Is CLASSIC", TaskKind::MovieTagging, kMovieLabels);
    REQUIRE(p.label.has_value());
    CHECK(*p.label == "classic");
}

TEST_CASE("no label token yields a parse failure") {
    const auto p = parse_label("no idea, sorry", TaskKind::MovieTagging, kMovieLabels);
    CHECK(p.failed());
    const auto r = parse_label("no digits here", TaskKind::ProductRating, {});
    CHECK(r.failed());
}

TEST_CASE("parse_label is deterministic") {
    for (int i = 0; i < 50; ++i) {
        const auto a = parse_label("dystopia, definitely", TaskKind::MovieTagging, kMovieLabels);
        const auto b = parse_label("dystopia, definitely", TaskKind::MovieTagging, kMovieLabels);
        CHECK(a == b);
    }
}

TEST_CASE("ratings always land in 1..5 or fail") {
    std::mt19937_64 rng(11);
    const std::vector<std::string> snippets = {"0", "1", "3", "5", "6", "42", "123456789012345",
                                               "stars", "x"};
    for (int trial = 0; trial < 300; ++trial) {
        std::string text;
        for (std::size_t i = 0, n = rng() % 4; i < n; ++i) {
            text += snippets[rng() % snippets.size()];
            text += " ";
        }
        const auto p = parse_label(text, TaskKind::ProductRating, {});
        if (p.rating) {
            CHECK(*p.rating >= 1);
            CHECK(*p.rating <= 5);
        } else {
            CHECK(p.failed());
        }
    }
}

TEST_CASE("every label round-trips through parse_label verbatim") {
    const std::vector<std::string> labels = {"classic", "dystopia", "action", "live action",
                                             "[1]", "[2]", "sci-fi"};
    for (const auto& label : labels) {
        const auto p = parse_label(label, TaskKind::MovieTagging, labels);
        REQUIRE(p.label.has_value());
        // An exact echo must parse to a label that covers the same text.
        CHECK(lower(*p.label) == lower(label));
    }
}

TEST_CASE("rating boundary values") {
    CHECK(*parse_label("0", TaskKind::ProductRating, {}).rating == 1);
    CHECK(*parse_label("1", TaskKind::ProductRating, {}).rating == 1);
    CHECK(*parse_label("5", TaskKind::ProductRating, {}).rating == 5);
    CHECK(*parse_label("I give it 3 stars", TaskKind::ProductRating, {}).rating == 3);
    CHECK(*parse_label("99999999999999999999", TaskKind::ProductRating, {}).rating == 5);
}

TEST_CASE("task kind names round-trip") {
    for (auto task : {TaskKind::CitationIdentification, TaskKind::MovieTagging,
                      TaskKind::NewsCategorization, TaskKind::ProductRating}) {
        CHECK(task_from_string(to_string(task)) == task);
    }
    CHECK_THROWS_AS(task_from_string("poetry"), FormatError);
}
