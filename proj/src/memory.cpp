#include "pagent/memory.hpp"

#include "pagent/errors.hpp"
#include "pagent/prompts.hpp"

#include "json.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace pagent::memory {

using nlohmann::json;

SummarizationPrompt::SummarizationPrompt(std::string text) : template_text(std::move(text)) {
    if (template_text.find("[Task]") == std::string::npos ||
        template_text.find("[History]") == std::string::npos) {
        throw ConfigError("summarization template must contain [Task] and [History]");
    }
}

SummarizationPrompt SummarizationPrompt::default_prompt() {
    return SummarizationPrompt(prompts::kDefaultSummarizationTemplate);
}

EpisodicBuffer make_buffer(UserId user, const Encoder& encoder) {
    EpisodicBuffer buffer;
    buffer.user = std::move(user);
    buffer.encoder_fingerprint = encoder.fingerprint();
    return buffer;
}

std::string record_embed_text(const InteractionRecord& record) {
    return "Q: " + record.query + "\nA: " + record.ground_truth;
}

std::string render_record(const InteractionRecord& record) {
    return "Past Q: " + record.query + "\nUser's answer: " + record.ground_truth;
}

std::string render_records(const std::vector<InteractionRecord>& records) {
    std::string out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (i > 0) {
            out += "\n\n";
        }
        out += render_record(records[i]);
    }
    return out;
}

void append_interaction(EpisodicBuffer& buffer, InteractionRecord record,
                        const Encoder& encoder) {
    if (record.query.empty() || record.ground_truth.empty()) {
        throw FormatError("interaction record needs non-empty query and ground truth");
    }
    if (record.metadata.timestamp < 0) {
        throw FormatError("interaction record timestamp must be >= 0");
    }
    if (buffer.encoder_fingerprint != encoder.fingerprint()) {
        throw EncoderMismatch("buffer was built with " + buffer.encoder_fingerprint +
                              ", got " + encoder.fingerprint());
    }

    Vector embedding = encoder.embed(record_embed_text(record));
    auto pos = std::upper_bound(buffer.records.begin(), buffer.records.end(), record,
                                [](const InteractionRecord& lhs, const InteractionRecord& rhs) {
                                    return lhs.metadata.timestamp < rhs.metadata.timestamp;
                                });
    const auto index = static_cast<std::size_t>(pos - buffer.records.begin());
    buffer.records.insert(pos, std::move(record));
    buffer.embeddings.insert(buffer.embeddings.begin() + static_cast<std::ptrdiff_t>(index),
                             std::move(embedding));
}

std::vector<std::size_t> retrieve_indices(const EpisodicBuffer& buffer,
                                          const std::string& query, std::size_t k,
                                          const Encoder& encoder,
                                          std::optional<std::size_t> exclude_index) {
    if (buffer.empty()) {
        throw EmptyBuffer("retrieve on empty buffer for user " + buffer.user.value);
    }
    if (buffer.encoder_fingerprint != encoder.fingerprint()) {
        throw EncoderMismatch("buffer was built with " + buffer.encoder_fingerprint +
                              ", got " + encoder.fingerprint());
    }

    const Vector query_vec = encoder.embed(query);
    // Ranking is a total order, so the top k of the corpus minus one
    // element is the top k+1 of the full corpus with that element dropped.
    const std::size_t want = exclude_index ? k + 1 : k;
    std::vector<std::size_t> ranked = top_k(query_vec, buffer.embeddings, want);
    if (exclude_index) {
        std::erase(ranked, *exclude_index);
        if (ranked.size() > k) {
            ranked.resize(k);
        }
    }
    return ranked;
}

std::vector<InteractionRecord> retrieve(const EpisodicBuffer& buffer, const std::string& query,
                                        std::size_t k, const Encoder& encoder,
                                        std::optional<std::size_t> exclude_index) {
    std::vector<InteractionRecord> out;
    for (std::size_t index : retrieve_indices(buffer, query, k, encoder, exclude_index)) {
        out.push_back(buffer.records[index]);
    }
    return out;
}

SemanticProfile summarize_profile(const EpisodicBuffer& buffer, TaskKind task,
                                  const SummarizationPrompt& prompt,
                                  llm::ChatBackend& backend,
                                  const SummarizationOptions& options) {
    if (buffer.empty()) {
        throw EmptyBuffer("cannot summarize empty buffer for user " + buffer.user.value);
    }

    std::string history = render_records(buffer.records);
    if (history.size() > options.char_budget &&
        buffer.size() > options.max_records_over_budget) {
        std::vector<InteractionRecord> recent(
            buffer.records.end() - static_cast<std::ptrdiff_t>(options.max_records_over_budget),
            buffer.records.end());
        history = render_records(recent);
    }

    std::string rendered = prompts::substitute(prompt.template_text, "[Task]", to_string(task));
    rendered = prompts::substitute(rendered, "[History]", history);

    const std::string reply =
        backend.complete({{llm::Role::User, rendered}}, options.params);
    if (reply.empty()) {
        throw EmptyCompletion("summarization returned an empty profile for user " +
                              buffer.user.value);
    }

    SemanticProfile profile;
    profile.user = buffer.user;
    profile.text = reply;
    profile.source_count = buffer.size();
    profile.created_at = buffer.records.back().metadata.timestamp;
    profile.task = task;
    return profile;
}

namespace {

json record_to_json(const InteractionRecord& record) {
    json line;
    line["query"] = record.query;
    line["ground_truth"] = record.ground_truth;
    line["timestamp"] = record.metadata.timestamp;
    line["session_id"] =
        record.metadata.session_id ? json(*record.metadata.session_id) : json(nullptr);
    line["extra"] = record.metadata.extra;
    return line;
}

InteractionRecord record_from_json(const json& line, const std::string& where) {
    try {
        InteractionRecord record;
        record.query = line.at("query").get<std::string>();
        record.ground_truth = line.at("ground_truth").get<std::string>();
        record.metadata.timestamp = line.at("timestamp").get<std::int64_t>();
        if (line.contains("session_id") && !line["session_id"].is_null()) {
            record.metadata.session_id = line["session_id"].get<std::string>();
        }
        if (line.contains("extra")) {
            record.metadata.extra =
                line["extra"].get<std::map<std::string, std::string>>();
        }
        return record;
    } catch (const json::exception& e) {
        throw FormatError(where + ": " + e.what());
    }
}

bool filesystem_safe(const std::string& id) {
    if (id.empty()) {
        return false;
    }
    return std::all_of(id.begin(), id.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '_' || c == '-' || c == '.';
    });
}

} // namespace

UserStore::UserStore(std::filesystem::path store_root) : root_(std::move(store_root)) {}

std::filesystem::path UserStore::user_dir(const UserId& user) const {
    if (!filesystem_safe(user.value)) {
        throw IoError("user id is not filesystem-safe: '" + user.value + "'");
    }
    return root_ / user.value;
}

void UserStore::save_buffer(const EpisodicBuffer& buffer) const {
    const auto dir = user_dir(buffer.user);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
    }

    {
        std::ofstream out(dir / "episodic.jsonl", std::ios::trunc);
        if (!out) {
            throw IoError("cannot write " + (dir / "episodic.jsonl").string());
        }
        for (const auto& record : buffer.records) {
            out << record_to_json(record).dump() << "\n";
        }
    }

    // profile.json carries the embeddings and fingerprint alongside any
    // existing profile, so keep the profile object when one is present.
    json doc;
    const auto profile_path = dir / "profile.json";
    if (std::filesystem::exists(profile_path)) {
        std::ifstream in(profile_path);
        try {
            in >> doc;
        } catch (const json::exception&) {
            doc = json::object();
        }
    }
    doc["format_version"] = 1;
    doc["user_id"] = buffer.user.value;
    doc["encoder_fingerprint"] = buffer.encoder_fingerprint;
    doc["embeddings"] = buffer.embeddings;
    if (!doc.contains("profile")) {
        doc["profile"] = nullptr;
    }
    std::ofstream out(profile_path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + profile_path.string());
    }
    out << doc.dump(2) << "\n";
}

EpisodicBuffer UserStore::load_buffer(const UserId& user) const {
    const auto dir = user_dir(user);
    const auto records_path = dir / "episodic.jsonl";
    const auto profile_path = dir / "profile.json";

    std::ifstream records_in(records_path);
    if (!records_in) {
        throw IoError("cannot open " + records_path.string());
    }

    EpisodicBuffer buffer;
    buffer.user = user;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(records_in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        json parsed;
        try {
            parsed = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(records_path.string() + ":" + std::to_string(line_no) + ": " +
                              e.what());
        }
        buffer.records.push_back(record_from_json(
            parsed, records_path.string() + ":" + std::to_string(line_no)));
    }
    for (std::size_t i = 1; i < buffer.records.size(); ++i) {
        if (buffer.records[i - 1].metadata.timestamp > buffer.records[i].metadata.timestamp) {
            throw FormatError(records_path.string() + ": records out of timestamp order at line " +
                              std::to_string(i + 1));
        }
    }

    std::ifstream profile_in(profile_path);
    if (!profile_in) {
        throw IoError("cannot open " + profile_path.string());
    }
    json doc;
    try {
        profile_in >> doc;
    } catch (const json::exception& e) {
        throw FormatError(profile_path.string() + ": " + e.what());
    }
    if (doc.value("format_version", 0) != 1) {
        throw FormatError(profile_path.string() + ": unsupported format_version");
    }
    buffer.encoder_fingerprint = doc.value("encoder_fingerprint", "");

    const auto& embeddings = doc.at("embeddings");
    if (!embeddings.is_array() || embeddings.size() != buffer.records.size()) {
        throw FormatError(profile_path.string() + ": expected " +
                          std::to_string(buffer.records.size()) + " embeddings, found " +
                          std::to_string(embeddings.size()));
    }
    std::size_t expected_dim = 0;
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        Vector vec;
        try {
            vec = embeddings[i].get<Vector>();
        } catch (const json::exception& e) {
            throw FormatError(profile_path.string() + ": embedding for record " +
                              std::to_string(i) + " is malformed: " + e.what());
        }
        if (i == 0) {
            expected_dim = vec.size();
        } else if (vec.size() != expected_dim) {
            throw FormatError(profile_path.string() + ": embedding for record " +
                              std::to_string(i) + " has length " + std::to_string(vec.size()) +
                              ", expected " + std::to_string(expected_dim));
        }
        buffer.embeddings.push_back(std::move(vec));
    }
    return buffer;
}

void UserStore::save_profile(const SemanticProfile& profile) const {
    const auto dir = user_dir(profile.user);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
    }

    const auto profile_path = dir / "profile.json";
    json doc;
    if (std::filesystem::exists(profile_path)) {
        std::ifstream in(profile_path);
        try {
            in >> doc;
        } catch (const json::exception&) {
            doc = json::object();
        }
    }
    doc["format_version"] = 1;
    doc["user_id"] = profile.user.value;
    if (!doc.contains("encoder_fingerprint")) {
        doc["encoder_fingerprint"] = "";
    }
    if (!doc.contains("embeddings")) {
        doc["embeddings"] = json::array();
    }
    doc["profile"] = {{"text", profile.text},
                      {"source_count", profile.source_count},
                      {"created_at", profile.created_at},
                      {"task", to_string(profile.task)}};
    std::ofstream out(profile_path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + profile_path.string());
    }
    out << doc.dump(2) << "\n";
}

std::optional<SemanticProfile> UserStore::load_profile(const UserId& user) const {
    const auto profile_path = user_dir(user) / "profile.json";
    std::ifstream in(profile_path);
    if (!in) {
        return std::nullopt;
    }
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw FormatError(profile_path.string() + ": " + e.what());
    }
    if (!doc.contains("profile") || doc["profile"].is_null()) {
        return std::nullopt;
    }
    try {
        const auto& body = doc["profile"];
        SemanticProfile profile;
        profile.user = user;
        profile.text = body.at("text").get<std::string>();
        profile.source_count = body.at("source_count").get<std::size_t>();
        profile.created_at = body.at("created_at").get<std::int64_t>();
        profile.task = task_from_string(body.at("task").get<std::string>());
        return profile;
    } catch (const json::exception& e) {
        throw FormatError(profile_path.string() + ": " + e.what());
    }
}

std::vector<UserId> UserStore::list_users() const {
    std::vector<UserId> users;
    if (!std::filesystem::exists(root_)) {
        return users;
    }
    for (const auto& entry : std::filesystem::directory_iterator(root_)) {
        if (entry.is_directory()) {
            users.push_back(UserId{entry.path().filename().string()});
        }
    }
    std::sort(users.begin(), users.end());
    return users;
}

} // namespace pagent::memory
