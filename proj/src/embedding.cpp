#include "pagent/embedding.hpp"

#include "pagent/errors.hpp"

#include "httplib.h"
#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>

namespace pagent {

std::vector<Vector> Encoder::embed_batch(const std::vector<std::string>& texts) const {
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (const auto& text : texts) {
        out.push_back(embed(text));
    }
    return out;
}

namespace {

// Seeded FNV-1a over the token bytes. Fixed here so stored embeddings stay
// comparable across platforms and rebuilds.
std::uint64_t token_hash(const std::string& token, std::uint64_t seed) {
    std::uint64_t h = 14695981039346656037ull ^ (seed * 0x9E3779B97F4A7C15ull);
    for (unsigned char c : token) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace

HashedTfIdfEncoder::HashedTfIdfEncoder(std::size_t dim, std::uint64_t seed)
    : dim_(dim), seed_(seed) {
    if (dim_ == 0) {
        throw ConfigError("encoder dimension must be positive");
    }
}

std::string HashedTfIdfEncoder::fingerprint() const {
    std::ostringstream out;
    out << "hashed_tfidf/dim=" << dim_ << "/seed=" << seed_;
    return out.str();
}

Vector HashedTfIdfEncoder::embed(const std::string& text) const {
    Vector vec(dim_, 0.0);
    std::string token;
    auto flush = [&] {
        if (!token.empty()) {
            vec[token_hash(token, seed_) % dim_] += 1.0;
            token.clear();
        }
    };
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            token.push_back(static_cast<char>(std::tolower(c)));
        } else {
            flush();
        }
    }
    flush();

    const double norm = std::sqrt(std::inner_product(vec.begin(), vec.end(), vec.begin(), 0.0));
    if (norm > 0.0) {
        for (double& v : vec) {
            v /= norm;
        }
    }
    return vec;
}

ExternalEncoder::ExternalEncoder(ExternalEncoderConfig config) : config_(std::move(config)) {
    if (config_.dim == 0) {
        throw ConfigError("external encoder requires a configured dimension");
    }
}

std::string ExternalEncoder::fingerprint() const {
    std::ostringstream out;
    out << "external/" << config_.base_url << config_.path << "/dim=" << config_.dim;
    return out.str();
}

Vector ExternalEncoder::embed(const std::string& text) const {
    return embed_batch({text}).front();
}

std::vector<Vector> ExternalEncoder::embed_batch(const std::vector<std::string>& texts) const {
    if (texts.empty()) {
        return {};
    }
    httplib::Client client(config_.base_url);
    client.set_connection_timeout(config_.timeout_seconds, 0);
    client.set_read_timeout(config_.timeout_seconds, 0);
    httplib::Headers headers;
    if (!config_.auth_token.empty()) {
        headers.emplace("Authorization", "Bearer " + config_.auth_token);
    }

    nlohmann::json body;
    body["texts"] = texts;
    auto res = client.Post(config_.path, headers, body.dump(), "application/json");
    if (!res) {
        throw ExternalEncoderError("embedding endpoint unreachable: " +
                                   httplib::to_string(res.error()));
    }
    if (res->status != 200) {
        throw ExternalEncoderError("embedding endpoint returned HTTP " +
                                   std::to_string(res->status) + ": " + res->body);
    }

    nlohmann::json reply;
    try {
        reply = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
        throw ExternalEncoderError(std::string("embedding reply is not JSON: ") + e.what());
    }
    if (!reply.contains("vectors") || !reply["vectors"].is_array() ||
        reply["vectors"].size() != texts.size()) {
        throw ExternalEncoderError("embedding reply missing 'vectors' for every input");
    }

    std::vector<Vector> out;
    out.reserve(texts.size());
    for (const auto& row : reply["vectors"]) {
        Vector vec = row.get<Vector>();
        if (vec.size() != config_.dim) {
            throw ExternalEncoderError("embedding reply has dimension " +
                                       std::to_string(vec.size()) + ", expected " +
                                       std::to_string(config_.dim));
        }
        out.push_back(std::move(vec));
    }
    return out;
}

double cosine_similarity(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) {
        throw DimensionMismatch("cosine_similarity: " + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()));
    }
    double dot = 0.0;
    double norm_a = 0.0;
    double norm_b = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        norm_a += a[i] * a[i];
        norm_b += b[i] * b[i];
    }
    if (norm_a == 0.0 || norm_b == 0.0) {
        return 0.0;
    }
    return dot / (std::sqrt(norm_a) * std::sqrt(norm_b));
}

std::vector<std::size_t> top_k(const Vector& query, const std::vector<Vector>& corpus,
                               std::size_t k) {
    std::vector<std::size_t> indices(corpus.size());
    std::iota(indices.begin(), indices.end(), 0);

    std::vector<double> sims(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        sims[i] = cosine_similarity(query, corpus[i]);
    }
    std::stable_sort(indices.begin(), indices.end(), [&](std::size_t lhs, std::size_t rhs) {
        if (sims[lhs] != sims[rhs]) {
            return sims[lhs] > sims[rhs];
        }
        return lhs < rhs;
    });

    if (indices.size() > k) {
        indices.resize(k);
    }
    return indices;
}

} // namespace pagent
