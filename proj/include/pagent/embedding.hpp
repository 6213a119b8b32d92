#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace pagent {

using Vector = std::vector<double>;

// Text encoder backing episodic retrieval. Implementations must be
// read-only after construction so embed() is safe from any thread.
class Encoder {
public:
    virtual ~Encoder() = default;

    virtual std::size_t dim() const = 0;

    // Identifies the encoder configuration; buffers remember it so stored
    // embeddings are never mixed across encoders.
    virtual std::string fingerprint() const = 0;

    virtual Vector embed(const std::string& text) const = 0;

    virtual std::vector<Vector> embed_batch(const std::vector<std::string>& texts) const;
};

// Deterministic hashed TF encoder: lowercase, split on non-alphanumerics,
// hash each token to a bucket, weight by term frequency, L2-normalize.
// Same text and seed always produce the same vector.
class HashedTfIdfEncoder final : public Encoder {
public:
    explicit HashedTfIdfEncoder(std::size_t dim = 256, std::uint64_t seed = 42);

    std::size_t dim() const override { return dim_; }
    std::string fingerprint() const override;
    Vector embed(const std::string& text) const override;

private:
    std::size_t dim_;
    std::uint64_t seed_;
};

// Remote embedding endpoint: POST {"texts": [...]} -> {"vectors": [[...], ...]}.
struct ExternalEncoderConfig {
    std::string base_url;           // e.g. "http://localhost:8080"
    std::string path = "/embed";
    std::string auth_token;         // sent as "Authorization: Bearer <token>" when set
    std::size_t dim = 0;
    int timeout_seconds = 30;
};

class ExternalEncoder final : public Encoder {
public:
    explicit ExternalEncoder(ExternalEncoderConfig config);

    std::size_t dim() const override { return config_.dim; }
    std::string fingerprint() const override;
    Vector embed(const std::string& text) const override;
    std::vector<Vector> embed_batch(const std::vector<std::string>& texts) const override;

private:
    ExternalEncoderConfig config_;
};

// dot(a,b) / (|a||b|); 0 when either norm is 0. Throws DimensionMismatch.
double cosine_similarity(const Vector& a, const Vector& b);

// Indices of the min(k, |corpus|) vectors most similar to `query`, ordered
// by descending cosine similarity; ties go to the smaller index.
std::vector<std::size_t> top_k(const Vector& query, const std::vector<Vector>& corpus,
                               std::size_t k);

} // namespace pagent
