#pragma once

#include "pagent/agent.hpp"
#include "pagent/embedding.hpp"

#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace pagent::analysis {

// Pairwise Jaccard similarity between persona token sets. Symmetric with
// a unit diagonal; a pair of empty token sets scores 1.0 and is flagged.
struct SimilarityMatrix {
    std::vector<UserId> user_ids;
    std::vector<std::vector<double>> values;
    std::vector<std::pair<std::size_t, std::size_t>> empty_pairs;
};

// Lowercase, split on non-alphanumerics, deduplicate.
std::set<std::string> token_set(const std::string& text);

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b);

SimilarityMatrix jaccard_matrix(const std::vector<agent::Persona>& personas);

void write_matrix_csv(const SimilarityMatrix& matrix, const std::filesystem::path& path);

// CSV with header "user_id,v0,...,v{dim-1}", one row per persona text
// embedded under `encoder`.
void export_embeddings(const std::vector<agent::Persona>& personas, const Encoder& encoder,
                       const std::filesystem::path& path);

} // namespace pagent::analysis
