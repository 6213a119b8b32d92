#include "pagent/analysis.hpp"

#include "pagent/errors.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>

namespace pagent::analysis {

std::set<std::string> token_set(const std::string& text) {
    std::set<std::string> tokens;
    std::string token;
    auto flush = [&] {
        if (!token.empty()) {
            tokens.insert(token);
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
    return tokens;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
    if (a.empty() && b.empty()) {
        return 1.0;
    }
    std::size_t intersection = 0;
    for (const auto& token : a) {
        if (b.count(token) > 0) {
            ++intersection;
        }
    }
    const std::size_t unions = a.size() + b.size() - intersection;
    return static_cast<double>(intersection) / static_cast<double>(unions);
}

SimilarityMatrix jaccard_matrix(const std::vector<agent::Persona>& personas) {
    SimilarityMatrix matrix;
    const std::size_t n = personas.size();
    matrix.values.assign(n, std::vector<double>(n, 0.0));

    std::vector<std::set<std::string>> tokens;
    tokens.reserve(n);
    for (const auto& persona : personas) {
        matrix.user_ids.push_back(persona.user);
        tokens.push_back(token_set(persona.text));
    }

    // Compute each pair once and mirror so the matrix is exactly symmetric.
    for (std::size_t i = 0; i < n; ++i) {
        matrix.values[i][i] = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double value = jaccard(tokens[i], tokens[j]);
            matrix.values[i][j] = value;
            matrix.values[j][i] = value;
            if (tokens[i].empty() && tokens[j].empty()) {
                matrix.empty_pairs.emplace_back(i, j);
            }
        }
    }
    return matrix;
}

void write_matrix_csv(const SimilarityMatrix& matrix, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "user_id";
    for (const auto& id : matrix.user_ids) {
        out << "," << id.value;
    }
    out << "\n";
    out << std::setprecision(10);
    for (std::size_t i = 0; i < matrix.user_ids.size(); ++i) {
        out << matrix.user_ids[i].value;
        for (double value : matrix.values[i]) {
            out << "," << value;
        }
        out << "\n";
    }
}

void export_embeddings(const std::vector<agent::Persona>& personas, const Encoder& encoder,
                       const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "user_id";
    for (std::size_t i = 0; i < encoder.dim(); ++i) {
        out << ",v" << i;
    }
    out << "\n";
    out << std::setprecision(17);
    for (const auto& persona : personas) {
        const Vector vec = encoder.embed(persona.text);
        out << persona.user.value;
        for (double value : vec) {
            out << "," << value;
        }
        out << "\n";
    }
}

} // namespace pagent::analysis
