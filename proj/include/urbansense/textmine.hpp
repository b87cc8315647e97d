#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace urbansense::textmine {

using Matrix = std::vector<std::vector<double>>;

/// Lowercase, split on non-alphanumeric ASCII, drop terms shorter than 2 characters and
/// English stopwords.
std::vector<std::string> tokenize(std::string_view text);

bool is_stopword(std::string_view term);

struct TfidfMatrix {
    std::vector<std::string> vocab;     // ascending
    Matrix rows;                        // one L2-normalised row per document
    std::vector<std::string> doc_ids;
    std::vector<bool> zero_rows;        // documents with no terms (row left all-zero)
};

/// tf = raw count, idf = ln((1 + N) / (1 + df)) + 1, rows L2-normalised.
/// Document ids default to "0", "1", ... when `doc_ids` is empty.
TfidfMatrix tfidf(const std::vector<std::vector<std::string>>& docs, std::vector<std::string> doc_ids = {});

struct SymmetricEigen {
    std::vector<double> values;   // descending
    Matrix vectors;               // vectors[i] pairs with values[i]
    int sweeps = 0;
};

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops below
/// 1e-12 * max(1, |A|_F).
SymmetricEigen jacobi_eigen(Matrix a);

struct PcaResult {
    std::vector<std::array<double, 2>> coords;
    std::array<double, 2> explained_variance{};
    std::array<std::vector<double>, 2> components;
    std::vector<std::string> warnings;
};

/// Projects rows onto the top two principal components of the (n - 1)-normalised
/// covariance. Each component is oriented so its largest-magnitude loading is positive.
/// When there are more columns than rows the thin n x n Gram matrix is decomposed instead.
PcaResult pca_2d(const Matrix& rows);

struct ClusterResult {
    std::vector<std::size_t> assignments;
    Matrix centroids;
    double inertia = 0.0;
    int iterations = 0;
    std::uint64_t seed = 0;
    std::vector<double> inertia_history;  // one entry per Lloyd iteration
};

/// k-means++ seeding then Lloyd iterations until the largest centroid shift < tol.
ClusterResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, int max_iter = 100,
                     double tol = 1e-6);

/// Runs seeds root, root+1, ..., root+count-1 and keeps the lowest inertia (first on ties).
ClusterResult kmeans_sweep(const Matrix& points, std::size_t k, std::uint64_t root_seed, std::size_t count,
                           int max_iter = 100, double tol = 1e-6);

double cluster_purity(const std::vector<std::size_t>& assignments, const std::vector<std::string>& labels);

struct TermCount {
    std::string term;
    std::size_t count = 0;
    friend bool operator==(const TermCount&, const TermCount&) = default;
};

/// Term counts over tokenized docs, by count descending then term ascending.
/// top_n == 0 keeps every term.
std::vector<TermCount> word_frequencies(const std::vector<std::string>& docs, std::size_t top_n);

struct ContrastFrequencies {
    std::vector<TermCount> primary;
    std::vector<TermCount> contrast;
    std::vector<std::string> dropped;  // generic terms removed from both, ascending
};

/// Drops every term that sits in the top `top_fraction` of both corpora's rankings,
/// then truncates each list to top_n.
ContrastFrequencies contrast_word_frequencies(const std::vector<std::string>& docs,
                                              const std::vector<std::string>& contrast_docs,
                                              std::size_t top_n, double top_fraction = 0.2);

}  // namespace urbansense::textmine
