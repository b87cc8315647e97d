#include "urbansense/textmine.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>

#include "urbansense/error.hpp"
#include "urbansense/log.hpp"
#include "urbansense/rng.hpp"

namespace urbansense::textmine {

namespace {

// NLTK English stopword list, lowercased, apostrophe forms removed (the tokenizer splits them).
constexpr std::string_view kStopwords[] = {
    "about", "above", "after", "again", "against", "ain", "all", "am", "an", "and", "any", "are",
    "aren", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "couldn", "did", "didn", "do", "does", "doesn", "doing", "don", "down", "during",
    "each", "few", "for", "from", "further", "had", "hadn", "has", "hasn", "have", "haven", "having",
    "he", "her", "here", "hers", "herself", "him", "himself", "his", "how", "if", "in", "into", "is",
    "isn", "it", "its", "itself", "just", "ll", "ma", "me", "mightn", "more", "most", "mustn", "my",
    "myself", "needn", "no", "nor", "not", "now", "of", "off", "on", "once", "only", "or", "other",
    "our", "ours", "ourselves", "out", "over", "own", "re", "same", "shan", "she", "should",
    "shouldn", "so", "some", "such", "than", "that", "the", "their", "theirs", "them", "themselves",
    "then", "there", "these", "they", "this", "those", "through", "to", "too", "under", "until",
    "up", "ve", "very", "was", "wasn", "we", "were", "weren", "what", "when", "where", "which",
    "while", "who", "whom", "why", "will", "with", "won", "wouldn", "you", "your", "yours",
    "yourself", "yourselves",
};

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

void orient(std::vector<double>& v) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (std::fabs(v[i]) > std::fabs(v[arg])) arg = i;
    if (!v.empty() && v[arg] < 0.0)
        for (double& x : v) x = -x;
}

std::vector<TermCount> ranked_counts(const std::vector<std::string>& docs) {
    std::map<std::string, std::size_t> counts;
    for (const auto& d : docs)
        for (auto& t : tokenize(d)) ++counts[std::move(t)];
    std::vector<TermCount> out;
    out.reserve(counts.size());
    for (auto& [term, n] : counts) out.push_back({term, n});
    std::stable_sort(out.begin(), out.end(), [](const TermCount& a, const TermCount& b) { return a.count > b.count; });
    return out;
}

}  // namespace

bool is_stopword(std::string_view term) {
    return std::binary_search(std::begin(kStopwords), std::end(kStopwords), term);
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (cur.size() >= 2 && !is_stopword(cur)) out.push_back(cur);
        cur.clear();
    };
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else {
            flush();
        }
    }
    flush();
    return out;
}

TfidfMatrix tfidf(const std::vector<std::vector<std::string>>& docs, std::vector<std::string> doc_ids) {
    if (docs.empty()) throw Error(ErrorKind::EmptyInput, "tfidf: no documents");
    if (doc_ids.empty()) {
        for (std::size_t i = 0; i < docs.size(); ++i) doc_ids.push_back(std::to_string(i));
    } else if (doc_ids.size() != docs.size()) {
        throw Error(ErrorKind::Validation, "tfidf: doc_ids length does not match docs");
    }

    std::map<std::string, std::size_t> doc_freq;
    for (const auto& doc : docs) {
        std::set<std::string> seen(doc.begin(), doc.end());
        for (const auto& t : seen) ++doc_freq[t];
    }
    TfidfMatrix m;
    m.doc_ids = std::move(doc_ids);
    std::unordered_map<std::string, std::size_t> column;
    std::vector<double> idf;
    const double n = static_cast<double>(docs.size());
    for (const auto& [term, df] : doc_freq) {
        column.emplace(term, m.vocab.size());
        m.vocab.push_back(term);
        idf.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(df))) + 1.0);
    }
    for (const auto& doc : docs) {
        std::vector<double> row(m.vocab.size(), 0.0);
        for (const auto& t : doc) row[column.at(t)] += 1.0;
        double norm = 0.0;
        for (std::size_t j = 0; j < row.size(); ++j) {
            row[j] *= idf[j];
            norm += row[j] * row[j];
        }
        norm = std::sqrt(norm);
        if (norm > 0.0)
            for (double& v : row) v /= norm;
        m.zero_rows.push_back(norm == 0.0);
        m.rows.push_back(std::move(row));
    }
    return m;
}

SymmetricEigen jacobi_eigen(Matrix a) {
    const std::size_t n = a.size();
    for (const auto& row : a)
        if (row.size() != n) throw Error(ErrorKind::Domain, "jacobi: matrix is not square");
    Matrix v(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;

    double frob = 0.0;
    for (const auto& row : a)
        for (double x : row) frob += x * x;
    const double threshold = 1e-12 * std::max(1.0, std::sqrt(frob));

    auto off_norm = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j) s += a[i][j] * a[i][j];
        return std::sqrt(s);
    };

    SymmetricEigen out;
    constexpr int kMaxSweeps = 100;
    while (off_norm() > threshold) {
        if (out.sweeps++ >= kMaxSweeps) throw Error(ErrorKind::Domain, "jacobi: did not converge");
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a[p][q];
                if (apq == 0.0) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k][p];
                    const double akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p][k];
                    const double aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v[k][p];
                    const double vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a[i][i] > a[j][j]; });
    for (std::size_t idx : order) {
        out.values.push_back(a[idx][idx]);
        std::vector<double> col(n);
        for (std::size_t k = 0; k < n; ++k) col[k] = v[k][idx];
        out.vectors.push_back(std::move(col));
    }
    return out;
}

PcaResult pca_2d(const Matrix& rows) {
    const std::size_t n = rows.size();
    if (n < 3) throw Error(ErrorKind::Domain, "pca_2d: needs at least 3 rows");
    const std::size_t d = rows.front().size();
    if (d < 2) throw Error(ErrorKind::Domain, "pca_2d: needs at least 2 columns");
    for (const auto& r : rows)
        if (r.size() != d) throw Error(ErrorKind::Domain, "pca_2d: ragged matrix");

    Matrix centered = rows;
    for (std::size_t j = 0; j < d; ++j) {
        double m = 0.0;
        for (const auto& r : rows) m += r[j];
        m /= static_cast<double>(n);
        for (auto& r : centered) r[j] -= m;
    }
    const double denom = static_cast<double>(n - 1);

    PcaResult out;
    std::array<std::vector<double>, 2> comps;
    std::array<double, 2> lambda{};
    if (d <= n) {
        Matrix cov(d, std::vector<double>(d, 0.0));
        for (const auto& r : centered)
            for (std::size_t i = 0; i < d; ++i) {
                if (r[i] == 0.0) continue;
                for (std::size_t j = i; j < d; ++j) cov[i][j] += r[i] * r[j];
            }
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = i; j < d; ++j) {
                cov[i][j] /= denom;
                cov[j][i] = cov[i][j];
            }
        auto eig = jacobi_eigen(std::move(cov));
        for (int c = 0; c < 2; ++c) {
            lambda[c] = eig.values[c];
            comps[c] = eig.vectors[c];
        }
    } else {
        Matrix gram(n, std::vector<double>(n, 0.0));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i; j < n; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < d; ++k) s += centered[i][k] * centered[j][k];
                gram[i][j] = gram[j][i] = s / denom;
            }
        auto eig = jacobi_eigen(std::move(gram));
        for (int c = 0; c < 2; ++c) {
            lambda[c] = eig.values[c];
            std::vector<double> comp(d, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = 0; k < d; ++k) comp[k] += centered[i][k] * eig.vectors[c][i];
            double norm = 0.0;
            for (double x : comp) norm += x * x;
            norm = std::sqrt(norm);
            if (norm > 0.0)
                for (double& x : comp) x /= norm;
            comps[c] = std::move(comp);
        }
    }

    double scale = 0.0;
    for (const auto& r : centered)
        for (double x : r) scale = std::max(scale, std::fabs(x));
    const double rank_eps = 1e-12 * std::max(1.0, scale * scale);
    for (int c = 0; c < 2; ++c) {
        if (lambda[c] <= rank_eps) {
            lambda[c] = std::max(lambda[c], 0.0);
            std::fill(comps[c].begin(), comps[c].end(), 0.0);
            out.warnings.push_back("pca_2d: component " + std::to_string(c + 1) + " has zero variance (rank < 2)");
            log::warn(out.warnings.back());
        }
        orient(comps[c]);
    }

    out.explained_variance = lambda;
    out.coords.reserve(n);
    for (const auto& r : centered) {
        std::array<double, 2> p{};
        for (int c = 0; c < 2; ++c)
            for (std::size_t k = 0; k < d; ++k) p[c] += r[k] * comps[c][k];
        out.coords.push_back(p);
    }
    out.components = std::move(comps);
    return out;
}

ClusterResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, int max_iter, double tol) {
    const std::size_t n = points.size();
    if (k == 0) throw Error(ErrorKind::Domain, "kmeans: k must be >= 1");
    if (k > n) throw Error(ErrorKind::Domain, "kmeans: k (" + std::to_string(k) + ") exceeds point count (" +
                                                  std::to_string(n) + ")");
    const std::size_t d = points.front().size();
    Pcg32 rng(seed, 0x6b6d65616e73ULL);

    // k-means++ seeding.
    Matrix centroids;
    centroids.push_back(points[rng.bounded(static_cast<std::uint32_t>(n))]);
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    while (centroids.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], squared_distance(points[i], centroids.back()));
            total += nearest[i];
        }
        std::size_t pick = n - 1;
        if (total <= 0.0) {
            pick = rng.bounded(static_cast<std::uint32_t>(n));
        } else {
            const double target = rng.uniform() * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += nearest[i];
                if (acc > target && nearest[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        centroids.push_back(points[pick]);
    }

    ClusterResult res;
    res.seed = seed;
    res.assignments.assign(n, 0);
    auto compute_inertia = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += squared_distance(points[i], centroids[res.assignments[i]]);
        return s;
    };

    for (int iter = 0; iter < max_iter; ++iter) {
        std::vector<std::size_t> sizes(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_d = squared_distance(points[i], centroids[0]);
            for (std::size_t c = 1; c < k; ++c) {
                const double dist = squared_distance(points[i], centroids[c]);
                if (dist < best_d) {
                    best_d = dist;
                    best = c;
                }
            }
            res.assignments[i] = best;
            ++sizes[best];
        }
        // Empty clusters take over the point farthest from its own centroid.
        for (std::size_t c = 0; c < k; ++c) {
            if (sizes[c] != 0) continue;
            std::size_t far = n;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (sizes[res.assignments[i]] <= 1) continue;
                const double dist = squared_distance(points[i], centroids[res.assignments[i]]);
                if (dist > far_d) {
                    far_d = dist;
                    far = i;
                }
            }
            if (far == n) break;
            --sizes[res.assignments[far]];
            res.assignments[far] = c;
            sizes[c] = 1;
            centroids[c] = points[far];
        }

        Matrix next(k, std::vector<double>(d, 0.0));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) next[res.assignments[i]][j] += points[i][j];
        double shift = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            if (sizes[c] == 0) {
                next[c] = centroids[c];
                continue;
            }
            for (double& x : next[c]) x /= static_cast<double>(sizes[c]);
            shift = std::max(shift, std::sqrt(squared_distance(next[c], centroids[c])));
        }
        centroids = std::move(next);
        res.iterations = iter + 1;
        res.inertia_history.push_back(compute_inertia());
        if (shift < tol) break;
    }
    res.centroids = std::move(centroids);
    res.inertia = res.inertia_history.empty() ? compute_inertia() : res.inertia_history.back();
    return res;
}

ClusterResult kmeans_sweep(const Matrix& points, std::size_t k, std::uint64_t root_seed, std::size_t count,
                           int max_iter, double tol) {
    if (count == 0) throw Error(ErrorKind::Domain, "kmeans_sweep: count must be >= 1");
    ClusterResult best = kmeans(points, k, root_seed, max_iter, tol);
    for (std::size_t i = 1; i < count; ++i) {
        auto r = kmeans(points, k, root_seed + i, max_iter, tol);
        if (r.inertia < best.inertia) best = std::move(r);
    }
    return best;
}

double cluster_purity(const std::vector<std::size_t>& assignments, const std::vector<std::string>& labels) {
    if (assignments.size() != labels.size())
        throw Error(ErrorKind::Validation, "cluster_purity: assignments and labels differ in length");
    if (assignments.empty()) throw Error(ErrorKind::EmptyInput, "cluster_purity: no documents");
    std::map<std::size_t, std::map<std::string, std::size_t>> table;
    for (std::size_t i = 0; i < labels.size(); ++i) ++table[assignments[i]][labels[i]];
    std::size_t hits = 0;
    for (const auto& [cluster, counts] : table) {
        std::size_t best = 0;
        for (const auto& [label, c] : counts) best = std::max(best, c);
        hits += best;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<TermCount> word_frequencies(const std::vector<std::string>& docs, std::size_t top_n) {
    auto out = ranked_counts(docs);
    if (top_n != 0 && out.size() > top_n) out.resize(top_n);
    return out;
}

ContrastFrequencies contrast_word_frequencies(const std::vector<std::string>& docs,
                                              const std::vector<std::string>& contrast_docs, std::size_t top_n,
                                              double top_fraction) {
    if (!(top_fraction >= 0.0 && top_fraction <= 1.0))
        throw Error(ErrorKind::Domain, "contrast_word_frequencies: top_fraction must lie in [0, 1]");
    auto a = ranked_counts(docs);
    auto b = ranked_counts(contrast_docs);
    auto top_terms = [&](const std::vector<TermCount>& v) {
        const auto keep = static_cast<std::size_t>(std::ceil(top_fraction * static_cast<double>(v.size())));
        std::set<std::string> s;
        for (std::size_t i = 0; i < std::min(keep, v.size()); ++i) s.insert(v[i].term);
        return s;
    };
    const auto ta = top_terms(a);
    const auto tb = top_terms(b);
    ContrastFrequencies out;
    std::set_intersection(ta.begin(), ta.end(), tb.begin(), tb.end(), std::back_inserter(out.dropped));
    const std::set<std::string> drop(out.dropped.begin(), out.dropped.end());
    auto filtered = [&](std::vector<TermCount> v) {
        std::erase_if(v, [&](const TermCount& t) { return drop.contains(t.term); });
        if (top_n != 0 && v.size() > top_n) v.resize(top_n);
        return v;
    };
    out.primary = filtered(std::move(a));
    out.contrast = filtered(std::move(b));
    return out;
}

}  // namespace urbansense::textmine
