#pragma once

#include <span>
#include <string>
#include <vector>

namespace urbansense {

struct Provenance {
    std::string provider;
    std::string model;
    std::string input_digest;
};

/// Dense embedding with provenance. Construction rejects empty, non-finite and all-zero
/// vectors, so cosine similarity is always defined between two instances of equal dim.
class EmbeddingVector {
public:
    explicit EmbeddingVector(std::vector<double> values, Provenance provenance = {});

    std::span<const double> values() const noexcept { return values_; }
    std::size_t dim() const noexcept { return values_.size(); }
    const Provenance& provenance() const noexcept { return provenance_; }

    /// Copy with every component multiplied by `factor` (> 0); provenance kept.
    EmbeddingVector scaled(double factor) const;

    friend bool operator==(const EmbeddingVector& a, const EmbeddingVector& b) {
        return a.values_ == b.values_;
    }

private:
    std::vector<double> values_;
    Provenance provenance_;
};

}  // namespace urbansense
