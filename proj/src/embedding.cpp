#include "urbansense/embedding.hpp"

#include <cmath>

#include "urbansense/error.hpp"

namespace urbansense {

EmbeddingVector::EmbeddingVector(std::vector<double> values, Provenance provenance)
    : values_(std::move(values)), provenance_(std::move(provenance)) {
    if (values_.empty()) throw Error(ErrorKind::Domain, "embedding: empty vector");
    bool any_nonzero = false;
    for (double v : values_) {
        if (!std::isfinite(v)) throw Error(ErrorKind::Domain, "embedding: non-finite component");
        any_nonzero = any_nonzero || v != 0.0;
    }
    if (!any_nonzero) throw Error(ErrorKind::Domain, "embedding: all-zero vector");
}

EmbeddingVector EmbeddingVector::scaled(double factor) const {
    if (!(factor > 0.0)) throw Error(ErrorKind::Domain, "embedding: scale factor must be > 0");
    std::vector<double> out(values_);
    for (double& v : out) v *= factor;
    return EmbeddingVector(std::move(out), provenance_);
}

}  // namespace urbansense
