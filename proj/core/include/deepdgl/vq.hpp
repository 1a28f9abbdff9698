#pragma once

#include "deepdgl/autodiff.hpp"
#include "deepdgl/random.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace deepdgl::vq {

inline constexpr int kDefaultPatience = 100;

// Shared table of F global-pattern vectors plus usage bookkeeping.
struct Codebook {
    Matrix vectors;  // [F x d]
    std::vector<std::int64_t> usage_counts;
    std::vector<std::int64_t> steps_since_use;

    Codebook() = default;
    explicit Codebook(Matrix v);

    int size() const { return static_cast<int>(vectors.rows()); }
    int dim() const { return static_cast<int>(vectors.cols()); }
};

// Rows drawn from Normal(0, 1/sqrt(d)).
Matrix init_codebook(int codes, int dim, Rng& rng);

// Index of the Euclidean-nearest codebook row for every row of z; ties go
// to the lowest index.
std::vector<int> nearest_codes(const Matrix& z, const Matrix& codebook);

struct Quantized {
    Matrix values;
    std::vector<int> indices;
};

// Nearest-row lookup that also bumps the usage counters.
Quantized quantize(const Matrix& z, Codebook& book);

// Marks the end of one training batch: rows selected in `indices` restart
// their idle counter, every other row ages by one batch.
void advance_batch(Codebook& book, std::span<const int> indices);

// Rows idle for at least `patience` batches are replaced by uniformly drawn
// rows of `recent_outputs`; their counters restart. Returns the reset rows.
std::vector<int> reset_dead_codes(Codebook& book, const Matrix& recent_outputs, int patience, Rng& rng);

// ||sg(z) - zq||^2 + gamma * ||z - sg(zq)||^2 summed over steps and features
// and divided by `batch`. zq must be gathered from the codebook variable so
// that the first term reaches the codebook rows.
ad::Var vq_loss(const ad::Var& z, const ad::Var& zq, double gamma, int batch);

// Straight-through quantization in a graph: returns (output, zq) where
// output carries the codebook values and routes its gradient to z.
struct QuantizedVar {
    ad::Var output;
    ad::Var zq;
    std::vector<int> indices;
};
QuantizedVar quantize(const ad::Var& z, const ad::Var& codebook);

}  // namespace deepdgl::vq
