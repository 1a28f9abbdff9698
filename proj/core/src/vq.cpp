#include "deepdgl/vq.hpp"

#include "deepdgl/errors.hpp"

#include <cmath>

namespace deepdgl::vq {

Codebook::Codebook(Matrix v)
    : vectors(std::move(v)), usage_counts(vectors.rows(), 0), steps_since_use(vectors.rows(), 0) {
    if (vectors.rows() < 1) throw ConfigError("codebook needs at least one row");
}

Matrix init_codebook(int codes, int dim, Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
    Matrix m(codes, dim);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

std::vector<int> nearest_codes(const Matrix& z, const Matrix& codebook) {
    if (z.cols() != codebook.cols()) {
        throw ShapeError("quantize: width " + std::to_string(z.cols()) + " != codebook dim " +
                         std::to_string(codebook.cols()));
    }
    std::vector<int> idx(static_cast<std::size_t>(z.rows()));
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        int best = 0;
        double best_d = (z.row(r) - codebook.row(0)).squaredNorm();
        for (Eigen::Index j = 1; j < codebook.rows(); ++j) {
            const double d = (z.row(r) - codebook.row(j)).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(j);
            }
        }
        idx[static_cast<std::size_t>(r)] = best;
    }
    return idx;
}

Quantized quantize(const Matrix& z, Codebook& book) {
    Quantized q;
    q.indices = nearest_codes(z, book.vectors);
    q.values.resize(z.rows(), z.cols());
    for (std::size_t r = 0; r < q.indices.size(); ++r) {
        q.values.row(static_cast<Eigen::Index>(r)) = book.vectors.row(q.indices[r]);
        ++book.usage_counts[q.indices[r]];
    }
    return q;
}

void advance_batch(Codebook& book, std::span<const int> indices) {
    std::vector<char> used(static_cast<std::size_t>(book.size()), 0);
    for (int i : indices) used[static_cast<std::size_t>(i)] = 1;
    for (int j = 0; j < book.size(); ++j) {
        book.steps_since_use[j] = used[j] ? 0 : book.steps_since_use[j] + 1;
    }
}

std::vector<int> reset_dead_codes(Codebook& book, const Matrix& recent_outputs, int patience, Rng& rng) {
    if (patience < 1) throw ConfigError("dead-code patience must be >= 1");
    std::vector<int> reset;
    for (int j = 0; j < book.size(); ++j) {
        if (book.steps_since_use[j] >= patience) reset.push_back(j);
    }
    if (reset.empty()) return reset;
    if (recent_outputs.rows() == 0) throw MaintenanceError("dead-code reset due but no recent encoder outputs");
    if (recent_outputs.cols() != book.dim()) throw ShapeError("recent outputs width != codebook dim");
    std::uniform_int_distribution<Eigen::Index> pick(0, recent_outputs.rows() - 1);
    for (int j : reset) {
        book.vectors.row(j) = recent_outputs.row(pick(rng));
        book.steps_since_use[j] = 0;
        book.usage_counts[j] = 0;
    }
    return reset;
}

ad::Var vq_loss(const ad::Var& z, const ad::Var& zq, double gamma, int batch) {
    if (z.rows() != zq.rows() || z.cols() != zq.cols()) throw ShapeError("vq_loss: shape mismatch");
    if (gamma < 0) throw ConfigError("vq_loss: gamma must be >= 0");
    const ad::Var codebook_term = ad::sum_squares(ad::sub(ad::detach(z), zq));
    const ad::Var commitment = ad::sum_squares(ad::sub(z, ad::detach(zq)));
    return ad::scale(ad::add(codebook_term, ad::scale(commitment, gamma)), 1.0 / batch);
}

QuantizedVar quantize(const ad::Var& z, const ad::Var& codebook) {
    QuantizedVar q;
    q.indices = z.graph()->frozen_indices(nearest_codes(z.value(), codebook.value()));
    q.zq = ad::gather_rows(codebook, q.indices);
    q.output = ad::straight_through(z, q.zq);
    return q;
}

}  // namespace deepdgl::vq
