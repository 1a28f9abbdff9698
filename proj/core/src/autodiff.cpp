#include "deepdgl/autodiff.hpp"

#include "deepdgl/errors.hpp"
#include "deepdgl/parameters.hpp"

#include <cmath>
#include <limits>

namespace deepdgl::ad {

namespace {

using RowMap = Eigen::Map<const Matrix>;
using MutRowMap = Eigen::Map<Matrix>;

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
    }
}

Graph& graph_of(const Var& a) {
    if (!a.valid()) throw ShapeError("operation on an empty variable");
    return *a.graph();
}

}  // namespace

const Matrix& Var::value() const { return graph_->value(id_); }
const Matrix& Var::grad() const { return graph_->grad(id_); }
bool Var::needs_grad() const { return graph_->needs_grad(id_); }

Graph::Graph(const ParameterSet& params, bool track_grad) : params_(&params), track_param_grad_(track_grad) {}

Var Graph::push(Matrix value, bool needs_grad, BackwardFn fn) {
    auto node = std::make_unique<Node>();
    node->value = std::move(value);
    node->needs_grad = needs_grad;
    if (needs_grad) node->backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Matrix Graph::frozen(Matrix computed) {
    if (tape_ == nullptr) return computed;
    if (!tape_->replay) {
        tape_->matrices.push_back(computed);
        return computed;
    }
    if (tape_->matrix_pos >= tape_->matrices.size()) throw ShapeError("tape replay: more frozen values than recorded");
    const Matrix& stored = tape_->matrices[tape_->matrix_pos++];
    if (stored.rows() != computed.rows() || stored.cols() != computed.cols()) {
        throw ShapeError("tape replay: frozen value shape differs from the recording");
    }
    return stored;
}

std::vector<int> Graph::frozen_indices(std::vector<int> computed) {
    if (tape_ == nullptr) return computed;
    if (!tape_->replay) {
        tape_->indices.push_back(computed);
        return computed;
    }
    if (tape_->index_pos >= tape_->indices.size()) throw ShapeError("tape replay: more frozen indices than recorded");
    return tape_->indices[tape_->index_pos++];
}

Var Graph::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Graph::leaf(Matrix value) { return push(std::move(value), true, nullptr); }

Var Graph::param(const std::string& name) {
    auto it = param_ids_.find(name);
    if (it != param_ids_.end()) return Var(this, it->second);
    if (params_ == nullptr) throw ConfigError("graph has no bound parameter set");
    Var v = push(params_->at(name), track_param_grad_, nullptr);
    param_ids_.emplace(name, v.id());
    param_order_.push_back(name);
    return v;
}

bool Graph::has_param(const std::string& name) const { return param_ids_.count(name) != 0; }

Var Graph::bound_param(const std::string& name) const {
    auto it = param_ids_.find(name);
    if (it == param_ids_.end()) throw ConfigError("parameter not bound in graph: " + name);
    return Var(const_cast<Graph*>(this), it->second);
}

Var Graph::make(Matrix value, std::initializer_list<Var> parents, BackwardFn backward) {
    return make(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
}

Var Graph::make(Matrix value, std::span<const Var> parents, BackwardFn backward) {
    bool needs = false;
    for (const Var& p : parents) {
        if (p.graph() != this) throw ShapeError("variables from different graphs");
        needs = needs || nodes_[p.id()]->needs_grad;
    }
    return push(std::move(value), needs, std::move(backward));
}

const Matrix& Graph::grad(int id) const {
    static const Matrix empty;
    return nodes_[id]->grad.size() == 0 ? empty : nodes_[id]->grad;
}

void Graph::backward(const Var& out, bool keep_intermediate) {
    if (out.rows() != 1 || out.cols() != 1) throw ShapeError("backward requires a scalar output");
    for (auto& n : nodes_) n->grad.resize(0, 0);
    if (!nodes_[out.id()]->needs_grad) return;
    nodes_[out.id()]->grad = Matrix::Ones(1, 1);
    for (int i = out.id(); i >= 0; --i) {
        Node& n = *nodes_[i];
        if (!n.backward || n.grad.size() == 0) continue;
        n.backward(*this, n.grad);
        if (!keep_intermediate) n.grad = Matrix();
    }
}

std::unordered_map<std::string, Matrix> Graph::param_grads() const {
    std::unordered_map<std::string, Matrix> out;
    for (const auto& name : param_order_) {
        const Node& n = *nodes_[param_ids_.at(name)];
        out.emplace(name, n.grad.size() == 0 ? Matrix::Zero(n.value.rows(), n.value.cols()) : n.grad);
    }
    return out;
}

// ---- elementwise and linear algebra -----------------------------------------

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
    Graph& g = graph_of(a);
    const int ia = a.id(), ib = b.id();
    return g.make(a.value() * b.value(), {a, b}, [ia, ib](Graph& g, const Matrix& go) {
        if (g.needs_grad(ia)) g.accumulate(ia, go * g.value(ib).transpose());
        if (g.needs_grad(ib)) g.accumulate(ib, g.value(ia).transpose() * go);
    });
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    const int ia = a.id(), ib = b.id();
    return graph_of(a).make(a.value() + b.value(), {a, b}, [ia, ib](Graph& g, const Matrix& go) {
        g.accumulate(ia, go);
        g.accumulate(ib, go);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    const int ia = a.id(), ib = b.id();
    return graph_of(a).make(a.value() - b.value(), {a, b}, [ia, ib](Graph& g, const Matrix& go) {
        g.accumulate(ia, go);
        if (g.needs_grad(ib)) g.accumulate(ib, -go);
    });
}

Var hadamard(const Var& a, const Var& b) {
    require_same_shape(a, b, "hadamard");
    const int ia = a.id(), ib = b.id();
    return graph_of(a).make(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Graph& g, const Matrix& go) {
        if (g.needs_grad(ia)) g.accumulate(ia, go.cwiseProduct(g.value(ib)));
        if (g.needs_grad(ib)) g.accumulate(ib, go.cwiseProduct(g.value(ia)));
    });
}

Var scale(const Var& a, double s) {
    const int ia = a.id();
    return graph_of(a).make(a.value() * s, {a}, [ia, s](Graph& g, const Matrix& go) { g.accumulate(ia, go * s); });
}

Var add_scalar(const Var& a, double s) {
    const int ia = a.id();
    return graph_of(a).make(a.value().array() + s, {a}, [ia](Graph& g, const Matrix& go) { g.accumulate(ia, go); });
}

Var add_row(const Var& x, const Var& b) {
    if (b.rows() != 1 || b.cols() != x.cols()) throw ShapeError("add_row: bias must be [1 x cols]");
    const int ix = x.id(), ib = b.id();
    Matrix out = x.value().rowwise() + b.value().row(0);
    return graph_of(x).make(std::move(out), {x, b}, [ix, ib](Graph& g, const Matrix& go) {
        g.accumulate(ix, go);
        if (g.needs_grad(ib)) g.accumulate(ib, go.colwise().sum());
    });
}

Var affine_rows(const Var& x, const Var& gain, const Var& bias) {
    if (gain.rows() != 1 || gain.cols() != x.cols() || bias.rows() != 1 || bias.cols() != x.cols()) {
        throw ShapeError("affine_rows: gain/bias must be [1 x cols]");
    }
    const int ix = x.id(), ig = gain.id(), ib = bias.id();
    Matrix out = (x.value().array().rowwise() * gain.value().row(0).array()).matrix();
    out.rowwise() += bias.value().row(0);
    return graph_of(x).make(std::move(out), {x, gain, bias}, [ix, ig, ib](Graph& g, const Matrix& go) {
        if (g.needs_grad(ix)) {
            g.accumulate(ix, (go.array().rowwise() * g.value(ig).row(0).array()).matrix());
        }
        if (g.needs_grad(ig)) g.accumulate(ig, go.cwiseProduct(g.value(ix)).colwise().sum());
        if (g.needs_grad(ib)) g.accumulate(ib, go.colwise().sum());
    });
}

Var linear(const Var& x, const Var& w, const Var& b) { return add_row(matmul(x, w), b); }

Var relu(const Var& x) {
    const int ix = x.id();
    Graph& graph = graph_of(x);
    if (graph.tape() == nullptr) {
        return graph.make(x.value().cwiseMax(0.0), {x}, [ix](Graph& g, const Matrix& go) {
            g.accumulate(ix, (g.value(ix).array() > 0.0).select(go.array(), 0.0).matrix());
        });
    }
    Matrix mask = graph.frozen((x.value().array() > 0.0).cast<double>().matrix());
    Matrix out = x.value().cwiseProduct(mask);
    return graph.make(std::move(out), {x}, [ix, mask = std::move(mask)](Graph& g, const Matrix& go) {
        g.accumulate(ix, go.cwiseProduct(mask));
    });
}

Var sigmoid(const Var& x) {
    const int ix = x.id();
    Matrix out = (1.0 / (1.0 + (-x.value().array()).exp())).matrix();
    Matrix saved = out;
    return graph_of(x).make(std::move(out), {x}, [ix, saved = std::move(saved)](Graph& g, const Matrix& go) {
        g.accumulate(ix, (go.array() * saved.array() * (1.0 - saved.array())).matrix());
    });
}

Var tanh(const Var& x) {
    const int ix = x.id();
    Matrix out = x.value().array().tanh().matrix();
    Matrix saved = out;
    return graph_of(x).make(std::move(out), {x}, [ix, saved = std::move(saved)](Graph& g, const Matrix& go) {
        g.accumulate(ix, (go.array() * (1.0 - saved.array().square())).matrix());
    });
}

Var exp(const Var& x) {
    const int ix = x.id();
    Matrix out = x.value().array().exp().matrix();
    Matrix saved = out;
    return graph_of(x).make(std::move(out), {x}, [ix, saved = std::move(saved)](Graph& g, const Matrix& go) {
        g.accumulate(ix, go.cwiseProduct(saved));
    });
}

Var abs(const Var& x) {
    const int ix = x.id();
    Graph& graph = graph_of(x);
    const auto& v = x.value().array();
    Matrix sign = graph.frozen(((v > 0.0).cast<double>() - (v < 0.0).cast<double>()).matrix());
    Matrix out = graph.tape() == nullptr ? Matrix(x.value().cwiseAbs()) : Matrix(x.value().cwiseProduct(sign));
    return graph.make(std::move(out), {x}, [ix, sign = std::move(sign)](Graph& g, const Matrix& go) {
        g.accumulate(ix, go.cwiseProduct(sign));
    });
}

Var square(const Var& x) {
    const int ix = x.id();
    return graph_of(x).make(x.value().cwiseAbs2(), {x}, [ix](Graph& g, const Matrix& go) {
        g.accumulate(ix, 2.0 * go.cwiseProduct(g.value(ix)));
    });
}

Var clamp(const Var& x, double lo, double hi) {
    const int ix = x.id();
    Graph& graph = graph_of(x);
    const auto& v = x.value().array();
    // -1 below the range, +1 above, 0 inside.
    const Matrix region = graph.frozen(((v > hi).cast<double>() - (v < lo).cast<double>()).matrix());
    Matrix out = x.value();
    Matrix inside = Matrix::Ones(out.rows(), out.cols());
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        if (region.data()[i] < 0) out.data()[i] = lo;
        if (region.data()[i] > 0) out.data()[i] = hi;
        if (region.data()[i] != 0) inside.data()[i] = 0.0;
    }
    return graph.make(std::move(out), {x}, [ix, inside = std::move(inside)](Graph& g, const Matrix& go) {
        g.accumulate(ix, go.cwiseProduct(inside));
    });
}

Var sum(const Var& x) {
    const int ix = x.id();
    const auto r = x.rows(), c = x.cols();
    Matrix out(1, 1);
    out(0, 0) = x.value().sum();
    return graph_of(x).make(std::move(out), {x}, [ix, r, c](Graph& g, const Matrix& go) {
        g.accumulate(ix, Matrix::Constant(r, c, go(0, 0)));
    });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var sum_squares(const Var& x) {
    const int ix = x.id();
    Matrix out(1, 1);
    out(0, 0) = x.value().squaredNorm();
    return graph_of(x).make(std::move(out), {x}, [ix](Graph& g, const Matrix& go) {
        g.accumulate(ix, (2.0 * go(0, 0)) * g.value(ix));
    });
}

// ---- structural -------------------------------------------------------------

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const auto rows = parts[0].rows();
    Eigen::Index cols = 0;
    for (const Var& p : parts) {
        if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
        cols += p.cols();
    }
    Matrix out(rows, cols);
    std::vector<int> ids;
    std::vector<Eigen::Index> widths;
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        out.middleCols(at, p.cols()) = p.value();
        at += p.cols();
        ids.push_back(p.id());
        widths.push_back(p.cols());
    }
    return graph_of(parts[0]).make(std::move(out), parts, [ids, widths](Graph& g, const Matrix& go) {
        Eigen::Index off = 0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (g.needs_grad(ids[i])) g.accumulate(ids[i], go.middleCols(off, widths[i]));
            off += widths[i];
        }
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const auto cols = parts[0].cols();
    Eigen::Index rows = 0;
    for (const Var& p : parts) {
        if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
        rows += p.rows();
    }
    Matrix out(rows, cols);
    std::vector<int> ids;
    std::vector<Eigen::Index> heights;
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
        ids.push_back(p.id());
        heights.push_back(p.rows());
    }
    return graph_of(parts[0]).make(std::move(out), parts, [ids, heights](Graph& g, const Matrix& go) {
        Eigen::Index off = 0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (g.needs_grad(ids[i])) g.accumulate(ids[i], go.middleRows(off, heights[i]));
            off += heights[i];
        }
    });
}

Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > x.cols()) throw ShapeError("slice_cols: out of range");
    const int ix = x.id();
    const auto r = x.rows(), c = x.cols();
    return graph_of(x).make(x.value().middleCols(start, count), {x}, [ix, r, c, start, count](Graph& g, const Matrix& go) {
        Matrix full = Matrix::Zero(r, c);
        full.middleCols(start, count) = go;
        g.accumulate(ix, full);
    });
}

Var slice_rows(const Var& x, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > x.rows()) throw ShapeError("slice_rows: out of range");
    const int ix = x.id();
    const auto r = x.rows(), c = x.cols();
    return graph_of(x).make(x.value().middleRows(start, count), {x}, [ix, r, c, start, count](Graph& g, const Matrix& go) {
        Matrix full = Matrix::Zero(r, c);
        full.middleRows(start, count) = go;
        g.accumulate(ix, full);
    });
}

Var gather_rows(const Var& x, std::span<const int> rows) {
    const Matrix& xv = x.value();
    Matrix out(static_cast<Eigen::Index>(rows.size()), xv.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= xv.rows()) throw ShapeError("gather_rows: index out of range");
        out.row(static_cast<Eigen::Index>(i)) = xv.row(rows[i]);
    }
    const int ix = x.id();
    const auto r = xv.rows(), c = xv.cols();
    std::vector<int> idx(rows.begin(), rows.end());
    return graph_of(x).make(std::move(out), {x}, [ix, r, c, idx = std::move(idx)](Graph& g, const Matrix& go) {
        Matrix full = Matrix::Zero(r, c);
        for (std::size_t i = 0; i < idx.size(); ++i) full.row(idx[i]) += go.row(static_cast<Eigen::Index>(i));
        g.accumulate(ix, full);
    });
}

Var reshape(const Var& x, Eigen::Index rows, Eigen::Index cols) {
    if (rows * cols != x.value().size()) throw ShapeError("reshape: element count differs");
    const int ix = x.id();
    const auto r = x.rows(), c = x.cols();
    Matrix out = RowMap(x.value().data(), rows, cols);
    return graph_of(x).make(std::move(out), {x}, [ix, r, c](Graph& g, const Matrix& go) {
        g.accumulate(ix, RowMap(go.data(), r, c));
    });
}

Var repeat_rows(const Var& x, int times) {
    const Matrix& xv = x.value();
    Matrix out(xv.rows() * times, xv.cols());
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
        for (int k = 0; k < times; ++k) out.row(i * times + k) = xv.row(i);
    }
    const int ix = x.id();
    const auto r = xv.rows(), c = xv.cols();
    return graph_of(x).make(std::move(out), {x}, [ix, r, c, times](Graph& g, const Matrix& go) {
        Matrix acc = Matrix::Zero(r, c);
        for (Eigen::Index i = 0; i < r; ++i) {
            for (int k = 0; k < times; ++k) acc.row(i) += go.row(i * times + k);
        }
        g.accumulate(ix, acc);
    });
}

Var detach(const Var& x) {
    Graph& g = graph_of(x);
    return g.constant(g.frozen(x.value()));
}

Var straight_through(const Var& source, const Var& quantized) {
    require_same_shape(source, quantized, "straight_through");
    const int is = source.id();
    Graph& graph = graph_of(source);
    Matrix out = quantized.value();
    if (graph.tape() != nullptr) out = source.value() + graph.frozen(Matrix(quantized.value() - source.value()));
    // Only `source` is a parent: the quantized value carries no gradient here.
    return graph.make(std::move(out), {source}, [is](Graph& g, const Matrix& go) { g.accumulate(is, go); });
}

// ---- sequence ops -----------------------------------------------------------

Var normalize_rows(const Var& x, double eps) {
    const Matrix& xv = x.value();
    const auto n = xv.cols();
    Eigen::VectorXd inv_std(xv.rows());
    Matrix out(xv.rows(), n);
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        const double mu = xv.row(r).mean();
        const double var = (xv.row(r).array() - mu).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        out.row(r) = (xv.row(r).array() - mu) * inv_std(r);
    }
    const int ix = x.id();
    Matrix xhat = out;
    return graph_of(x).make(std::move(out), {x}, [ix, inv_std, xhat = std::move(xhat)](Graph& g, const Matrix& go) {
        const auto n = static_cast<double>(go.cols());
        Matrix dx(go.rows(), go.cols());
        for (Eigen::Index r = 0; r < go.rows(); ++r) {
            const double mg = go.row(r).mean();
            const double mgx = go.row(r).dot(xhat.row(r)) / n;
            dx.row(r) = inv_std(r) * (go.row(r).array() - mg - xhat.row(r).array() * mgx);
        }
        g.accumulate(ix, dx);
    });
}

Var causal_patches(const Var& x, int batch, int length, int kernel) {
    const Matrix& xv = x.value();
    if (xv.rows() != static_cast<Eigen::Index>(batch) * length) throw ShapeError("causal_patches: rows != batch*length");
    const auto c = xv.cols();
    Matrix out = Matrix::Zero(xv.rows(), c * kernel);
    for (int b = 0; b < batch; ++b) {
        for (int t = 0; t < length; ++t) {
            for (int j = 0; j < kernel; ++j) {
                const int src = t - (kernel - 1) + j;
                if (src < 0) continue;
                out.block(b * length + t, j * c, 1, c) = xv.row(b * length + src);
            }
        }
    }
    const int ix = x.id();
    return graph_of(x).make(std::move(out), {x}, [ix, batch, length, kernel, c](Graph& g, const Matrix& go) {
        Matrix dx = Matrix::Zero(static_cast<Eigen::Index>(batch) * length, c);
        for (int b = 0; b < batch; ++b) {
            for (int t = 0; t < length; ++t) {
                for (int j = 0; j < kernel; ++j) {
                    const int src = t - (kernel - 1) + j;
                    if (src < 0) continue;
                    dx.row(b * length + src) += go.block(b * length + t, j * c, 1, c);
                }
            }
        }
        g.accumulate(ix, dx);
    });
}

Var grouped_matmul(const Var& x, const Var& w, int batch, int length, int in, int out) {
    if (x.rows() != static_cast<Eigen::Index>(batch) * length || x.cols() != in) {
        throw ShapeError("grouped_matmul: input shape");
    }
    if (w.rows() != batch || w.cols() != static_cast<Eigen::Index>(in) * out) {
        throw ShapeError("grouped_matmul: weight shape");
    }
    const Matrix& xv = x.value();
    const Matrix& wv = w.value();
    Matrix res(xv.rows(), out);
    for (int b = 0; b < batch; ++b) {
        RowMap wb(wv.row(b).data(), in, out);
        res.middleRows(b * length, length).noalias() = xv.middleRows(b * length, length) * wb;
    }
    const int ix = x.id(), iw = w.id();
    return graph_of(x).make(std::move(res), {x, w}, [ix, iw, batch, length, in, out](Graph& g, const Matrix& go) {
        const Matrix& xv = g.value(ix);
        const Matrix& wv = g.value(iw);
        if (g.needs_grad(ix)) {
            Matrix dx(xv.rows(), in);
            for (int b = 0; b < batch; ++b) {
                RowMap wb(wv.row(b).data(), in, out);
                dx.middleRows(b * length, length).noalias() = go.middleRows(b * length, length) * wb.transpose();
            }
            g.accumulate(ix, dx);
        }
        if (g.needs_grad(iw)) {
            Matrix dw(batch, static_cast<Eigen::Index>(in) * out);
            for (int b = 0; b < batch; ++b) {
                MutRowMap db(dw.row(b).data(), in, out);
                db.noalias() = xv.middleRows(b * length, length).transpose() * go.middleRows(b * length, length);
            }
            g.accumulate(iw, dw);
        }
    });
}

Var grouped_add_row(const Var& x, const Var& b, int batch, int length) {
    if (b.rows() != batch || b.cols() != x.cols() || x.rows() != static_cast<Eigen::Index>(batch) * length) {
        throw ShapeError("grouped_add_row: shape");
    }
    Matrix out = x.value();
    for (int s = 0; s < batch; ++s) out.middleRows(s * length, length).rowwise() += b.value().row(s);
    const int ix = x.id(), ib = b.id();
    return graph_of(x).make(std::move(out), {x, b}, [ix, ib, batch, length](Graph& g, const Matrix& go) {
        g.accumulate(ix, go);
        if (g.needs_grad(ib)) {
            Matrix db(batch, go.cols());
            for (int s = 0; s < batch; ++s) db.row(s) = go.middleRows(s * length, length).colwise().sum();
            g.accumulate(ib, db);
        }
    });
}

Var grouped_affine(const Var& x, const Var& gain, const Var& bias, int batch, int length) {
    if (gain.rows() != batch || gain.cols() != x.cols() || bias.rows() != batch || bias.cols() != x.cols() ||
        x.rows() != static_cast<Eigen::Index>(batch) * length) {
        throw ShapeError("grouped_affine: shape");
    }
    Matrix out(x.rows(), x.cols());
    for (int s = 0; s < batch; ++s) {
        out.middleRows(s * length, length) =
            (x.value().middleRows(s * length, length).array().rowwise() * gain.value().row(s).array()).matrix();
        out.middleRows(s * length, length).rowwise() += bias.value().row(s);
    }
    const int ix = x.id(), ig = gain.id(), ib = bias.id();
    return graph_of(x).make(std::move(out), {x, gain, bias}, [ix, ig, ib, batch, length](Graph& g, const Matrix& go) {
        const Matrix& xv = g.value(ix);
        const Matrix& gv = g.value(ig);
        if (g.needs_grad(ix)) {
            Matrix dx(go.rows(), go.cols());
            for (int s = 0; s < batch; ++s) {
                dx.middleRows(s * length, length) =
                    (go.middleRows(s * length, length).array().rowwise() * gv.row(s).array()).matrix();
            }
            g.accumulate(ix, dx);
        }
        if (g.needs_grad(ig)) {
            Matrix dg(batch, go.cols());
            for (int s = 0; s < batch; ++s) {
                dg.row(s) = go.middleRows(s * length, length).cwiseProduct(xv.middleRows(s * length, length)).colwise().sum();
            }
            g.accumulate(ig, dg);
        }
        if (g.needs_grad(ib)) {
            Matrix db(batch, go.cols());
            for (int s = 0; s < batch; ++s) db.row(s) = go.middleRows(s * length, length).colwise().sum();
            g.accumulate(ib, db);
        }
    });
}

namespace {

void check_attention_shapes(const Matrix& q, const Matrix& k, const Matrix& v, const AttentionShape& s) {
    if (q.rows() != static_cast<Eigen::Index>(s.batch) * s.query_length ||
        k.rows() != static_cast<Eigen::Index>(s.batch) * s.key_length || v.rows() != k.rows()) {
        throw ShapeError("attention: row counts do not match batch/length");
    }
    if (q.cols() != k.cols() || v.cols() != q.cols()) throw ShapeError("attention: feature widths differ");
    if (s.heads < 1 || q.cols() % s.heads != 0) throw ShapeError("attention: width not divisible by heads");
}

// Softmax of one (sequence, head) score block; masked entries are exactly zero.
Matrix head_probabilities(const Eigen::Ref<const Matrix>& qh, const Eigen::Ref<const Matrix>& kh, double inv_scale,
                          bool causal) {
    Matrix s = (qh * kh.transpose()) * inv_scale;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        const Eigen::Index allowed = causal ? std::min<Eigen::Index>(i + 1, s.cols()) : s.cols();
        const double mx = s.row(i).head(allowed).maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j < allowed; ++j) {
            s(i, j) = std::exp(s(i, j) - mx);
            z += s(i, j);
        }
        for (Eigen::Index j = 0; j < allowed; ++j) s(i, j) /= z;
        for (Eigen::Index j = allowed; j < s.cols(); ++j) s(i, j) = 0.0;
    }
    return s;
}

}  // namespace

std::vector<Matrix> attention_probabilities(const Matrix& q, const Matrix& k, const AttentionShape& s) {
    check_attention_shapes(q, k, k, s);
    const int dh = static_cast<int>(q.cols()) / s.heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Matrix> out;
    out.reserve(static_cast<std::size_t>(s.batch) * s.heads);
    for (int b = 0; b < s.batch; ++b) {
        for (int h = 0; h < s.heads; ++h) {
            out.push_back(head_probabilities(q.block(b * s.query_length, h * dh, s.query_length, dh),
                                             k.block(b * s.key_length, h * dh, s.key_length, dh), inv_scale, s.causal));
        }
    }
    return out;
}

Var attention(const Var& q, const Var& k, const Var& v, const AttentionShape& s) {
    check_attention_shapes(q.value(), k.value(), v.value(), s);
    const int dh = static_cast<int>(q.cols()) / s.heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    auto probs = std::make_shared<std::vector<Matrix>>(attention_probabilities(q.value(), k.value(), s));
    const Matrix& vv = v.value();
    Matrix out(q.rows(), q.cols());
    for (int b = 0; b < s.batch; ++b) {
        for (int h = 0; h < s.heads; ++h) {
            const Matrix& p = (*probs)[static_cast<std::size_t>(b) * s.heads + h];
            out.block(b * s.query_length, h * dh, s.query_length, dh).noalias() =
                p * vv.block(b * s.key_length, h * dh, s.key_length, dh);
        }
    }
    const int iq = q.id(), ik = k.id(), iv = v.id();
    return graph_of(q).make(std::move(out), {q, k, v}, [iq, ik, iv, s, dh, inv_scale, probs](Graph& g, const Matrix& go) {
        const Matrix& qv = g.value(iq);
        const Matrix& kv = g.value(ik);
        const Matrix& vv = g.value(iv);
        Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
        Matrix dk = Matrix::Zero(kv.rows(), kv.cols());
        Matrix dv = Matrix::Zero(vv.rows(), vv.cols());
        for (int b = 0; b < s.batch; ++b) {
            for (int h = 0; h < s.heads; ++h) {
                const Matrix& p = (*probs)[static_cast<std::size_t>(b) * s.heads + h];
                const auto go_h = go.block(b * s.query_length, h * dh, s.query_length, dh);
                const auto v_h = vv.block(b * s.key_length, h * dh, s.key_length, dh);
                dv.block(b * s.key_length, h * dh, s.key_length, dh).noalias() = p.transpose() * go_h;
                Matrix dp = go_h * v_h.transpose();
                const Eigen::VectorXd row_dot = dp.cwiseProduct(p).rowwise().sum();
                Matrix ds = (p.array() * (dp.colwise() - row_dot).array()).matrix() * inv_scale;
                dq.block(b * s.query_length, h * dh, s.query_length, dh).noalias() =
                    ds * kv.block(b * s.key_length, h * dh, s.key_length, dh);
                dk.block(b * s.key_length, h * dh, s.key_length, dh).noalias() =
                    ds.transpose() * qv.block(b * s.query_length, h * dh, s.query_length, dh);
            }
        }
        g.accumulate(iq, dq);
        g.accumulate(ik, dk);
        g.accumulate(iv, dv);
    });
}

Var softmax_cross_entropy(const Var& scores, std::span<const int> targets) {
    const Matrix& sv = scores.value();
    if (static_cast<Eigen::Index>(targets.size()) != sv.rows()) throw ShapeError("softmax_cross_entropy: target count");
    Matrix probs(sv.rows(), sv.cols());
    double total = 0.0;
    for (Eigen::Index r = 0; r < sv.rows(); ++r) {
        const int t = targets[static_cast<std::size_t>(r)];
        if (t < 0 || t >= sv.cols()) throw ShapeError("softmax_cross_entropy: target out of range");
        const double mx = sv.row(r).maxCoeff();
        probs.row(r) = (sv.row(r).array() - mx).exp();
        const double z = probs.row(r).sum();
        probs.row(r) /= z;
        total += (std::log(z) + mx) - sv(r, t);
    }
    const double n = static_cast<double>(sv.rows());
    Matrix out(1, 1);
    out(0, 0) = total / n;
    const int is = scores.id();
    std::vector<int> tg(targets.begin(), targets.end());
    return graph_of(scores).make(std::move(out), {scores}, [is, probs = std::move(probs), tg = std::move(tg), n](
                                                             Graph& g, const Matrix& go) {
        Matrix d = probs;
        for (std::size_t r = 0; r < tg.size(); ++r) d(static_cast<Eigen::Index>(r), tg[r]) -= 1.0;
        g.accumulate(is, d * (go(0, 0) / n));
    });
}

}  // namespace deepdgl::ad
