#pragma once

// Reverse-mode automatic differentiation over row-major matrices.
//
// A Graph owns every node created while evaluating a model. Nodes are appended
// in evaluation order, so a reverse sweep over the node list is a valid
// topological order for back-propagation. Sequences are stored batch-major:
// a batch of B sequences of length L with C features is a [B*L x C] matrix
// whose row b*L + t holds step t of sequence b.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace deepdgl {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

class ParameterSet;

namespace ad {

class Graph;

class Var {
public:
    Var() = default;

    const Matrix& value() const;
    const Matrix& grad() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    double scalar() const { return value()(0, 0); }

    Graph* graph() const { return graph_; }
    int id() const { return id_; }
    bool valid() const { return graph_ != nullptr; }
    bool needs_grad() const;

private:
    friend class Graph;
    Var(Graph* g, int id) : graph_(g), id_(id) {}

    Graph* graph_ = nullptr;
    int id_ = -1;
};

// Branch decisions (ReLU masks, |x| signs, clamp regions, code indices) and
// stop-gradient operands of one evaluation. A graph recording into a tape
// stores them; a graph replaying a tape reuses them, which makes the replayed
// function smooth around the recorded point for finite-difference checks.
struct Tape {
    bool replay = false;
    std::vector<Matrix> matrices;
    std::vector<std::vector<int>> indices;
    std::size_t matrix_pos = 0;
    std::size_t index_pos = 0;

    void start_replay() {
        replay = true;
        matrix_pos = 0;
        index_pos = 0;
    }
};

class Graph {
public:
    using BackwardFn = std::function<void(Graph&, const Matrix& out_grad)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Parameters looked up through param() become gradient leaves when
    // track_grad is true, constants otherwise.
    explicit Graph(const ParameterSet& params, bool track_grad = true);

    Var constant(Matrix value);
    Var leaf(Matrix value);
    Var param(const std::string& name);

    // Creates an op node. The backward closure is only kept when some
    // parent needs a gradient.
    Var make(Matrix value, std::initializer_list<Var> parents, BackwardFn backward);
    Var make(Matrix value, std::span<const Var> parents, BackwardFn backward);

    // With keep_intermediate false, op-node gradients are released as soon as
    // they have been propagated; only leaf gradients survive.
    void backward(const Var& scalar_output, bool keep_intermediate = true);

    // Gradient of every bound parameter (zeros for parameters never touched).
    std::unordered_map<std::string, Matrix> param_grads() const;
    bool has_param(const std::string& name) const;
    Var bound_param(const std::string& name) const;

    const Matrix& value(int id) const { return nodes_[id]->value; }
    const Matrix& grad(int id) const;
    bool needs_grad(int id) const { return nodes_[id]->needs_grad; }

    // Adds g into the gradient buffer of node `id` (allocated on first use).
    template <typename Expr>
    void accumulate(int id, const Expr& g) {
        Node& n = *nodes_[id];
        if (!n.needs_grad) return;
        if (n.grad.size() == 0) {
            n.grad = g;
        } else {
            n.grad += g;
        }
    }

    std::size_t size() const { return nodes_.size(); }

    void set_tape(Tape* tape) { tape_ = tape; }
    Tape* tape() const { return tape_; }
    // Pass-through without a tape; otherwise records or replays the value.
    Matrix frozen(Matrix computed);
    std::vector<int> frozen_indices(std::vector<int> computed);

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool needs_grad = false;
        BackwardFn backward;
    };

    Var push(Matrix value, bool needs_grad, BackwardFn fn);

    std::vector<std::unique_ptr<Node>> nodes_;
    const ParameterSet* params_ = nullptr;
    bool track_param_grad_ = true;
    std::unordered_map<std::string, int> param_ids_;
    std::vector<std::string> param_order_;
    Tape* tape_ = nullptr;
};

// ---- elementwise and linear algebra -----------------------------------------

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
// x + b with b a [1 x cols] row broadcast over every row of x.
Var add_row(const Var& x, const Var& b);
// x * g + b per row, g and b are [1 x cols].
Var affine_rows(const Var& x, const Var& g, const Var& b);
Var linear(const Var& x, const Var& w, const Var& b);

Var relu(const Var& x);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var exp(const Var& x);
Var abs(const Var& x);
Var square(const Var& x);
// Values outside [lo, hi] are clamped and receive zero gradient.
Var clamp(const Var& x, double lo, double hi);

Var sum(const Var& x);
Var mean(const Var& x);
Var sum_squares(const Var& x);

// ---- structural -------------------------------------------------------------

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count);
Var slice_rows(const Var& x, Eigen::Index start, Eigen::Index count);
Var gather_rows(const Var& x, std::span<const int> rows);
Var reshape(const Var& x, Eigen::Index rows, Eigen::Index cols);
// Each row of x repeated `times` consecutive times.
Var repeat_rows(const Var& x, int times);

// Value copy with no gradient path (the stop-gradient operator).
Var detach(const Var& x);
// Value of `quantized`, gradient routed unchanged to `source`.
Var straight_through(const Var& source, const Var& quantized);

// ---- sequence ops -----------------------------------------------------------

// Row-wise normalization to zero mean and unit variance (no affine).
Var normalize_rows(const Var& x, double eps = 1e-5);

// Builds the [B*L x k*C] causal patch matrix of a batch of sequences: row
// b*L + t holds steps t-k+1 .. t of sequence b, zero-padded on the left.
Var causal_patches(const Var& x, int batch, int length, int kernel);

// Per-sequence matmul: x is [B*L x in], w is [B x in*out] (row-major
// in x out per row), result is [B*L x out].
Var grouped_matmul(const Var& x, const Var& w, int batch, int length, int in, int out);
// x + b[b] per sequence, b is [B x cols].
Var grouped_add_row(const Var& x, const Var& b, int batch, int length);
// x * g[b] + b[b] per sequence.
Var grouped_affine(const Var& x, const Var& g, const Var& b, int batch, int length);

struct AttentionShape {
    int batch = 1;
    int query_length = 1;
    int key_length = 1;
    int heads = 1;
    bool causal = false;
};

// Multi-head scaled dot-product attention core. q is [B*Lq x d], k and v are
// [B*Lk x d]; heads split the feature axis into contiguous slices.
Var attention(const Var& q, const Var& k, const Var& v, const AttentionShape& shape);

// Softmax probabilities of the same computation, one [Lq x Lk] matrix per
// (sequence, head), ordered sequence-major.
std::vector<Matrix> attention_probabilities(const Matrix& q, const Matrix& k,
                                            const AttentionShape& shape);

// Mean over rows of -log softmax(scores)[row, target[row]].
Var softmax_cross_entropy(const Var& scores, std::span<const int> targets);

}  // namespace ad
}  // namespace deepdgl
