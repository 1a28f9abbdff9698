#include "deepdgl/nets.hpp"

#include "deepdgl/errors.hpp"

#include <cmath>

namespace deepdgl::nets {

namespace {

bool is_weight(const std::string& name) {
    const auto dot = name.rfind('.');
    return name.compare(dot + 1, 1, "w") == 0;
}

bool is_gain(const std::string& name) { return name.size() >= 5 && name.compare(name.size() - 5, 5, "gamma") == 0; }

Matrix uniform_matrix(int rows, int cols, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

Matrix init_entry(const ParamShape& s, std::mt19937_64& rng) {
    if (is_weight(s.name)) return uniform_matrix(s.rows, s.cols, 1.0 / std::sqrt(static_cast<double>(s.rows)), rng);
    if (is_gain(s.name)) return Matrix::Ones(s.rows, s.cols);
    return Matrix::Zero(s.rows, s.cols);
}

struct Projection {
    ad::Var w;
    ad::Var b;
};

Seq project(const Seq& x, const Projection& p, bool grouped, int out) {
    ad::Var y;
    if (grouped) {
        y = ad::grouped_matmul(x.data, p.w, x.batch, x.length, x.width(), out);
        y = ad::grouped_add_row(y, p.b, x.batch, x.length);
    } else {
        y = ad::linear(x.data, p.w, p.b);
    }
    return {y, x.batch, x.length};
}

ad::Var norm(const ad::Var& x, const ad::Var& gain, const ad::Var& bias, bool grouped, int batch, int length) {
    ad::Var n = ad::normalize_rows(x);
    return grouped ? ad::grouped_affine(n, gain, bias, batch, length) : ad::affine_rows(n, gain, bias);
}

}  // namespace

void ConvStackConfig::validate(int in_channels) const {
    if (kernel_sizes.size() != channels.size() || kernel_sizes.empty()) {
        throw ConfigError("conv stack: kernel_sizes and channels must be non-empty and of equal length");
    }
    if (in_channels < 1) throw ConfigError("conv stack: input channels must be positive");
    for (std::size_t i = 0; i < channels.size(); ++i) {
        if (channels[i] < 1) throw ConfigError("conv stack: channels must be positive");
        if (kernel_sizes[i] < 1) throw ConfigError("conv stack: kernel sizes must be positive");
    }
}

void AttentionBlockConfig::validate() const {
    if (model_dim < 1 || n_heads < 1) throw ConfigError("attention block: dims and heads must be positive");
    if (model_dim % n_heads != 0) throw ConfigError("attention block: model_dim must be divisible by n_heads");
    if (ffn_hidden < model_dim) throw ConfigError("attention block: ffn_hidden must be >= model_dim");
    if (context_dim < 0) throw ConfigError("attention block: negative context width");
}

std::vector<ParamShape> block_param_shapes(const AttentionBlockConfig& cfg) {
    cfg.validate();
    const int d = cfg.model_dim;
    const int f = cfg.ffn_hidden;
    const int c = cfg.context_width();
    std::vector<ParamShape> s = {
        {"self.wq", d, d}, {"self.bq", 1, d}, {"self.wk", d, d}, {"self.bk", 1, d},
        {"self.wv", d, d}, {"self.bv", 1, d}, {"self.wo", d, d}, {"self.bo", 1, d},
    };
    if (cfg.cross) {
        s.insert(s.end(), {{"cross.wq", d, d},
                           {"cross.bq", 1, d},
                           {"cross.wk", c, d},
                           {"cross.bk", 1, d},
                           {"cross.wv", c, d},
                           {"cross.bv", 1, d},
                           {"cross.wo", d, d},
                           {"cross.bo", 1, d}});
    }
    s.insert(s.end(), {{"ffn.w1", d, f}, {"ffn.b1", 1, f}, {"ffn.w2", f, d}, {"ffn.b2", 1, d}});
    if (cfg.layer_norm) {
        s.insert(s.end(), {{"ln_self.gamma", 1, d}, {"ln_self.beta", 1, d}});
        if (cfg.cross) s.insert(s.end(), {{"ln_cross.gamma", 1, d}, {"ln_cross.beta", 1, d}});
        s.insert(s.end(), {{"ln_ffn.gamma", 1, d}, {"ln_ffn.beta", 1, d}});
    }
    return s;
}

std::size_t param_count(const AttentionBlockConfig& cfg) {
    std::size_t n = 0;
    for (const auto& e : block_param_shapes(cfg)) n += e.size();
    return n;
}

BlockWeights bind_block(ad::Graph& g, const std::string& prefix, const AttentionBlockConfig& cfg) {
    BlockWeights w;
    for (const auto& e : block_param_shapes(cfg)) w.entries.push_back(g.param(prefix + "." + e.name));
    return w;
}

void init_linear(ParameterSet& ps, const std::string& prefix, int in, int out, std::mt19937_64& rng) {
    ps.add(prefix + ".w", uniform_matrix(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng));
    ps.add(prefix + ".b", Matrix::Zero(1, out));
}

void init_block(ParameterSet& ps, const std::string& prefix, const AttentionBlockConfig& cfg, std::mt19937_64& rng) {
    for (const auto& e : block_param_shapes(cfg)) ps.add(prefix + "." + e.name, init_entry(e, rng));
}

Eigen::VectorXd init_block_flat(const AttentionBlockConfig& cfg, std::mt19937_64& rng) {
    Eigen::VectorXd flat(static_cast<Eigen::Index>(param_count(cfg)));
    Eigen::Index at = 0;
    for (const auto& e : block_param_shapes(cfg)) {
        Matrix m = init_entry(e, rng);
        flat.segment(at, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
        at += m.size();
    }
    return flat;
}

void init_conv_stack(ParameterSet& ps, const std::string& prefix, int in_channels, const ConvStackConfig& cfg,
                     std::mt19937_64& rng) {
    cfg.validate(in_channels);
    int in = in_channels;
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
        const std::string p = prefix + ".conv" + std::to_string(i);
        init_linear(ps, p, cfg.kernel_sizes[i] * in, cfg.channels[i], rng);
        ps.add(p + ".ln.gamma", Matrix::Ones(1, cfg.channels[i]));
        ps.add(p + ".ln.beta", Matrix::Zero(1, cfg.channels[i]));
        in = cfg.channels[i];
    }
}

Seq linear(const Seq& x, ad::Graph& g, const std::string& prefix) {
    return {ad::linear(x.data, g.param(prefix + ".w"), g.param(prefix + ".b")), x.batch, x.length};
}

Seq causal_conv_stack(const Seq& x, ad::Graph& g, const std::string& prefix, const ConvStackConfig& cfg) {
    cfg.validate(x.width());
    Seq h = x;
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
        const std::string p = prefix + ".conv" + std::to_string(i);
        const ad::Var w = g.param(p + ".w");
        if (w.rows() != static_cast<Eigen::Index>(cfg.kernel_sizes[i]) * h.width()) {
            throw ShapeError("conv layer " + p + ": input channel mismatch");
        }
        ad::Var y = ad::linear(ad::causal_patches(h.data, h.batch, h.length, cfg.kernel_sizes[i]), w, g.param(p + ".b"));
        if (cfg.layer_norm) y = ad::affine_rows(ad::normalize_rows(y), g.param(p + ".ln.gamma"), g.param(p + ".ln.beta"));
        if (cfg.activation) y = ad::relu(y);
        h = {y, h.batch, h.length};
    }
    return h;
}

Seq attention_block(const Seq& h, const BlockWeights& w, const AttentionBlockConfig& cfg,
                    const std::optional<Seq>& context) {
    const auto shapes = block_param_shapes(cfg);
    if (w.entries.size() != shapes.size()) throw ShapeError("attention block: weight count does not match layout");
    if (h.width() != cfg.model_dim) throw ShapeError("attention block: input width != model_dim");
    if (cfg.cross && !context) throw ConfigError("attention block: cross-attention requires a context");
    if (!cfg.cross && context) throw ConfigError("attention block: context given to a self-attention block");
    if (context && (context->width() != cfg.context_width() || context->batch != h.batch)) {
        throw ShapeError("attention block: context shape mismatch");
    }

    std::size_t at = 0;
    auto next = [&]() -> const ad::Var& { return w.entries[at++]; };
    auto next_proj = [&]() {
        Projection p;
        p.w = next();
        p.b = next();
        return p;
    };
    const int d = cfg.model_dim;
    const bool grouped = w.grouped;

    const Projection sq = next_proj(), sk = next_proj(), sv = next_proj(), so = next_proj();
    Projection cq, ck, cv, co;
    if (cfg.cross) {
        cq = next_proj();
        ck = next_proj();
        cv = next_proj();
        co = next_proj();
    }
    const Projection f1 = next_proj(), f2 = next_proj();
    ad::Var ln[6];
    if (cfg.layer_norm) {
        const int n = cfg.cross ? 6 : 4;
        for (int i = 0; i < n; ++i) ln[i] = next();
    }

    auto add_norm = [&](const Seq& residual, const Seq& update, int ln_index) {
        ad::Var s = ad::add(residual.data, update.data);
        if (cfg.layer_norm) s = norm(s, ln[ln_index], ln[ln_index + 1], grouped, h.batch, h.length);
        return Seq{s, h.batch, h.length};
    };

    // Self-attention.
    Seq x = h;
    {
        const Seq q = project(x, sq, grouped, d), k = project(x, sk, grouped, d), v = project(x, sv, grouped, d);
        ad::AttentionShape shape{x.batch, x.length, x.length, cfg.n_heads, cfg.masked};
        const Seq a{ad::attention(q.data, k.data, v.data, shape), x.batch, x.length};
        x = add_norm(x, project(a, so, grouped, d), 0);
    }
    // Cross-attention over the encoder outputs.
    if (cfg.cross) {
        const Seq q = project(x, cq, grouped, d);
        const Seq k = project(*context, ck, grouped, d), v = project(*context, cv, grouped, d);
        ad::AttentionShape shape{x.batch, x.length, context->length, cfg.n_heads, false};
        const Seq a{ad::attention(q.data, k.data, v.data, shape), x.batch, x.length};
        x = add_norm(x, project(a, co, grouped, d), 2);
    }
    // Position-wise feed-forward.
    {
        Seq hid = project(x, f1, grouped, cfg.ffn_hidden);
        hid.data = ad::relu(hid.data);
        x = add_norm(x, project(hid, f2, grouped, d), cfg.cross ? 4 : 2);
    }
    return x;
}

Seq attention_block(const Seq& h, ad::Graph& g, const std::string& prefix, const AttentionBlockConfig& cfg,
                    const std::optional<Seq>& context) {
    return attention_block(h, bind_block(g, prefix, cfg), cfg, context);
}

}  // namespace deepdgl::nets
