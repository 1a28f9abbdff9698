#include "deepdgl/context.hpp"

#include "deepdgl/errors.hpp"

#include <algorithm>
#include <cmath>

namespace deepdgl::context {

namespace {

int lstm_width(const ContextNetConfig& cfg) { return cfg.blocks.back().model_dim; }

}  // namespace

void init_context_net(ParameterSet& ps, const ContextNetConfig& cfg, Rng& rng) {
    if (cfg.blocks.empty()) throw ConfigError("context network needs at least one attention block");
    nets::init_conv_stack(ps, "ctx", 1, cfg.conv, rng);
    int width = cfg.conv.out_channels() + cfg.n_covariates;
    nets::init_linear(ps, "ctx.input_proj", width, cfg.blocks.front().model_dim, rng);
    width = cfg.blocks.front().model_dim;
    for (std::size_t j = 0; j < cfg.blocks.size(); ++j) {
        if (cfg.blocks[j].model_dim != width) {
            nets::init_linear(ps, "ctx.proj" + std::to_string(j), width, cfg.blocks[j].model_dim, rng);
        }
        nets::init_block(ps, "ctx.block" + std::to_string(j), cfg.blocks[j], rng);
        width = cfg.blocks[j].model_dim;
    }
    const int h = lstm_width(cfg);
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));
    std::uniform_real_distribution<double> u(-bound, bound);
    auto uniform = [&](int r, int c) {
        Matrix m(r, c);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
        return m;
    };
    ps.add("ctx.lstm.wx", uniform(h, 4 * h));
    ps.add("ctx.lstm.wh", uniform(h, 4 * h));
    ps.add("ctx.lstm.b", Matrix::Zero(1, 4 * h));

    std::uniform_real_distribution<double> small(-0.01, 0.01);
    Matrix mean_w(h, cfg.context_dim);
    for (Eigen::Index i = 0; i < mean_w.size(); ++i) mean_w.data()[i] = small(rng);
    ps.add("ctx.mean.w", std::move(mean_w));
    ps.add("ctx.mean.b", Matrix::Zero(1, cfg.context_dim));
    // Zero log-variance head: the posterior starts at unit variance.
    ps.add("ctx.logvar.w", Matrix::Zero(h, cfg.context_dim));
    ps.add("ctx.logvar.b", Matrix::Zero(1, cfg.context_dim));
}

void init_discriminator(ParameterSet& ps, const std::string& prefix, int context_dim, int view_dim, int hidden,
                        Rng& rng) {
    nets::init_linear(ps, prefix + ".l1", context_dim + view_dim, hidden, rng);
    nets::init_linear(ps, prefix + ".l2", hidden, 1, rng);
}

ContextEncoding encode_context(ad::Graph& g, const nets::Seq& values, const ad::Var& covariates,
                               const ContextNetConfig& cfg) {
    ContextEncoding enc;
    enc.views.v_sh = nets::causal_conv_stack(values, g, "ctx", cfg.conv);
    nets::Seq h = enc.views.v_sh;
    if (cfg.n_covariates > 0) {
        if (covariates.cols() != cfg.n_covariates) throw ShapeError("context network: covariate width mismatch");
        const ad::Var parts[] = {h.data, covariates};
        h.data = ad::concat_cols(parts);
    }
    h = nets::linear(h, g, "ctx.input_proj");
    for (std::size_t j = 0; j < cfg.blocks.size(); ++j) {
        if (h.width() != cfg.blocks[j].model_dim) h = nets::linear(h, g, "ctx.proj" + std::to_string(j));
        h = nets::attention_block(h, g, "ctx.block" + std::to_string(j), cfg.blocks[j]);
    }
    enc.views.v_lo = h;

    // LSTM over time; the input projection is done for all steps at once.
    const int hw = lstm_width(cfg);
    const int batch = h.batch, length = h.length;
    const ad::Var xw = ad::matmul(h.data, g.param("ctx.lstm.wx"));
    const ad::Var wh = g.param("ctx.lstm.wh");
    const ad::Var bias = g.param("ctx.lstm.b");
    ad::Var state_h = g.constant(Matrix::Zero(batch, hw));
    ad::Var state_c = g.constant(Matrix::Zero(batch, hw));
    std::vector<int> rows(static_cast<std::size_t>(batch));
    for (int t = 0; t < length; ++t) {
        for (int b = 0; b < batch; ++b) rows[b] = b * length + t;
        ad::Var gates = ad::add_row(ad::add(ad::gather_rows(xw, rows), ad::matmul(state_h, wh)), bias);
        const ad::Var i = ad::sigmoid(ad::slice_cols(gates, 0, hw));
        const ad::Var f = ad::sigmoid(ad::slice_cols(gates, hw, hw));
        const ad::Var cand = ad::tanh(ad::slice_cols(gates, 2 * hw, hw));
        const ad::Var o = ad::sigmoid(ad::slice_cols(gates, 3 * hw, hw));
        state_c = ad::add(ad::hadamard(f, state_c), ad::hadamard(i, cand));
        state_h = ad::hadamard(o, ad::tanh(state_c));
    }
    enc.mean = ad::linear(state_h, g.param("ctx.mean.w"), g.param("ctx.mean.b"));
    enc.log_var = ad::clamp(ad::linear(state_h, g.param("ctx.logvar.w"), g.param("ctx.logvar.b")), kLogVarMin, kLogVarMax);
    return enc;
}

ad::Var sample_context(const ad::Var& mean, const ad::Var& log_var, SampleMode mode, Rng& rng) {
    if (mode == SampleMode::infer) return mean;
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix eps(mean.rows(), mean.cols());
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = n(rng);
    ad::Graph& g = *mean.graph();
    const ad::Var std_dev = ad::exp(ad::scale(log_var, 0.5));
    return ad::add(mean, ad::hadamard(std_dev, g.constant(std::move(eps))));
}

Eigen::VectorXd sample_context(const ContextPosterior& post, SampleMode mode, Rng& rng) {
    if (mode == SampleMode::infer) return post.mean;
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::VectorXd out(post.mean.size());
    for (Eigen::Index j = 0; j < out.size(); ++j) {
        const double lv = std::clamp(post.log_var(j), kLogVarMin, kLogVarMax);
        out(j) = post.mean(j) + std::exp(0.5 * lv) * n(rng);
    }
    return out;
}

double kl_divergence(const ContextPosterior& post) {
    const auto lv = post.log_var.array().cwiseMax(kLogVarMin).cwiseMin(kLogVarMax);
    return 0.5 * (post.mean.array().square() + lv.exp() - lv - 1.0).sum();
}

ad::Var kl_loss(const ad::Var& mean, const ad::Var& log_var) {
    const ad::Var terms = ad::sub(ad::add(ad::square(mean), ad::exp(log_var)), log_var);
    const double batch = static_cast<double>(mean.rows());
    // sum(mean^2 + e^lv - lv) - B*d, then halved and averaged.
    const double ones = static_cast<double>(mean.value().size());
    return ad::scale(ad::add_scalar(ad::sum(terms), -ones), 0.5 / batch);
}

ad::Var contrastive_from_scores(const ad::Var& scores, double temperature) {
    if (temperature <= 0) throw ConfigError("contrastive temperature must be > 0");
    if (scores.cols() < 2) throw ConfigError("contrastive loss needs at least one negative");
    const std::vector<int> targets(static_cast<std::size_t>(scores.rows()), 0);
    return ad::softmax_cross_entropy(ad::scale(scores, 1.0 / temperature), targets);
}

ad::Var discriminator_scores(ad::Graph& g, const std::string& prefix, const ad::Var& d_rows, const ad::Var& v_rows) {
    const ad::Var parts[] = {d_rows, v_rows};
    const ad::Var hidden = ad::relu(ad::linear(ad::concat_cols(parts), g.param(prefix + ".l1.w"), g.param(prefix + ".l1.b")));
    return ad::linear(hidden, g.param(prefix + ".l2.w"), g.param(prefix + ".l2.b"));
}

ad::Var contrastive_loss(ad::Graph& g, const std::string& prefix, const ad::Var& d, const ad::Var& positive,
                         const ad::Var& negatives, double temperature) {
    if (negatives.rows() < 1) throw ConfigError("contrastive loss needs at least one negative");
    if (d.rows() != 1 || positive.rows() != 1) throw ShapeError("contrastive loss: D and positive must be single rows");
    const ad::Var candidates_parts[] = {positive, negatives};
    const ad::Var candidates = ad::concat_rows(candidates_parts);
    const int n = static_cast<int>(candidates.rows());
    const ad::Var scores = discriminator_scores(g, prefix, ad::repeat_rows(d, n), candidates);
    return contrastive_from_scores(ad::reshape(scores, 1, n), temperature);
}

CmcBatch sample_cmc_batch(const std::vector<int>& series_of_sample, int length, int positives, int negatives, Rng& rng) {
    if (positives < 1 || negatives < 1) throw ConfigError("CMC sampling needs P >= 1 and K >= 1");
    if (length < 1) throw ConfigError("CMC sampling needs sequences of length >= 1");
    const int batch = static_cast<int>(series_of_sample.size());
    CmcBatch out;
    out.negatives_per_positive = negatives;
    std::uniform_int_distribution<int> step(0, length - 1);
    std::vector<int> others;
    for (int b = 0; b < batch; ++b) {
        others.clear();
        for (int o = 0; o < batch; ++o) {
            if (series_of_sample[o] != series_of_sample[b]) others.push_back(o);
        }
        if (others.empty()) throw SamplingError("CMC sampling: mini-batch has no sample from another series");
        std::uniform_int_distribution<std::size_t> pick(0, others.size() - 1);
        for (View view : {View::short_term, View::long_term}) {
            for (int p = 0; p < positives; ++p) {
                CmcEntry e;
                e.sample = b;
                e.view = view;
                e.positive_row = b * length + step(rng);
                e.negative_rows.reserve(static_cast<std::size_t>(negatives));
                for (int k = 0; k < negatives; ++k) {
                    const int o = others[pick(rng)];
                    e.negative_rows.push_back(o * length + step(rng));
                }
                out.entries.push_back(std::move(e));
            }
        }
    }
    return out;
}

CmcTerms cmc_loss(ad::Graph& g, const CmcBatch& batch, const ad::Var& d, const ContextEncoding& enc, double alpha,
                  double temperature) {
    if (alpha < 0) throw ConfigError("alpha must be >= 0");
    const int k1 = batch.negatives_per_positive + 1;
    auto view_term = [&](View view, const nets::Seq& rep, const std::string& prefix) {
        std::vector<int> d_rows, v_rows;
        for (const auto& e : batch.entries) {
            if (e.view != view) continue;
            for (int k = 0; k < k1; ++k) d_rows.push_back(e.sample);
            v_rows.push_back(e.positive_row);
            v_rows.insert(v_rows.end(), e.negative_rows.begin(), e.negative_rows.end());
        }
        if (d_rows.empty()) throw SamplingError("CMC batch has no positives for a view");
        const ad::Var scores = discriminator_scores(g, prefix, ad::gather_rows(d, d_rows), ad::gather_rows(rep.data, v_rows));
        const auto n = static_cast<Eigen::Index>(d_rows.size() / k1);
        return contrastive_from_scores(ad::reshape(scores, n, k1), temperature);
    };
    CmcTerms t;
    t.short_term = view_term(View::short_term, enc.views.v_sh, "disc.f1");
    t.long_term = view_term(View::long_term, enc.views.v_lo, "disc.f2");
    t.kl = kl_loss(enc.mean, enc.log_var);
    t.total = ad::add(ad::add(t.short_term, t.long_term), ad::scale(t.kl, alpha));
    return t;
}

}  // namespace deepdgl::context
