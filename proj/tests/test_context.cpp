#include "deepdgl/context.hpp"
#include "deepdgl/errors.hpp"
#include "deepdgl/training.hpp"
#include "support/gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace deepdgl;
using namespace deepdgl::context;
using deepdgl::testing::check_param_gradients;
using deepdgl::testing::random_matrix;

namespace {

ContextPosterior posterior(std::initializer_list<double> mean, std::initializer_list<double> log_var) {
    ContextPosterior p;
    p.mean = Eigen::Map<const Eigen::VectorXd>(mean.begin(), static_cast<Eigen::Index>(mean.size()));
    p.log_var = Eigen::Map<const Eigen::VectorXd>(log_var.begin(), static_cast<Eigen::Index>(log_var.size()));
    return p;
}

// Monte Carlo estimate of E_q[log q(z) - log p(z)] for diagonal Gaussians.
double kl_monte_carlo(const ContextPosterior& post, int n, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        double log_ratio = 0.0;
        for (Eigen::Index j = 0; j < post.mean.size(); ++j) {
            const double sd = std::exp(0.5 * post.log_var(j));
            const double e = normal(rng);
            const double z = post.mean(j) + sd * e;
            log_ratio += -0.5 * e * e - std::log(sd) + 0.5 * z * z;
        }
        total += log_ratio;
    }
    return total / n;
}

double scores_loss(const Matrix& scores, double temperature) {
    ad::Graph g;
    return contrastive_from_scores(g.constant(scores), temperature).scalar();
}

ContextNetConfig tiny_net() {
    ContextNetConfig cfg;
    cfg.conv.kernel_sizes = {3, 2};
    cfg.conv.channels = {4, 4};
    nets::AttentionBlockConfig b;
    b.model_dim = 4;
    b.n_heads = 2;
    b.ffn_hidden = 8;
    cfg.blocks = {b, b};
    cfg.context_dim = 3;
    cfg.disc_hidden = 5;
    return cfg;
}

ParameterSet tiny_params(const ContextNetConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    ParameterSet ps;
    init_context_net(ps, cfg, rng);
    init_discriminator(ps, "disc.f1", cfg.context_dim, cfg.conv.out_channels(), cfg.disc_hidden, rng);
    init_discriminator(ps, "disc.f2", cfg.context_dim, cfg.blocks.back().model_dim, cfg.disc_hidden, rng);
    return ps;
}

TEST(Kl, ClosedFormExamples) {
    EXPECT_EQ(kl_divergence(posterior({0, 0}, {0, 0})), 0.0);
    EXPECT_DOUBLE_EQ(kl_divergence(posterior({1, 0}, {0, 0})), 0.5);
}

TEST(Kl, MatchesMonteCarlo) {
    Rng rng(11);
    for (const auto& p : {posterior({1, 0}, {0, 0}), posterior({0.3, -0.7, 1.2}, {-0.5, 0.4, 0.0})}) {
        EXPECT_NEAR(kl_monte_carlo(p, 200000, rng), kl_divergence(p), 0.02);
    }
}

TEST(Kl, NonNegativeAndClamped) {
    Rng rng(12);
    std::uniform_real_distribution<double> u(-5, 5);
    for (int i = 0; i < 200; ++i) {
        ContextPosterior p;
        p.mean = Eigen::VectorXd::NullaryExpr(4, [&]() { return u(rng); });
        p.log_var = Eigen::VectorXd::NullaryExpr(4, [&]() { return u(rng); });
        EXPECT_GE(kl_divergence(p), 0.0);
    }
    const auto wide = posterior({0}, {50});
    const auto at_bound = posterior({0}, {kLogVarMax});
    EXPECT_EQ(kl_divergence(wide), kl_divergence(at_bound));
}

TEST(Kl, GraphVersionIsBatchMean) {
    std::mt19937_64 rng(13);
    const Matrix mean = random_matrix(3, 4, rng), lv = random_matrix(3, 4, rng);
    ad::Graph g;
    const double v = kl_loss(g.constant(mean), g.constant(lv)).scalar();
    double expected = 0.0;
    for (int b = 0; b < 3; ++b) {
        ContextPosterior p{mean.row(b).transpose(), lv.row(b).transpose()};
        expected += kl_divergence(p) / 3.0;
    }
    EXPECT_NEAR(v, expected, 1e-13);
}

TEST(Kl, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(14);
    ParameterSet ps;
    ps.add("mean", random_matrix(2, 5, rng));
    ps.add("log_var", random_matrix(2, 5, rng, 2.0));
    const auto r = check_param_gradients(ps, [](ad::Graph& g) { return kl_loss(g.param("mean"), g.param("log_var")); });
    EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

TEST(Contrastive, UniformScoresGiveLogKPlusOne) {
    for (int k : {1, 2, 8, 32}) {
        EXPECT_NEAR(scores_loss(Matrix::Constant(3, k + 1, 0.37), 0.1), std::log(k + 1.0), 1e-12) << "K=" << k;
    }
    EXPECT_NEAR(scores_loss(Matrix::Zero(1, 33), 1.0), 3.4965, 1e-4);
}

TEST(Contrastive, ScalarOracle) {
    Matrix s(1, 3);
    s << 1.0, 0.0, 0.0;
    const double e = std::exp(1.0);
    EXPECT_NEAR(scores_loss(s, 1.0), -std::log(e / (e + 2.0)), 1e-12);
    EXPECT_NEAR(scores_loss(s, 1.0), 0.5514, 1e-4);
}

TEST(Contrastive, ShiftInvarianceAndMargin) {
    std::mt19937_64 rng(15);
    const Matrix s = random_matrix(1, 9, rng, 3.0);
    for (double c : {-100.0, -1.0, 2.5, 40.0}) {
        EXPECT_NEAR(scores_loss((s.array() + c).matrix(), 0.1), scores_loss(s, 0.1), 1e-9);
    }
    double previous = std::log(9.0);
    for (double margin : {1.0, 5.0, 20.0, 200.0}) {
        Matrix m = Matrix::Zero(1, 9);
        m(0, 0) = margin;
        const double l = scores_loss(m, 1.0);
        EXPECT_GE(l, 0.0);
        EXPECT_LT(l, previous);
        previous = l;
    }
    EXPECT_LT(previous, 1e-12);
}

TEST(Contrastive, ArgumentErrors) {
    ad::Graph g;
    EXPECT_THROW(contrastive_from_scores(g.constant(Matrix::Zero(1, 1)), 1.0), ConfigError);
    EXPECT_THROW(contrastive_from_scores(g.constant(Matrix::Zero(1, 3)), 0.0), ConfigError);
    Rng rng(1);
    ParameterSet ps;
    init_discriminator(ps, "disc", 2, 3, 4, rng);
    ad::Graph g2(ps);
    EXPECT_THROW(contrastive_loss(g2, "disc", g2.constant(Matrix::Zero(1, 2)), g2.constant(Matrix::Zero(1, 3)),
                                  g2.constant(Matrix(0, 3)), 1.0),
                 ConfigError);
}

TEST(Contrastive, DiscriminatorIsLearnable) {
    const int dim = 16, k = 32;
    const double temperature = 0.1;
    Rng rng(16);
    ParameterSet ps;
    init_discriminator(ps, "disc", dim, dim, 64, rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto draw = [&](int rows, const RowVector& center) {
        Matrix m(rows, dim);
        for (int r = 0; r < rows; ++r) {
            for (int j = 0; j < dim; ++j) m(r, j) = center(j) + 0.1 * normal(rng);
        }
        return m;
    };
    auto loss_at = [&](ad::Graph& g) {
        RowVector d(dim);
        for (int j = 0; j < dim; ++j) d(j) = normal(rng);
        return contrastive_loss(g, "disc", g.constant(d), g.constant(draw(1, d)), g.constant(draw(k, -d)), temperature);
    };
    training::Adam adam;
    for (int step = 0; step < 200; ++step) {
        ad::Graph g(ps);
        g.backward(loss_at(g));
        training::Gradients grads;
        for (auto& [name, grad] : g.param_grads()) grads[name] = grad;
        adam.step(ps, grads, 1e-3);
    }
    double final_loss = 0.0;
    for (int i = 0; i < 50; ++i) {
        ad::Graph g(ps, false);
        final_loss += loss_at(g).scalar() / 50;
    }
    EXPECT_LT(final_loss, std::log(k + 1.0) / 4.0);
}

TEST(Sampling, InferReturnsMean) {
    Rng rng(17);
    const auto p = posterior({0.5, -1.0}, {1.0, 2.0});
    EXPECT_EQ(sample_context(p, SampleMode::infer, rng), p.mean);
}

TEST(Sampling, DegenerateVariance) {
    Rng rng(18);
    const auto p = posterior({0.5, -1.0, 3.0}, {-20, -20, -20});
    EXPECT_LT((sample_context(p, SampleMode::train, rng) - p.mean).cwiseAbs().maxCoeff(), 1e-4);
    const double sd = std::exp(-10.0);
    for (int i = 0; i < 1000; ++i) EXPECT_LT((sample_context(p, SampleMode::train, rng) - p.mean).cwiseAbs().maxCoeff(), 6 * sd);
}

TEST(Sampling, MonteCarloMean) {
    Rng rng(19);
    const auto p = posterior({0.5, -1.0, 2.0}, {0.0, 1.0, -1.0});
    const int n = 1000000;
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(3);
    for (int i = 0; i < n; ++i) acc += sample_context(p, SampleMode::train, rng);
    acc /= n;
    for (int j = 0; j < 3; ++j) {
        const double sd = std::exp(0.5 * p.log_var(j));
        EXPECT_LT(std::abs(acc(j) - p.mean(j)), 3.0 * sd / 1000.0);
    }
}

TEST(Sampling, ReparameterizedGradient) {
    std::mt19937_64 rng(20);
    ParameterSet ps;
    ps.add("mean", random_matrix(2, 3, rng));
    ps.add("log_var", random_matrix(2, 3, rng));
    const Matrix w = random_matrix(2, 3, rng);
    const auto r = check_param_gradients(ps, [&](ad::Graph& g) {
        Rng local(5);
        const ad::Var s = sample_context(g.param("mean"), g.param("log_var"), SampleMode::train, local);
        return ad::sum(ad::hadamard(s, g.constant(w)));
    });
    EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

TEST(CmcSampling, Constraints) {
    const std::vector<int> series{0, 0, 1, 2, 2, 3};
    const int length = 7, p = 8, k = 32;
    Rng rng(21);
    const auto batch = sample_cmc_batch(series, length, p, k, rng);
    EXPECT_EQ(batch.negatives_per_positive, k);
    ASSERT_EQ(batch.entries.size(), series.size() * 2 * p);
    for (const auto& e : batch.entries) {
        EXPECT_EQ(e.positive_row / length, e.sample);
        ASSERT_EQ(e.negative_rows.size(), static_cast<std::size_t>(k));
        for (int row : e.negative_rows) {
            ASSERT_GE(row, 0);
            ASSERT_LT(row, static_cast<int>(series.size()) * length);
            EXPECT_NE(series[row / length], series[e.sample]);
        }
    }
    int short_count = 0;
    for (const auto& e : batch.entries) short_count += e.view == View::short_term;
    EXPECT_EQ(short_count, static_cast<int>(series.size()) * p);
}

TEST(CmcSampling, Deterministic) {
    const std::vector<int> series{0, 1, 2};
    Rng a(22), b(22);
    const auto x = sample_cmc_batch(series, 5, 2, 3, a);
    const auto y = sample_cmc_batch(series, 5, 2, 3, b);
    ASSERT_EQ(x.entries.size(), y.entries.size());
    for (std::size_t i = 0; i < x.entries.size(); ++i) {
        EXPECT_EQ(x.entries[i].positive_row, y.entries[i].positive_row);
        EXPECT_EQ(x.entries[i].negative_rows, y.entries[i].negative_rows);
    }
}

TEST(CmcSampling, Errors) {
    Rng rng(23);
    EXPECT_THROW(sample_cmc_batch({4, 4, 4}, 5, 1, 1, rng), SamplingError);
    EXPECT_THROW(sample_cmc_batch({0, 1}, 5, 0, 1, rng), ConfigError);
    EXPECT_THROW(sample_cmc_batch({0, 1}, 5, 1, 0, rng), ConfigError);
}

TEST(ContextNet, ShapesAndInitialization) {
    const auto cfg = tiny_net();
    const auto ps = tiny_params(cfg, 24);
    std::mt19937_64 rng(25);
    const int batch = 3, length = 6;
    ad::Graph g(ps, false);
    const Matrix x = random_matrix(batch * length, 1, rng);
    const auto enc = encode_context(g, {g.constant(x), batch, length}, g.constant(Matrix(batch * length, 0)), cfg);
    EXPECT_EQ(enc.views.v_sh.length, length);
    EXPECT_EQ(enc.views.v_lo.length, length);
    EXPECT_EQ(enc.views.v_sh.data.rows(), batch * length);
    EXPECT_EQ(enc.views.v_sh.width(), 4);
    EXPECT_EQ(enc.views.v_lo.width(), 4);
    EXPECT_EQ(enc.mean.rows(), batch);
    EXPECT_EQ(enc.mean.cols(), cfg.context_dim);
    EXPECT_EQ(enc.log_var.value(), Matrix::Zero(batch, cfg.context_dim));
    EXPECT_NE(enc.mean.value().row(0), enc.mean.value().row(1));
}

TEST(ContextNet, DeterministicForward) {
    const auto cfg = tiny_net();
    const auto ps = tiny_params(cfg, 26);
    std::mt19937_64 rng(27);
    const Matrix x = random_matrix(6, 1, rng);
    Matrix stacked(12, 1);
    stacked << x, x;
    ad::Graph g(ps, false);
    const auto enc = encode_context(g, {g.constant(stacked), 2, 6}, g.constant(Matrix(12, 0)), cfg);
    EXPECT_EQ(enc.mean.value().row(0), enc.mean.value().row(1));
    ad::Graph g2(ps, false);
    const auto again = encode_context(g2, {g2.constant(stacked), 2, 6}, g2.constant(Matrix(12, 0)), cfg);
    EXPECT_EQ(enc.mean.value(), again.mean.value());
}

TEST(Cmc, UniformScoresAndZeroAlpha) {
    auto cfg = tiny_net();
    auto ps = tiny_params(cfg, 28);
    for (const char* p : {"disc.f1", "disc.f2"}) {
        ps.at(std::string(p) + ".l2.w").setZero();
        ps.at(std::string(p) + ".l2.b").setConstant(0.3);
    }
    std::mt19937_64 rng(29);
    const int batch = 3, length = 5, k = 4;
    ad::Graph g(ps, false);
    const auto enc = encode_context(g, {g.constant(random_matrix(batch * length, 1, rng)), batch, length},
                                    g.constant(Matrix(batch * length, 0)), cfg);
    Rng r(30);
    const auto cmc = sample_cmc_batch({0, 1, 2}, length, 2, k, r);
    const auto terms = cmc_loss(g, cmc, enc.mean, enc, 0.0, 0.1);
    EXPECT_NEAR(terms.short_term.scalar(), std::log(k + 1.0), 1e-12);
    EXPECT_NEAR(terms.long_term.scalar(), std::log(k + 1.0), 1e-12);
    EXPECT_NEAR(terms.total.scalar(), 2.0 * std::log(k + 1.0), 1e-12);
    const auto with_kl = cmc_loss(g, cmc, enc.mean, enc, 0.7, 0.1);
    EXPECT_NEAR(with_kl.total.scalar(), 2.0 * std::log(k + 1.0) + 0.7 * with_kl.kl.scalar(), 1e-12);
    EXPECT_THROW(cmc_loss(g, cmc, enc.mean, enc, -0.1, 0.1), ConfigError);
}

TEST(Cmc, GradientsMatchFiniteDifferences) {
    const auto cfg = tiny_net();
    const auto ps = tiny_params(cfg, 31);
    std::mt19937_64 rng(32);
    const int batch = 3, length = 5;
    const Matrix x = random_matrix(batch * length, 1, rng);
    Rng r(33);
    const auto cmc = sample_cmc_batch({0, 1, 2}, length, 2, 3, r);
    const auto res = check_param_gradients(ps, [&](ad::Graph& g) {
        const auto enc = encode_context(g, {g.constant(x), batch, length}, g.constant(Matrix(batch * length, 0)), cfg);
        Rng local(34);
        const ad::Var d = sample_context(enc.mean, enc.log_var, SampleMode::train, local);
        return cmc_loss(g, cmc, d, enc, 0.7, 0.1).total;
    });
    EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
}

}  // namespace
