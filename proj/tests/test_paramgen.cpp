#include "deepdgl/errors.hpp"
#include "deepdgl/nets.hpp"
#include "deepdgl/paramgen.hpp"
#include "support/gradcheck.hpp"

#include <gtest/gtest.h>

using namespace deepdgl;
using namespace deepdgl::paramgen;
using deepdgl::testing::check_param_gradients;
using deepdgl::testing::random_matrix;
using deepdgl::testing::rel_error;

namespace {

nets::AttentionBlockConfig block(int d, int heads, int f) {
    nets::AttentionBlockConfig c;
    c.model_dim = d;
    c.n_heads = heads;
    c.ffn_hidden = f;
    return c;
}

TEST(Layout, DefaultBlockSize) {
    const auto layout = layout_for(block(32, 4, 128));
    EXPECT_EQ(layout.total_size, 12704u);
    std::size_t sum = 0, offset = 0;
    for (const auto& e : layout.entries) {
        EXPECT_EQ(e.offset, offset);
        offset += e.size();
        sum += e.size();
    }
    EXPECT_EQ(sum, layout.total_size);
}

TEST(Layout, MatchesParamCount) {
    for (const auto& c : {block(4, 2, 8), block(8, 1, 8), block(16, 4, 64), block(32, 4, 128), block(1, 1, 4)}) {
        EXPECT_EQ(layout_for(c).total_size, nets::param_count(c));
    }
    auto cross = block(8, 2, 32);
    cross.cross = true;
    cross.context_dim = 12;
    EXPECT_EQ(layout_for(cross).total_size, nets::param_count(cross));
}

TEST(Layout, Deterministic) {
    const auto a = layout_for(block(8, 2, 16)), b = layout_for(block(8, 2, 16));
    ASSERT_EQ(a.entries.size(), b.entries.size());
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        EXPECT_EQ(a.entries[i].name, b.entries[i].name);
        EXPECT_EQ(a.entries[i].offset, b.entries[i].offset);
    }
}

TEST(Layout, FlattenRoundTripIsBitwise) {
    const auto cfg = block(8, 2, 16);
    const auto layout = layout_for(cfg);
    Rng rng(1);
    ParameterSet ps;
    nets::init_block(ps, "blk", cfg, rng);
    for (auto& [name, m] : ps) m = random_matrix(m.rows(), m.cols(), rng);
    const Eigen::VectorXd flat = flatten(ps, "blk", layout);
    EXPECT_TRUE(unflatten(flat, "blk", layout) == ps);
    EXPECT_EQ(flatten(unflatten(flat, "blk", layout), "blk", layout), flat);
    EXPECT_THROW(unflatten(flat.head(flat.size() - 1), "blk", layout), ShapeError);
}

class Hyper : public ::testing::Test {
protected:
    void SetUp() override {
        layout = layout_for(block(4, 2, 8));
        cfg.context_dim = 3;
        cfg.hidden = 6;
        cfg.gain = 0.05;
        Rng rng(2);
        init_hypernetwork(ps, "hyper", cfg, layout, rng);
    }
    void randomize_second_layer(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        ps.at("hyper.l2.w") = random_matrix(cfg.hidden, static_cast<Eigen::Index>(layout.total_size), rng);
    }

    BlockLayout layout;
    HyperConfig cfg;
    ParameterSet ps;
};

TEST_F(Hyper, ZeroSecondLayerGivesGainTimesBias) {
    EXPECT_EQ(ps.at("hyper.l2.w"), Matrix::Zero(cfg.hidden, static_cast<Eigen::Index>(layout.total_size)));
    Eigen::VectorXd d1(3), d2(3);
    d1 << 0.1, -2, 3;
    d2 << 5, 0.5, -1;
    const auto a = generate(d1, ps, "hyper", layout, cfg.gain);
    const auto b = generate(d2, ps, "hyper", layout, cfg.gain);
    const Eigen::VectorXd expected = cfg.gain * ps.at("hyper.l2.b").row(0).transpose();
    EXPECT_TRUE(a.flat.isApprox(expected, 1e-15));
    EXPECT_EQ(a.flat, b.flat);
}

TEST_F(Hyper, InitialBlockIsAStandardBlock) {
    const auto gen = generate(Eigen::VectorXd::Zero(3), ps, "hyper", layout, cfg.gain);
    const ParameterSet blk = unflatten(gen.flat, "b", layout);
    for (const auto& [name, m] : blk) {
        if (name.ends_with("gamma")) EXPECT_TRUE(m.isApproxToConstant(1.0, 1e-12)) << name;
        if (name.ends_with(".bq") || name.ends_with("beta")) EXPECT_LT(m.cwiseAbs().maxCoeff(), 1e-12) << name;
    }
    EXPECT_GT(blk.at("b.self.wq").cwiseAbs().maxCoeff(), 0.0);
}

TEST_F(Hyper, FirstOrderResponseToD) {
    randomize_second_layer(3);
    std::mt19937_64 rng(4);
    const Eigen::VectorXd d = random_matrix(3, 1, rng);
    const Matrix w1 = ps.at("hyper.l1.w");  // [d_D x hidden]
    const RowVector b1 = ps.at("hyper.l1.b");
    const Matrix w2 = ps.at("hyper.l2.w");
    const RowVector pre = d.transpose() * w1 + b1;
    const double delta = 1e-5;
    for (int j = 0; j < 3; ++j) {
        Eigen::VectorXd up = d, down = d;
        up(j) += delta;
        down(j) -= delta;
        const Eigen::VectorXd numeric =
            (generate(up, ps, "hyper", layout, cfg.gain).flat - generate(down, ps, "hyper", layout, cfg.gain).flat) /
            (2 * delta);
        RowVector masked = w1.row(j);
        for (int h = 0; h < cfg.hidden; ++h) masked(h) *= pre(h) > 0 ? 1.0 : 0.0;
        const Eigen::VectorXd analytic = cfg.gain * (masked * w2).transpose();
        double worst = 0.0;
        for (Eigen::Index i = 0; i < analytic.size(); ++i) worst = std::max(worst, rel_error(analytic(i), numeric(i)));
        EXPECT_LT(worst, 1e-6) << "D_" << j;
    }
}

TEST_F(Hyper, GradientsMatchFiniteDifferences) {
    randomize_second_layer(5);
    std::mt19937_64 rng(6);
    ps.add("d", random_matrix(2, 3, rng));
    const Matrix h = random_matrix(2 * 5, 4, rng);
    const Matrix w = random_matrix(2 * 5, 4, rng);
    const auto r = check_param_gradients(ps, [&](ad::Graph& g) {
        const ad::Var flat = generate(g, "hyper", g.param("d"), cfg.gain);
        const nets::Seq out = apply_generated({g.constant(h), 2, 5}, flat, layout);
        return ad::sum(ad::hadamard(out.data, g.constant(w)));
    });
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST_F(Hyper, LipschitzInD) {
    randomize_second_layer(7);
    const double bound = cfg.gain * ps.at("hyper.l1.w").norm() * ps.at("hyper.l2.w").norm();
    std::mt19937_64 rng(8);
    for (int i = 0; i < 100; ++i) {
        const Eigen::VectorXd a = random_matrix(3, 1, rng, 3.0), b = random_matrix(3, 1, rng, 3.0);
        const double out = (generate(a, ps, "hyper", layout, cfg.gain).flat - generate(b, ps, "hyper", layout, cfg.gain).flat).norm();
        EXPECT_LE(out, bound * (a - b).norm() + 1e-12);
    }
}

TEST_F(Hyper, DifferentContextsSpecializeOutputs) {
    randomize_second_layer(9);
    std::mt19937_64 rng(10);
    const Matrix one = random_matrix(5, 4, rng);
    Matrix h(10, 4);
    h << one, one;
    Matrix d(2, 3);
    d << 1.0, -0.5, 2.0, -1.5, 0.7, 0.3;
    ad::Graph g(ps, false);
    const nets::Seq out = apply_generated({g.constant(h), 2, 5}, generate(g, "hyper", g.constant(d), cfg.gain), layout);
    EXPECT_GT((out.data.value().topRows(5) - out.data.value().bottomRows(5)).norm(), 1e-6);
}

TEST(Apply, EquivalentToStoredBlock) {
    const auto cfg = block(4, 2, 8);
    const auto layout = layout_for(cfg);
    Rng rng(11);
    ParameterSet stored;
    nets::init_block(stored, "blk", cfg, rng);
    std::mt19937_64 r(12);
    for (auto& [name, m] : stored) m = random_matrix(m.rows(), m.cols(), r);
    const Matrix h = random_matrix(3 * 6, 4, r);
    const Eigen::VectorXd flat = flatten(stored, "blk", layout);
    Matrix rows(3, flat.size());
    for (int b = 0; b < 3; ++b) rows.row(b) = flat.transpose();

    ad::Graph g(stored, false);
    const nets::Seq expected = nets::attention_block({g.constant(h), 3, 6}, g, "blk", cfg);
    const nets::Seq got = apply_generated({g.constant(h), 3, 6}, g.constant(rows), layout);
    EXPECT_TRUE(got.data.value().isApprox(expected.data.value(), 1e-12));
}

TEST(Apply, ShapeMismatch) {
    const auto layout = layout_for(block(4, 2, 8));
    ad::Graph g;
    const nets::Seq h{g.constant(Matrix::Zero(6, 4)), 2, 3};
    EXPECT_THROW(apply_generated(h, g.constant(Matrix::Zero(1, static_cast<Eigen::Index>(layout.total_size))), layout),
                 ShapeError);
    EXPECT_THROW(apply_generated(h, g.constant(Matrix::Zero(2, 5)), layout), ShapeError);
}

}  // namespace
