#include "deepdgl/data.hpp"
#include "deepdgl/model.hpp"
#include "deepdgl/vq.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace deepdgl;

namespace {

model::ModelConfig desk_config(model::Variant v) {
    model::ModelConfig c;
    c.input_steps = 48;
    c.horizon = 12;
    c.conv_channels = {16, 16, 16, 16};
    c.enc_heads = {2, 2};
    c.enc_dims = {16, 16};
    c.dec_heads = {2, 1};
    c.dec_dims = {16, 1};
    c.codebook_size = 16;
    c.context_dim = 8;
    c.variant = v;
    return c;
}

std::vector<data::WindowSample> batch_of(const model::ModelConfig& cfg, int series, int per_series) {
    data::SyntheticSpec spec;
    spec.n_series = series;
    spec.n_steps = 400;
    auto c = data::generate_synthetic(spec).collection;
    c.covariates = data::phase_covariates(c.n_steps(), cfg.phase_period);
    std::vector<data::WindowSample> out;
    for (int s = 0; s < series; ++s) {
        for (int k = 0; k < per_series; ++k) out.push_back(data::make_window(c, s, 5 * k, cfg.input_steps, cfg.horizon));
    }
    return out;
}

void BM_NearestCodes(benchmark::State& state) {
    const int rows = static_cast<int>(state.range(0));
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n;
    Matrix z(rows, 32), book(64, 32);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = n(rng);
    for (Eigen::Index i = 0; i < book.size(); ++i) book.data()[i] = n(rng);
    for (auto _ : state) benchmark::DoNotOptimize(vq::nearest_codes(z, book));
    state.SetItemsProcessed(state.iterations() * rows);
}
BENCHMARK(BM_NearestCodes)->Arg(256)->Arg(4096);

void BM_TrainStep(benchmark::State& state) {
    const auto variant = static_cast<model::Variant>(state.range(0));
    const model::ModelConfig cfg = desk_config(variant);
    const ParameterSet params = model::init_params(cfg, 3);
    const auto batch = batch_of(cfg, 8, 4);
    for (auto _ : state) {
        ad::Graph g(params);
        auto rngs = model::TrainRngs::from_seed(5);
        const model::ForwardResult fr = model::forward_train(g, batch, cfg, rngs);
        g.backward(fr.total);
        benchmark::DoNotOptimize(g.param_grads());
    }
    state.SetLabel(model::to_string(variant));
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(batch.size()));
}
BENCHMARK(BM_TrainStep)->DenseRange(0, 4)->Unit(benchmark::kMillisecond);

void BM_Forecast(benchmark::State& state) {
    const model::ModelConfig cfg = desk_config(model::Variant::full);
    const ParameterSet params = model::init_params(cfg, 3);
    const auto windows = batch_of(cfg, 8, 4);
    for (auto _ : state) benchmark::DoNotOptimize(model::forecast(params, cfg, windows));
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(windows.size()));
}
BENCHMARK(BM_Forecast)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
