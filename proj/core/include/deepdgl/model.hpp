#pragma once

#include "deepdgl/autodiff.hpp"
#include "deepdgl/context.hpp"
#include "deepdgl/data.hpp"
#include "deepdgl/nets.hpp"
#include "deepdgl/paramgen.hpp"
#include "deepdgl/random.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace deepdgl::model {

enum class Variant { full, conv_transformer, no_cmc, global_only, local_only };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct ModelConfig {
    int input_steps = 72;  // T
    int horizon = 24;      // tau
    std::vector<int> conv_kernels{5, 3, 3, 3};
    std::vector<int> conv_channels{64, 64, 64, 64};
    std::vector<int> enc_heads{4, 4, 4};
    std::vector<int> enc_dims{32, 32, 32};
    std::vector<int> dec_heads{4, 4, 4, 1};
    std::vector<int> dec_dims{32, 32, 32, 1};
    int ffn_ratio = 4;
    int codebook_size = 64;  // F
    int context_dim = 16;    // d_D
    double alpha = 0.7;
    double gamma = 0.2;
    double temperature = 0.1;
    int positives = 8;   // P
    int negatives = 32;  // K
    int hyper_hidden = paramgen::kDefaultHidden;
    double hyper_gain = paramgen::kDefaultGain;
    int disc_hidden = 64;
    int n_covariates = 2;
    int phase_period = 24;
    Variant variant = Variant::full;

    void validate() const;

    nets::ConvStackConfig conv() const;
    nets::AttentionBlockConfig encoder_block(std::size_t j) const;
    nets::AttentionBlockConfig decoder_block(std::size_t j) const;
    context::ContextNetConfig context_net() const;
    int context_width() const;  // width of the decoder's cross-attention context

    bool uses_global() const;
    bool uses_local() const;
    bool uses_vq() const { return variant == Variant::full || variant == Variant::no_cmc || variant == Variant::global_only; }
    bool uses_cmc() const { return variant == Variant::full || variant == Variant::local_only; }

    std::map<std::string, std::string> to_key_values() const;
    static ModelConfig from_key_values(const std::map<std::string, std::string>& kv);
};

// Every parameter of the configured variant, named by component:
// trunk.* (shared conv and attention blocks), global.last.*, vq.codebook,
// ctx.*, disc.*, hyper.*, dec.*.
ParameterSet init_params(const ModelConfig& cfg, std::uint64_t seed);

paramgen::BlockLayout local_layout(const ModelConfig& cfg);

struct LossBreakdown {
    double pred = 0.0;
    double cmc = 0.0;
    double vq = 0.0;
    double total = 0.0;
};

// Graph-side inputs of a mini-batch.
struct BatchInputs {
    nets::Seq values;          // [B*T x 1]
    ad::Var covariates;        // [B*T x n_cov]
    nets::Seq decoder_values;  // [B*tau x 1]
    ad::Var future_covariates; // [B*tau x n_cov]
    Matrix targets;            // [B x tau], normalized
    std::vector<int> series;
};

// Teacher-forced decoder inputs are [x_T, y_1 .. y_{tau-1}].
BatchInputs make_inputs(ad::Graph& g, std::span<const data::WindowSample> batch, const ModelConfig& cfg);

struct GlobalEncoding {
    nets::Seq output;
    ad::Var z;   // pre-quantization conv features (VQ variants)
    ad::Var zq;  // codebook rows selected for z
    std::vector<int> codes;
};

nets::Seq trunk_features(ad::Graph& g, const nets::Seq& values, const ModelConfig& cfg);
GlobalEncoding encode_global(ad::Graph& g, const nets::Seq& conv_features, const ad::Var& covariates,
                             const ModelConfig& cfg, bool quantize);
nets::Seq encode_local(ad::Graph& g, const nets::Seq& conv_features, const ad::Var& covariates, const ad::Var& d,
                       const ModelConfig& cfg);
// Normalized predictions, [B*tau x 1].
ad::Var decode(ad::Graph& g, const nets::Seq& decoder_values, const ad::Var& future_covariates,
               const nets::Seq& encoder_context, const ModelConfig& cfg);

// Mean over batch of (1/tau) * sum |target - pred|.
ad::Var prediction_loss(const ad::Var& pred, const ad::Var& target);

struct TrainRngs {
    Rng negatives;
    Rng reparam;

    static TrainRngs from_seed(std::uint64_t seed, std::uint64_t index = 0);
};

struct ForwardResult {
    ad::Var total;
    ad::Var pred_loss;
    ad::Var cmc_loss;  // invalid when the variant has no CMC term
    ad::Var vq_loss;   // invalid when the variant has no VQ term
    ad::Var predictions;
    LossBreakdown losses;
    std::vector<int> codes;
    Matrix encoder_outputs;  // pre-quantization features, for dead-code resets
};

ForwardResult forward_train(ad::Graph& g, std::span<const data::WindowSample> batch, const ModelConfig& cfg,
                            TrainRngs& rngs);

// Autoregressive forecasts in normalized units, [n x tau]. The context
// variable is the posterior mean; no parameter is modified.
Matrix forecast_normalized(const ParameterSet& params, const ModelConfig& cfg,
                           std::span<const data::WindowSample> windows);
// Forecasts de-normalized with each window's statistics, [n x tau].
Matrix forecast(const ParameterSet& params, const ModelConfig& cfg, std::span<const data::WindowSample> windows);

// Window built from a raw history of length T and its future covariates
// (empty when the model has no covariates); target is left zero.
data::WindowSample window_from_history(const Eigen::VectorXd& history, const Matrix& history_covariates,
                                       const Matrix& future_covariates, const ModelConfig& cfg);

}  // namespace deepdgl::model
