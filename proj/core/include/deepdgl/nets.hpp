#pragma once

#include "deepdgl/autodiff.hpp"
#include "deepdgl/parameters.hpp"

#include <optional>
#include <random>
#include <string>
#include <vector>

namespace deepdgl::nets {

// A batch of equal-length sequences; data is [batch*length x width].
struct Seq {
    ad::Var data;
    int batch = 1;
    int length = 1;

    int width() const { return static_cast<int>(data.cols()); }
};

struct ConvStackConfig {
    std::vector<int> kernel_sizes;
    std::vector<int> channels;
    // Test hooks; both are on in every model configuration.
    bool layer_norm = true;
    bool activation = true;

    void validate(int in_channels) const;
    int out_channels() const { return channels.empty() ? 0 : channels.back(); }
};

struct AttentionBlockConfig {
    int model_dim = 32;
    int n_heads = 4;
    int ffn_hidden = 128;
    bool masked = false;
    bool cross = false;
    // Feature width of the cross-attention context (0 means model_dim).
    int context_dim = 0;
    // Post-norm layer norms; switched off for width-1 blocks, where
    // normalizing a single feature would erase it.
    bool layer_norm = true;

    void validate() const;
    int context_width() const { return context_dim > 0 ? context_dim : model_dim; }
};

// Exact parameter count of one attention block.
std::size_t param_count(const AttentionBlockConfig& cfg);

// Per-entry (name, rows, cols) listing of an attention block in its fixed
// order: self-attention projections, optional cross-attention projections,
// FFN, then layer norms.
struct ParamShape {
    std::string name;
    int rows = 0;
    int cols = 0;

    std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};
std::vector<ParamShape> block_param_shapes(const AttentionBlockConfig& cfg);

// Weight handles of one attention block. When `grouped` is set every entry
// is a [batch x rows*cols] matrix holding one copy per sequence.
struct BlockWeights {
    std::vector<ad::Var> entries;  // parallel to block_param_shapes(cfg)
    bool grouped = false;
};

BlockWeights bind_block(ad::Graph& g, const std::string& prefix, const AttentionBlockConfig& cfg);

// Fan-in-scaled uniform projections, zero biases, unit layer-norm gains.
void init_linear(ParameterSet& ps, const std::string& prefix, int in, int out, std::mt19937_64& rng);
void init_block(ParameterSet& ps, const std::string& prefix, const AttentionBlockConfig& cfg, std::mt19937_64& rng);
void init_conv_stack(ParameterSet& ps, const std::string& prefix, int in_channels, const ConvStackConfig& cfg,
                     std::mt19937_64& rng);
// Standard initialization of an attention block flattened in layout order.
Eigen::VectorXd init_block_flat(const AttentionBlockConfig& cfg, std::mt19937_64& rng);

Seq linear(const Seq& x, ad::Graph& g, const std::string& prefix);

// Stack of causal conv -> layer norm -> ReLU blocks; output length equals
// input length and step t only sees input steps <= t.
Seq causal_conv_stack(const Seq& x, ad::Graph& g, const std::string& prefix, const ConvStackConfig& cfg);

// (Masked) self-attention, optional cross-attention over `context`, then a
// ReLU feed-forward network; each sublayer is residual + post layer norm.
Seq attention_block(const Seq& h, const BlockWeights& w, const AttentionBlockConfig& cfg,
                    const std::optional<Seq>& context = std::nullopt);

Seq attention_block(const Seq& h, ad::Graph& g, const std::string& prefix, const AttentionBlockConfig& cfg,
                    const std::optional<Seq>& context = std::nullopt);

}  // namespace deepdgl::nets
