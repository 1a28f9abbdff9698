#pragma once

#include "deepdgl/autodiff.hpp"
#include "deepdgl/nets.hpp"
#include "deepdgl/random.hpp"

#include <string>
#include <vector>

namespace deepdgl::paramgen {

inline constexpr int kDefaultHidden = 64;
inline constexpr double kDefaultGain = 0.05;

struct LayoutEntry {
    std::string name;
    int rows = 0;
    int cols = 0;
    std::size_t offset = 0;

    std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

// Flat layout of one attention block, in the order of
// nets::block_param_shapes (row-major per entry).
struct BlockLayout {
    nets::AttentionBlockConfig block;
    std::vector<LayoutEntry> entries;
    std::size_t total_size = 0;
};

BlockLayout layout_for(const nets::AttentionBlockConfig& cfg);

// Concatenates the block stored under `prefix` into one flat vector.
Eigen::VectorXd flatten(const ParameterSet& ps, const std::string& prefix, const BlockLayout& layout);
// Inverse of flatten: one named matrix per layout entry.
ParameterSet unflatten(const Eigen::VectorXd& flat, const std::string& prefix, const BlockLayout& layout);

struct HyperConfig {
    int context_dim = 16;
    int hidden = kDefaultHidden;
    double gain = kDefaultGain;
};

// W2 starts at zero and b2 at a standard block initialization divided by
// the gain, so the initial generated block is that standard block for
// every D.
void init_hypernetwork(ParameterSet& ps, const std::string& prefix, const HyperConfig& cfg, const BlockLayout& layout,
                       Rng& rng);

// gain * (W2 relu(W1 D + b1) + b2) for each row of d ([B x d_D]); the result
// is [B x total_size].
ad::Var generate(ad::Graph& g, const std::string& prefix, const ad::Var& d, double gain);

struct GeneratedBlockParams {
    Eigen::VectorXd flat;
    BlockLayout layout;
};

GeneratedBlockParams generate(const Eigen::VectorXd& d, const ParameterSet& hyper, const std::string& prefix,
                              const BlockLayout& layout, double gain);

// Splits generated rows into per-sequence weights for nets::attention_block.
nets::BlockWeights generated_weights(const ad::Var& flat, const BlockLayout& layout);

nets::Seq apply_generated(const nets::Seq& h, const ad::Var& flat, const BlockLayout& layout);

}  // namespace deepdgl::paramgen
