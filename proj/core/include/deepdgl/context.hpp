#pragma once

#include "deepdgl/autodiff.hpp"
#include "deepdgl/nets.hpp"
#include "deepdgl/random.hpp"

#include <string>
#include <vector>

namespace deepdgl::context {

inline constexpr double kLogVarMin = -20.0;
inline constexpr double kLogVarMax = 20.0;

// Diagonal Gaussian q(D|x); the prior is Normal(0, I).
struct ContextPosterior {
    Eigen::VectorXd mean;
    Eigen::VectorXd log_var;
};

enum class SampleMode { train, infer };

// Context recognition network: conv stack, attention blocks, then a
// single-layer LSTM whose final state feeds the mean and log-variance heads.
struct ContextNetConfig {
    nets::ConvStackConfig conv;
    std::vector<nets::AttentionBlockConfig> blocks;
    int n_covariates = 0;
    int context_dim = 16;
    int disc_hidden = 64;
};

void init_context_net(ParameterSet& ps, const ContextNetConfig& cfg, Rng& rng);
// Discriminator f(D, v): 2-layer ReLU MLP on the concatenation [D, v].
void init_discriminator(ParameterSet& ps, const std::string& prefix, int context_dim, int view_dim, int hidden,
                        Rng& rng);

struct ContextViews {
    nets::Seq v_sh;  // conv output
    nets::Seq v_lo;  // attention output
};

struct ContextEncoding {
    ContextViews views;
    ad::Var mean;     // [B x d_D]
    ad::Var log_var;  // [B x d_D], clamped to [-20, 20]
};

// values is [B*T x 1] (normalized), covariates [B*T x n_cov].
ContextEncoding encode_context(ad::Graph& g, const nets::Seq& values, const ad::Var& covariates,
                               const ContextNetConfig& cfg);

// mean + exp(log_var / 2) * eps in train mode, mean in infer mode.
ad::Var sample_context(const ad::Var& mean, const ad::Var& log_var, SampleMode mode, Rng& rng);
Eigen::VectorXd sample_context(const ContextPosterior& post, SampleMode mode, Rng& rng);

// KL[q || Normal(0, I)] in closed form.
double kl_divergence(const ContextPosterior& post);
// Batch mean of the closed-form KL; mean and log_var are [B x d_D].
ad::Var kl_loss(const ad::Var& mean, const ad::Var& log_var);

// Cross-entropy of picking column 0 out of each row of `scores`
// ([N x (K+1)], positive first), after dividing by the temperature.
ad::Var contrastive_from_scores(const ad::Var& scores, double temperature);

// Discriminator scores for row-aligned (D, v) pairs, [N x 1].
ad::Var discriminator_scores(ad::Graph& g, const std::string& prefix, const ad::Var& d_rows, const ad::Var& v_rows);

// Single-positive contrastive loss: D is [1 x d_D], positive [1 x c],
// negatives [K x c].
ad::Var contrastive_loss(ad::Graph& g, const std::string& prefix, const ad::Var& d, const ad::Var& positive,
                         const ad::Var& negatives, double temperature);

enum class View { short_term, long_term };

struct CmcEntry {
    int sample = 0;
    View view = View::short_term;
    int positive_row = 0;            // row into the view matrix [B*T x c]
    std::vector<int> negative_rows;  // K rows from other series
};

struct CmcBatch {
    int negatives_per_positive = 0;
    std::vector<CmcEntry> entries;
};

// P positive steps per sample and view, each with K negatives drawn
// uniformly from the same view of samples belonging to other series.
CmcBatch sample_cmc_batch(const std::vector<int>& series_of_sample, int length, int positives, int negatives, Rng& rng);

struct CmcTerms {
    ad::Var short_term;  // mean contrastive loss over short-view positives
    ad::Var long_term;   // mean contrastive loss over long-view positives
    ad::Var kl;          // batch-mean KL
    ad::Var total;       // short + long + alpha * kl
};

CmcTerms cmc_loss(ad::Graph& g, const CmcBatch& batch, const ad::Var& d, const ContextEncoding& enc, double alpha,
                  double temperature);

}  // namespace deepdgl::context
