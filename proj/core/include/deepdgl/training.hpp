#pragma once

#include "deepdgl/data.hpp"
#include "deepdgl/model.hpp"
#include "deepdgl/parameters.hpp"
#include "deepdgl/vq.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace deepdgl::training {

inline constexpr double kMetricEps = 1e-8;

struct TrainConfig {
    double learning_rate = 1e-3;
    double decay_factor = 0.5;
    int decay_every = 10;
    int epochs = 60;  // M
    int b_h = 32;
    int b_v = 64;
    std::uint64_t seed = 0;
    double clip_norm = 5.0;
    bool dead_code_reset = true;
    int dead_code_patience = vq::kDefaultPatience;
    // Every val_stride-th validation window is scored during model selection.
    int val_stride = 1;

    void validate() const;
    std::map<std::string, std::string> to_key_values() const;
    static TrainConfig from_key_values(const std::map<std::string, std::string>& kv);
};

// base * decay_factor^floor(epoch / decay_every), epochs counted from 0.
double learning_rate_at(const TrainConfig& cfg, int epoch);

// Consecutive offset blocks [0, b_h), [b_h, 2 b_h), ...; the last may be short.
std::vector<std::vector<int>> horizontal_blocks(int n_offsets, int b_h);

// Random partition of `series` into blocks of b_v. A trailing block with a
// single series is merged into the previous one when `min_two` is set.
std::vector<std::vector<int>> vertical_blocks(std::vector<int> series, int b_v, bool min_two, Rng& rng);

using Gradients = std::unordered_map<std::string, Matrix>;

// Scales all gradients so their global L2 norm is at most max_norm; returns
// the norm before clipping.
double clip_gradients(Gradients& grads, double max_norm);

class Adam {
public:
    explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParameterSet& params, const Gradients& grads, double lr);
    // Clears both moments of the given rows of one parameter.
    void reset_rows(const std::string& name, const std::vector<int>& rows);
    long steps() const { return t_; }

private:
    double beta1_, beta2_, eps_;
    long t_ = 0;
    std::map<std::string, Matrix> m_, v_;
};

struct Checkpoint {
    model::ModelConfig model;
    TrainConfig train;
    ParameterSet params;
    int epoch = -1;
    std::vector<int> transductive_series;
    std::string rng_digest;
    std::vector<std::int64_t> code_usage;
    std::vector<std::int64_t> code_idle;
    // Free-form manifest entries (data paths, run metadata).
    std::map<std::string, std::string> extra;

    std::uint64_t checksum() const { return params.checksum(); }
};

inline constexpr const char* kCheckpointMagic = "DEEPDGL-CHECKPOINT 1";
inline constexpr const char* kArtifactVersion = "0.1.0";

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct EpochRecord {
    int epoch = 0;
    double learning_rate = 0.0;
    double loss = 0.0;  // mean total loss over the epoch's batches
    double pred = 0.0;
    double cmc = 0.0;
    double vq = 0.0;
    double val_wape = 0.0;
    int batches = 0;
    int codes_reset = 0;
};

// Per-batch record of which codebook rows were selected and which were
// reset, for codebook-health checks.
struct CodebookLog {
    int codes = 0;
    std::vector<std::vector<int>> used;
    std::vector<std::vector<int>> reset;
};

struct TrainResult {
    Checkpoint best;  // lowest validation WAPE
    Checkpoint last;
    std::vector<EpochRecord> curve;
    CodebookLog codebook;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(const data::DatasetSplits& splits, const model::ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const EpochCallback& on_epoch = {});

void write_training_curve_csv(const std::vector<EpochRecord>& curve, const std::filesystem::path& path);

struct MetricsReport {
    double mape = 0.0;
    double wape = 0.0;
    double smape = 0.0;
    int n_windows = 0;
    Eigen::VectorXd horizon_mae;
    Eigen::VectorXd horizon_mape;
    Eigen::VectorXd horizon_smape;
    std::string mode;
    std::string variant;
    std::uint64_t checksum_before = 0;
    std::uint64_t checksum_after = 0;
};

// Per-window metrics averaged over windows; inputs are [windows x tau] in
// original units.
MetricsReport metrics(const Matrix& targets, const Matrix& preds);

// Raw-unit targets of a set of windows, [n x tau].
Matrix raw_targets(std::span<const data::WindowSample> windows);

MetricsReport evaluate_windows(const Checkpoint& ckpt, std::span<const data::WindowSample> windows);
MetricsReport evaluate_transductive(const Checkpoint& ckpt, const data::DatasetSplits& splits);
// Scores inductive_test (or inductive_val) windows; throws ProtocolError
// when an inductive series was used for training.
MetricsReport evaluate_inductive(const Checkpoint& ckpt, const data::DatasetSplits& splits, bool validation = false);

void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path);

}  // namespace deepdgl::training
