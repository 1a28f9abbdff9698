#pragma once

#include "deepdgl/autodiff.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace deepdgl::data {

inline constexpr double kStdFloor = 1e-8;

// Multi-series panel: values is [n_series x n_steps]; covariates, when
// present, is [n_steps x n_cov].
struct SeriesCollection {
    Matrix values;
    std::vector<std::string> series_ids;
    std::string granularity = "unspecified";
    std::optional<Matrix> covariates;

    int n_series() const { return static_cast<int>(values.rows()); }
    int n_steps() const { return static_cast<int>(values.cols()); }
    int n_covariates() const { return covariates ? static_cast<int>(covariates->cols()) : 0; }

    // Throws DataError when an invariant does not hold.
    void validate() const;
};

// One normalized (input, target) window. Both segments are stored in units
// of the input segment's mean and standard deviation.
struct WindowSample {
    int series_index = 0;
    int start = 0;  // absolute step of input[0]
    Eigen::VectorXd input;
    Eigen::VectorXd target;
    Matrix input_covariates;   // [T x n_cov]
    Matrix target_covariates;  // [tau x n_cov]
    double norm_mean = 0.0;
    double norm_std = 1.0;

    int input_length() const { return static_cast<int>(input.size()); }
    int horizon() const { return static_cast<int>(target.size()); }
};

Eigen::VectorXd denormalize(const Eigen::VectorXd& normalized, double mean, double std);

struct WindowConfig {
    int input_steps = 72;  // T
    int horizon = 24;      // tau
    int stride = 1;
};

struct DatasetSplits {
    WindowConfig windows;
    std::vector<int> transductive_series;
    std::vector<int> inductive_val_series;
    std::vector<int> inductive_test_series;

    std::vector<WindowSample> train;
    std::vector<WindowSample> val;
    std::vector<WindowSample> test;
    std::vector<WindowSample> inductive_val;
    std::vector<WindowSample> inductive_test;

    // Exclusive end step of the time range covered by training windows.
    int train_time_end = 0;
};

struct SyntheticSpec {
    int n_series = 40;
    int n_steps = 2000;
    int n_global_prototypes = 4;
    int period = 24;
    double local_amplitude = 0.5;
    double trend_scale = 0.0;
    double noise_std = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SyntheticData {
    SeriesCollection collection;
    std::vector<int> prototype_of;  // ground-truth g(i)
};

SeriesCollection load_csv(const std::filesystem::path& values_path,
                          const std::optional<std::filesystem::path>& covariates_path = std::nullopt);
void write_values_csv(const SeriesCollection& c, const std::filesystem::path& path);
void write_covariates_csv(const Matrix& covariates, const std::filesystem::path& path);
void write_assignments_csv(const SyntheticData& d, const std::filesystem::path& path);

// Sliding windows of every series, ordered by series then start offset.
std::vector<WindowSample> make_windows(const SeriesCollection& c, int input_steps, int horizon, int stride);
std::vector<WindowSample> make_series_windows(const SeriesCollection& c, int series, int input_steps, int horizon,
                                              int stride, int first_start = 0);
WindowSample make_window(const SeriesCollection& c, int series, int start, int input_steps, int horizon);

// Random 70/10/20 partition of series indices (sizes of the two inductive
// groups are floored), then chronological 60/20/20 windows per transductive
// series and non-overlapping inductive windows.
DatasetSplits split(const SeriesCollection& c, std::uint64_t seed, const WindowConfig& windows);

// Same window construction with caller-chosen series groups.
DatasetSplits split_explicit(const SeriesCollection& c, std::vector<int> transductive, std::vector<int> inductive_val,
                             std::vector<int> inductive_test, const WindowConfig& windows);

SyntheticData generate_synthetic(const SyntheticSpec& spec);

// Two-channel sin/cos phase of the absolute step index.
Matrix phase_covariates(int n_steps, int period, int first_step = 0);
SeriesCollection with_phase_covariates(SeriesCollection c, int period);

}  // namespace deepdgl::data
