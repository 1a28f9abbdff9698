#include "deepdgl/data.hpp"

#include "deepdgl/errors.hpp"
#include "deepdgl/random.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace deepdgl::data {

namespace {

std::vector<std::string> split_cells(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    std::istringstream in(line);
    while (std::getline(in, cur, ',')) cells.push_back(cur);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

std::string strip(std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    return s.substr(i);
}

double parse_number(const std::string& raw, std::size_t line, std::size_t column) {
    const std::string cell = strip(raw);
    double v = 0.0;
    const auto* first = cell.data();
    const auto* last = cell.data() + cell.size();
    const auto res = std::from_chars(first, last, v);
    if (cell.empty() || res.ec != std::errc() || res.ptr != last || !std::isfinite(v)) {
        throw ParseError(ParseError::Kind::non_numeric,
                         "non-numeric cell '" + cell + "' in column " + std::to_string(column), line);
    }
    return v;
}

std::string format_number(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::ifstream open_input(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw DataError("cannot open " + p.string());
    return in;
}

Matrix load_covariates(const std::filesystem::path& path, int n_steps) {
    auto in = open_input(path);
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw ParseError(ParseError::Kind::header, "empty covariates file", 1);
    ++lineno;
    const auto header = split_cells(strip(line));
    if (header.size() < 2 || strip(header[0]) != "t") {
        throw ParseError(ParseError::Kind::header, "covariates header must be 't,c0,c1,...'", lineno);
    }
    const std::size_t width = header.size();
    std::vector<std::vector<double>> rows;
    double prev_t = -1.0;
    while (std::getline(in, line)) {
        ++lineno;
        line = strip(line);
        if (line.empty()) continue;
        const auto cells = split_cells(line);
        if (cells.size() != width) {
            throw ParseError(ParseError::Kind::ragged_row,
                             "ragged row: expected " + std::to_string(width) + " cells, got " + std::to_string(cells.size()),
                             lineno);
        }
        const double t = parse_number(cells[0], lineno, 0);
        if ((rows.empty() && t != 0.0) || (!rows.empty() && t <= prev_t)) {
            throw ParseError(ParseError::Kind::malformed_line, "time index must start at 0 and strictly increase", lineno);
        }
        prev_t = t;
        std::vector<double> r;
        for (std::size_t j = 1; j < cells.size(); ++j) r.push_back(parse_number(cells[j], lineno, j));
        rows.push_back(std::move(r));
    }
    if (static_cast<int>(rows.size()) != n_steps) {
        throw ParseError(ParseError::Kind::covariate_rows,
                         "covariate row count " + std::to_string(rows.size()) + " does not match n_steps " +
                             std::to_string(n_steps),
                         lineno);
    }
    Matrix m(n_steps, static_cast<Eigen::Index>(width - 1));
    for (int i = 0; i < n_steps; ++i) {
        for (std::size_t j = 0; j + 1 < width; ++j) m(i, static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    return m;
}

std::pair<double, double> mean_std(const Eigen::VectorXd& x) {
    const double mu = x.mean();
    const double sd = std::sqrt((x.array() - mu).square().mean());
    return {mu, sd < kStdFloor ? kStdFloor : sd};
}

std::vector<int> sorted(std::vector<int> v) {
    std::sort(v.begin(), v.end());
    return v;
}

}  // namespace

void SeriesCollection::validate() const {
    if (values.rows() < 1 || values.cols() < 1) throw DataError("collection needs at least one series and one step");
    if (static_cast<int>(series_ids.size()) != n_series()) throw DataError("series_ids length != n_series");
    if (!values.allFinite()) throw DataError("collection contains non-finite values");
    std::set<std::string> seen(series_ids.begin(), series_ids.end());
    if (seen.size() != series_ids.size()) throw DataError("duplicate series ids");
    if (covariates) {
        if (covariates->rows() != n_steps()) throw DataError("covariates must have exactly n_steps rows");
        if (!covariates->allFinite()) throw DataError("covariates contain non-finite values");
    }
}

Eigen::VectorXd denormalize(const Eigen::VectorXd& normalized, double mean, double std) {
    return (normalized.array() * std + mean).matrix();
}

SeriesCollection load_csv(const std::filesystem::path& values_path,
                          const std::optional<std::filesystem::path>& covariates_path) {
    auto in = open_input(values_path);
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw ParseError(ParseError::Kind::header, "empty values file", 1);
    ++lineno;
    const auto header = split_cells(strip(line));
    if (header.size() < 2 || strip(header[0]) != "series_id") {
        throw ParseError(ParseError::Kind::header, "values header must be 'series_id,v0,v1,...'", lineno);
    }
    const std::size_t width = header.size();
    SeriesCollection c;
    std::vector<std::vector<double>> rows;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        ++lineno;
        line = strip(line);
        if (line.empty()) continue;
        const auto cells = split_cells(line);
        if (cells.size() != width) {
            throw ParseError(ParseError::Kind::ragged_row,
                             "ragged row: expected " + std::to_string(width) + " cells, got " + std::to_string(cells.size()),
                             lineno);
        }
        const std::string id = strip(cells[0]);
        if (!seen.insert(id).second) {
            throw ParseError(ParseError::Kind::duplicate_id, "duplicate series_id '" + id + "'", lineno);
        }
        std::vector<double> r;
        r.reserve(width - 1);
        for (std::size_t j = 1; j < cells.size(); ++j) r.push_back(parse_number(cells[j], lineno, j));
        c.series_ids.push_back(id);
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw DataError("values file has no series rows: " + values_path.string());
    c.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width - 1));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        c.values.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const RowVector>(rows[i].data(), rows[i].size());
    }
    if (covariates_path) c.covariates = load_covariates(*covariates_path, c.n_steps());
    c.validate();
    return c;
}

void write_values_csv(const SeriesCollection& c, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "series_id";
    for (int t = 0; t < c.n_steps(); ++t) out << ",v" << t;
    out << '\n';
    for (int i = 0; i < c.n_series(); ++i) {
        out << c.series_ids[i];
        for (int t = 0; t < c.n_steps(); ++t) out << ',' << format_number(c.values(i, t));
        out << '\n';
    }
}

void write_covariates_csv(const Matrix& cov, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << 't';
    for (Eigen::Index j = 0; j < cov.cols(); ++j) out << ",c" << j;
    out << '\n';
    for (Eigen::Index t = 0; t < cov.rows(); ++t) {
        out << t;
        for (Eigen::Index j = 0; j < cov.cols(); ++j) out << ',' << format_number(cov(t, j));
        out << '\n';
    }
}

void write_assignments_csv(const SyntheticData& d, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "series_id,prototype_index\n";
    for (std::size_t i = 0; i < d.prototype_of.size(); ++i) {
        out << d.collection.series_ids[i] << ',' << d.prototype_of[i] << '\n';
    }
}

WindowSample make_window(const SeriesCollection& c, int series, int start, int input_steps, int horizon) {
    if (start < 0 || start + input_steps + horizon > c.n_steps()) throw DataError("window exceeds series length");
    WindowSample w;
    w.series_index = series;
    w.start = start;
    const Eigen::VectorXd raw_in = c.values.row(series).segment(start, input_steps).transpose();
    const Eigen::VectorXd raw_out = c.values.row(series).segment(start + input_steps, horizon).transpose();
    const auto [mu, sd] = mean_std(raw_in);
    w.norm_mean = mu;
    w.norm_std = sd;
    w.input = ((raw_in.array() - mu) / sd).matrix();
    w.target = ((raw_out.array() - mu) / sd).matrix();
    if (c.covariates) {
        w.input_covariates = c.covariates->middleRows(start, input_steps);
        w.target_covariates = c.covariates->middleRows(start + input_steps, horizon);
    } else {
        w.input_covariates = Matrix(input_steps, 0);
        w.target_covariates = Matrix(horizon, 0);
    }
    return w;
}

std::vector<WindowSample> make_series_windows(const SeriesCollection& c, int series, int input_steps, int horizon,
                                              int stride, int first_start) {
    std::vector<WindowSample> out;
    for (int s = first_start; s + input_steps + horizon <= c.n_steps(); s += stride) {
        out.push_back(make_window(c, series, s, input_steps, horizon));
    }
    return out;
}

std::vector<WindowSample> make_windows(const SeriesCollection& c, int input_steps, int horizon, int stride) {
    if (input_steps < 1 || horizon < 1 || stride < 1) throw ConfigError("window sizes and stride must be >= 1");
    if (c.n_steps() < input_steps + horizon) {
        throw DataError("series too short for one window: n_steps " + std::to_string(c.n_steps()) + " < T + tau " +
                        std::to_string(input_steps + horizon));
    }
    std::vector<WindowSample> out;
    for (int i = 0; i < c.n_series(); ++i) {
        auto w = make_series_windows(c, i, input_steps, horizon, stride);
        out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
    }
    return out;
}

DatasetSplits split_explicit(const SeriesCollection& c, std::vector<int> transductive, std::vector<int> inductive_val,
                             std::vector<int> inductive_test, const WindowConfig& wc) {
    if (wc.input_steps < 1 || wc.horizon < 1 || wc.stride < 1) throw ConfigError("window sizes and stride must be >= 1");
    if (c.n_steps() < wc.input_steps + wc.horizon) throw DataError("series too short for one window");
    if (transductive.empty()) throw SplitError("no transductive series");
    std::vector<int> all;
    for (const auto* g : {&transductive, &inductive_val, &inductive_test}) all.insert(all.end(), g->begin(), g->end());
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end()) throw SplitError("series groups overlap");
    for (int i : all) {
        if (i < 0 || i >= c.n_series()) throw SplitError("series index out of range");
    }

    DatasetSplits s;
    s.windows = wc;
    s.transductive_series = sorted(std::move(transductive));
    s.inductive_val_series = sorted(std::move(inductive_val));
    s.inductive_test_series = sorted(std::move(inductive_test));

    // All series share one time axis, so the chronological cut is identical.
    const int n_windows = (c.n_steps() - wc.input_steps - wc.horizon) / wc.stride + 1;
    const int n_val = n_windows / 5;
    const int n_test = n_windows / 5;
    const int n_train = n_windows - n_val - n_test;
    if (n_train < 1) throw SplitError("no training windows");
    s.train_time_end = (n_train - 1) * wc.stride + wc.input_steps + wc.horizon;

    for (int i : s.transductive_series) {
        auto w = make_series_windows(c, i, wc.input_steps, wc.horizon, wc.stride);
        for (int k = 0; k < n_windows; ++k) {
            auto& dst = k < n_train ? s.train : (k < n_train + n_val ? s.val : s.test);
            dst.push_back(std::move(w[k]));
        }
    }
    auto inductive = [&](const std::vector<int>& series, std::vector<WindowSample>& dst) {
        for (int i : series) {
            auto w = make_series_windows(c, i, wc.input_steps, wc.horizon, wc.stride, s.train_time_end);
            dst.insert(dst.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
        }
    };
    inductive(s.inductive_val_series, s.inductive_val);
    inductive(s.inductive_test_series, s.inductive_test);
    return s;
}

DatasetSplits split(const SeriesCollection& c, std::uint64_t seed, const WindowConfig& wc) {
    const int n = c.n_series();
    if (n < 10) throw SplitError("split needs at least 10 series, got " + std::to_string(n));
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng rng = make_rng(seed, Stream::split);
    std::shuffle(order.begin(), order.end(), rng);
    const int n_val = n / 10;
    const int n_test = n / 5;
    const int n_trans = n - n_val - n_test;
    std::vector<int> trans(order.begin(), order.begin() + n_trans);
    std::vector<int> val(order.begin() + n_trans, order.begin() + n_trans + n_val);
    std::vector<int> test(order.begin() + n_trans + n_val, order.end());
    return split_explicit(c, std::move(trans), std::move(val), std::move(test), wc);
}

void SyntheticSpec::validate() const {
    if (n_series < 1 || n_steps < 1) throw ConfigError("synthetic: n_series and n_steps must be >= 1");
    if (n_global_prototypes < 1) throw ConfigError("synthetic: n_global_prototypes must be >= 1");
    if (period < 2) throw ConfigError("synthetic: period must be >= 2");
    if (local_amplitude < 0 || trend_scale < 0 || noise_std < 0) {
        throw ConfigError("synthetic: amplitude, trend and noise scales must be >= 0");
    }
}

Matrix phase_covariates(int n_steps, int period, int first_step) {
    Matrix m(n_steps, 2);
    for (int t = 0; t < n_steps; ++t) {
        const double phase = 2.0 * std::numbers::pi * static_cast<double>((first_step + t) % period) / period;
        m(t, 0) = std::sin(phase);
        m(t, 1) = std::cos(phase);
    }
    return m;
}

SeriesCollection with_phase_covariates(SeriesCollection c, int period) {
    if (!c.covariates) c.covariates = phase_covariates(c.n_steps(), period);
    return c;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    constexpr int kHarmonics = 3;
    constexpr double kLevel = 10.0;
    const double two_pi = 2.0 * std::numbers::pi;

    // Prototype shapes: level plus a few harmonics of the base period,
    // tabulated over one period so every series repeats them exactly.
    Rng proto_rng = make_rng(spec.seed, Stream::synthetic_prototypes);
    std::uniform_real_distribution<double> coef(0.5, 3.0), phase(0.0, two_pi);
    Matrix prototypes(spec.n_global_prototypes, spec.period);
    for (int g = 0; g < spec.n_global_prototypes; ++g) {
        double c[kHarmonics], psi[kHarmonics];
        for (int h = 0; h < kHarmonics; ++h) {
            c[h] = coef(proto_rng) / (h + 1);
            psi[h] = phase(proto_rng);
        }
        for (int p = 0; p < spec.period; ++p) {
            double v = kLevel;
            for (int h = 0; h < kHarmonics; ++h) v += c[h] * std::sin(two_pi * (h + 1) * p / spec.period + psi[h]);
            prototypes(g, p) = v;
        }
    }

    SyntheticData out;
    out.collection.granularity = "step";
    out.collection.values.resize(spec.n_series, spec.n_steps);
    for (int i = 0; i < spec.n_series; ++i) {
        // One generator per series keeps series i independent of n_series.
        Rng rng = make_rng(spec.seed, Stream::synthetic_series, static_cast<std::uint64_t>(i));
        const int g = i % spec.n_global_prototypes;
        const double amplitude = std::uniform_real_distribution<double>(0.0, 1.0)(rng) * spec.local_amplitude;
        const double mod_period = std::uniform_real_distribution<double>(2.0, 6.0)(rng) * spec.period;
        const double mod_phase = std::uniform_real_distribution<double>(0.0, two_pi)(rng);
        const double trend = std::uniform_real_distribution<double>(-1.0, 1.0)(rng) * spec.trend_scale;
        std::normal_distribution<double> noise(0.0, 1.0);
        for (int t = 0; t < spec.n_steps; ++t) {
            const double modulation = amplitude == 0.0 ? 0.0 : amplitude * std::sin(two_pi * t / mod_period + mod_phase);
            double v = prototypes(g, t % spec.period) * (1.0 + modulation) + trend * t;
            if (spec.noise_std > 0.0) v += spec.noise_std * noise(rng);
            out.collection.values(i, t) = v;
        }
        out.collection.series_ids.push_back("s" + std::to_string(i));
        out.prototype_of.push_back(g);
    }
    out.collection.covariates = phase_covariates(spec.n_steps, spec.period);
    return out;
}

}  // namespace deepdgl::data
