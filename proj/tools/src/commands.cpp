#include "commands.hpp"

#include "config.hpp"
#include "svg.hpp"

#include "deepdgl/errors.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace deepdgl::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

// Leftover `--key value`, `--key=value` and `--set key=value` tokens.
std::vector<Override> overrides_from(const std::vector<std::string>& extras) {
    std::vector<Override> out;
    for (std::size_t i = 0; i < extras.size(); ++i) {
        std::string tok = extras[i];
        if (tok.rfind("--", 0) != 0) throw UsageError("unexpected argument '" + tok + "'");
        tok = tok.substr(2);
        if (tok == "set") {
            if (i + 1 >= extras.size()) throw UsageError("--set needs key=value");
            tok = extras[++i];
            const auto eq = tok.find('=');
            if (eq == std::string::npos) throw UsageError("--set needs key=value, got '" + tok + "'");
            out.push_back({tok.substr(0, eq), tok.substr(eq + 1)});
            continue;
        }
        if (const auto eq = tok.find('='); eq != std::string::npos) {
            out.push_back({tok.substr(0, eq), tok.substr(eq + 1)});
            continue;
        }
        if (i + 1 >= extras.size()) throw UsageError("missing value for --" + tok);
        out.push_back({tok, extras[++i]});
    }
    return out;
}

RunConfig load_config(const std::string& path, const std::vector<Override>& flags, const char* env_seed) {
    const std::optional<std::string> env = env_seed ? std::optional<std::string>(env_seed) : std::nullopt;
    try {
        return parse_config(path.empty() ? std::nullopt : std::optional<fs::path>(path), flags, env);
    } catch (const ParseError& e) {
        throw UsageError(std::string(path) + ": " + e.what());
    }
}

RunConfig config_of(const training::Checkpoint& ckpt, const std::vector<Override>& extra = {}) {
    std::vector<Override> o;
    for (const auto& [k, v] : ckpt.model.to_key_values()) o.push_back({k, v});
    for (const auto& [k, v] : ckpt.train.to_key_values()) o.push_back({k, v});
    for (const auto& [k, v] : ckpt.extra) {
        if (default_settings().count(k)) o.push_back({k, v});
    }
    o.insert(o.end(), extra.begin(), extra.end());
    return resolve_config("", o);
}

bool phase_covariates_mode(const RunConfig& cfg) {
    return cfg.data().covariates_path.empty() && cfg.model().n_covariates == 2;
}

data::SeriesCollection load_collection(const RunConfig& cfg) {
    const DataSettings d = cfg.data();
    const model::ModelConfig m = cfg.model();
    data::SeriesCollection c;
    if (d.values_path.empty()) {
        c = data::generate_synthetic(cfg.synth()).collection;
        c.covariates.reset();
    } else {
        c = data::load_csv(d.values_path,
                           d.covariates_path.empty() ? std::nullopt : std::optional<fs::path>(d.covariates_path));
    }
    if (phase_covariates_mode(cfg)) c = data::with_phase_covariates(std::move(c), m.phase_period);
    if (c.n_covariates() != m.n_covariates) {
        throw DataError("data has " + std::to_string(c.n_covariates()) + " covariates, model.n_covariates is " +
                        std::to_string(m.n_covariates));
    }
    return c;
}

data::DatasetSplits make_splits(const RunConfig& cfg, const data::SeriesCollection& c) {
    const DataSettings d = cfg.data();
    const model::ModelConfig m = cfg.model();
    const data::WindowConfig wc{m.input_steps, m.horizon, d.stride};
    if (d.transductive.empty()) {
        if (!d.inductive_val.empty() || !d.inductive_test.empty()) {
            throw UsageError("data.inductive_val/inductive_test need data.transductive");
        }
        return data::split(c, d.split_seed, wc);
    }
    for (const auto* group : {&d.transductive, &d.inductive_val, &d.inductive_test}) {
        for (int s : *group) {
            if (s >= c.n_series()) {
                throw DataError("series index " + std::to_string(s) + " out of range (dataset has " +
                                std::to_string(c.n_series()) + " series)");
            }
        }
    }
    return data::split_explicit(c, d.transductive, d.inductive_val, d.inductive_test, wc);
}

void check_series(const std::vector<int>& series, const data::SeriesCollection& c) {
    for (int s : series) {
        if (s < 0 || s >= c.n_series()) {
            throw DataError("series index " + std::to_string(s) + " out of range (dataset has " +
                            std::to_string(c.n_series()) + " series)");
        }
    }
}

// Covariate rows of a `t,c0,c1,...` CSV.
Matrix read_covariate_rows(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    std::string line;
    std::getline(in, line);
    std::vector<std::vector<double>> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> r;
        for (int j = 0; std::getline(ss, cell, ','); ++j) {
            double v = 0;
            const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
                throw ParseError(ParseError::Kind::non_numeric, "non-numeric cell '" + cell + "'", lineno);
            }
            if (j > 0) r.push_back(v);
        }
        if (!rows.empty() && r.size() != rows.front().size()) {
            throw ParseError(ParseError::Kind::ragged_row, "ragged row", lineno);
        }
        rows.push_back(std::move(r));
    }
    Matrix m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
    }
    return m;
}

struct SeriesForecast {
    int series = 0;
    int origin = 0;
    Eigen::VectorXd history;
    Eigen::VectorXd prediction;
    Eigen::VectorXd actual;  // observed part of the horizon, possibly empty
};

std::vector<SeriesForecast> run_forecasts(const training::Checkpoint& ckpt, const RunConfig& cfg,
                                          const data::SeriesCollection& c, const std::vector<int>& series, int origin,
                                          const std::string& future_path) {
    const model::ModelConfig& m = ckpt.model;
    const int T = m.input_steps, tau = m.horizon;
    if (origin < T || origin > c.n_steps()) {
        throw DataError("forecast origin " + std::to_string(origin) + " needs " + std::to_string(T) +
                        " steps of history within " + std::to_string(c.n_steps()) + " steps");
    }
    check_series(series, c);

    Matrix hist_cov(T, m.n_covariates), fut_cov(tau, m.n_covariates);
    if (m.n_covariates > 0) {
        hist_cov = c.covariates->middleRows(origin - T, T);
        const int known = std::min(tau, c.n_steps() - origin);
        fut_cov.topRows(known) = c.covariates->middleRows(origin, known);
        if (known < tau) {
            const int missing = tau - known;
            if (phase_covariates_mode(cfg)) {
                fut_cov.bottomRows(missing) = data::phase_covariates(missing, m.phase_period, c.n_steps());
            } else if (!future_path.empty()) {
                const Matrix extra = read_covariate_rows(future_path);
                if (extra.rows() < missing || extra.cols() != m.n_covariates) {
                    throw DataError("future covariates file needs " + std::to_string(missing) + " rows of " +
                                    std::to_string(m.n_covariates) + " columns");
                }
                fut_cov.bottomRows(missing) = extra.topRows(missing);
            } else {
                throw DataError("missing future covariates: the horizon extends " + std::to_string(missing) +
                                " steps past the data; pass --future-covariates");
            }
        }
    }

    std::vector<data::WindowSample> windows;
    for (int s : series) {
        const Eigen::VectorXd hist = c.values.row(s).segment(origin - T, T).transpose();
        windows.push_back(model::window_from_history(hist, hist_cov, fut_cov, m));
    }
    const Matrix preds = model::forecast(ckpt.params, m, windows);
    std::vector<SeriesForecast> out;
    for (std::size_t i = 0; i < series.size(); ++i) {
        SeriesForecast f;
        f.series = series[i];
        f.origin = origin;
        f.history = c.values.row(series[i]).segment(origin - T, T).transpose();
        f.prediction = preds.row(static_cast<Eigen::Index>(i)).transpose();
        f.actual = c.values.row(series[i]).segment(origin, std::min(tau, c.n_steps() - origin)).transpose();
        out.push_back(std::move(f));
    }
    return out;
}

std::vector<int> all_series(const data::SeriesCollection& c) {
    std::vector<int> s(static_cast<std::size_t>(c.n_series()));
    for (int i = 0; i < c.n_series(); ++i) s[static_cast<std::size_t>(i)] = i;
    return s;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

training::Checkpoint load_ckpt(const std::string& path) {
    if (!fs::exists(path)) throw DataError("checkpoint not found: " + path);
    return training::load_checkpoint(path);
}

// --- subcommands -----------------------------------------------------------

struct Options {
    std::string config;
    std::string out_dir = ".";
    std::string checkpoint;
    std::string mode = "transductive";
    std::string variant;
    std::string out;
    std::string values;
    std::string covariates;
    std::string future_covariates;
    std::vector<int> series;
    int origin = -1;
};

int cmd_synth(const Options& o, const std::vector<Override>& flags, const char* env_seed, std::ostream& out,
              std::ostream& err) {
    const RunConfig cfg = load_config(o.config, flags, env_seed);
    err << cfg.dump();
    const data::SyntheticData d = data::generate_synthetic(cfg.synth());
    fs::create_directories(o.out_dir);
    const fs::path dir(o.out_dir);
    data::write_values_csv(d.collection, dir / "values.csv");
    if (d.collection.covariates) data::write_covariates_csv(*d.collection.covariates, dir / "covariates.csv");
    data::write_assignments_csv(d, dir / "assignments.csv");
    out << "wrote " << d.collection.n_series() << " series x " << d.collection.n_steps() << " steps to " << o.out_dir
        << '\n';
    return kSuccess;
}

int cmd_train(const Options& o, const std::vector<Override>& flags, const std::vector<std::string>& args,
              const char* env_seed, std::ostream& out, std::ostream& err) {
    const RunConfig cfg = load_config(o.config, flags, env_seed);
    err << cfg.dump();
    const data::SeriesCollection c = load_collection(cfg);
    const data::DatasetSplits splits = make_splits(cfg, c);

    training::TrainResult r = training::train(splits, cfg.model(), cfg.train(), [&](const training::EpochRecord& e) {
        err << "epoch " << e.epoch << " lr=" << fmt(e.learning_rate) << " loss=" << fmt(e.loss)
            << " val_wape=" << fmt(e.val_wape) << " resets=" << e.codes_reset << '\n';
    });

    const fs::path dir(o.out_dir);
    fs::create_directories(dir);
    for (auto* ckpt : {&r.best, &r.last}) {
        for (const auto& [k, v] : cfg.key_values()) {
            if (k.rfind("data.", 0) == 0 || k.rfind("synth.", 0) == 0) ckpt->extra[k] = v;
        }
    }
    training::save_checkpoint(r.best, dir / "best.ckpt");
    training::save_checkpoint(r.last, dir / "last.ckpt");
    training::write_training_curve_csv(r.curve, dir / "training_curve.csv");
    write_text(dir / "config.resolved", cfg.dump());

    nlohmann::ordered_json manifest;
    manifest["artifact_version"] = training::kArtifactVersion;
    manifest["command"] = args;
    manifest["seed"] = cfg.train().seed;
    manifest["data"] = {{"values", cfg.get("data.values")},
                        {"covariates", cfg.get("data.covariates")},
                        {"synthetic", cfg.get("data.values").empty()}};
    nlohmann::ordered_json config;
    for (const auto& [k, s] : cfg.settings) config[k] = {{"value", s.value}, {"source", to_string(s.source)}};
    manifest["config"] = config;
    manifest["best_epoch"] = r.best.epoch;
    manifest["checksum_best"] = r.best.checksum();
    manifest["checksum_last"] = r.last.checksum();
    manifest["outputs"] = {"best.ckpt", "last.ckpt", "training_curve.csv", "config.resolved"};
    write_text(dir / "run_manifest.json", manifest.dump(2) + "\n");

    out << "best epoch " << r.best.epoch << " val_wape=" << fmt(r.curve[static_cast<std::size_t>(r.best.epoch)].val_wape)
        << " checkpoint " << (dir / "best.ckpt").string() << '\n';
    return kSuccess;
}

std::vector<Override> data_overrides(const Options& o) {
    std::vector<Override> v;
    if (!o.values.empty()) v.push_back({"data.values", o.values});
    if (!o.covariates.empty()) v.push_back({"data.covariates", o.covariates});
    return v;
}

int cmd_eval(const Options& o, std::ostream& out, std::ostream& err) {
    const training::Checkpoint ckpt = load_ckpt(o.checkpoint);
    if (!o.variant.empty() && model::parse_variant(o.variant) != ckpt.model.variant) {
        throw UsageError("checkpoint was trained as " + model::to_string(ckpt.model.variant) + ", not " + o.variant);
    }
    const RunConfig cfg = config_of(ckpt, data_overrides(o));
    const data::SeriesCollection c = load_collection(cfg);
    const data::DatasetSplits splits = make_splits(cfg, c);
    training::MetricsReport r;
    if (o.mode == "transductive") {
        r = training::evaluate_transductive(ckpt, splits);
    } else {
        r = training::evaluate_inductive(ckpt, splits);
    }
    const std::string path = o.out.empty() ? "metrics_" + r.mode + "_" + r.variant + ".csv" : o.out;
    training::write_metrics_csv(r, path);
    out << "mode=" << r.mode << " variant=" << r.variant << " mape=" << fmt(r.mape) << " wape=" << fmt(r.wape)
        << " smape=" << fmt(r.smape) << " windows=" << r.n_windows << '\n';
    err << "metrics written to " << path << '\n';
    return kSuccess;
}

int cmd_forecast(const Options& o, std::ostream& out) {
    const training::Checkpoint ckpt = load_ckpt(o.checkpoint);
    const RunConfig cfg = config_of(ckpt, data_overrides(o));
    const data::SeriesCollection c = load_collection(cfg);
    const std::vector<int> series = o.series.empty() ? all_series(c) : o.series;
    const int origin = o.origin < 0 ? c.n_steps() : o.origin;
    const auto forecasts = run_forecasts(ckpt, cfg, c, series, origin, o.future_covariates);

    std::ostringstream csv;
    csv << "series_id,step,forecast,actual\n";
    for (const auto& f : forecasts) {
        for (Eigen::Index k = 0; k < f.prediction.size(); ++k) {
            csv << c.series_ids[static_cast<std::size_t>(f.series)] << ',' << f.origin + k << ',' << fmt(f.prediction(k))
                << ',';
            if (k < f.actual.size()) csv << fmt(f.actual(k));
            csv << '\n';
        }
    }
    const std::string path = o.out.empty() ? "forecast.csv" : o.out;
    write_text(path, csv.str());
    out << "wrote " << forecasts.size() << " forecasts to " << path << '\n';
    return kSuccess;
}

int cmd_plot(const Options& o, std::ostream& out) {
    const training::Checkpoint ckpt = load_ckpt(o.checkpoint);
    const RunConfig cfg = config_of(ckpt, data_overrides(o));
    const data::SeriesCollection c = load_collection(cfg);
    const std::vector<int> series = o.series.empty() ? all_series(c) : o.series;
    check_series(series, c);
    const int origin = o.origin < 0 ? c.n_steps() - ckpt.model.horizon : o.origin;
    const auto forecasts = run_forecasts(ckpt, cfg, c, series, origin, o.future_covariates);

    const fs::path dir(o.out_dir);
    fs::create_directories(dir);
    for (const auto& f : forecasts) {
        Line truth, pred;
        truth.label = "ground truth", truth.color = "#1f77b4";
        pred.label = "forecast", pred.color = "#d62728";
        for (Eigen::Index t = 0; t < f.history.size(); ++t) {
            truth.x.push_back(static_cast<double>(f.origin - f.history.size() + t));
            truth.y.push_back(f.history(t));
        }
        for (Eigen::Index k = 0; k < f.actual.size(); ++k) {
            truth.x.push_back(static_cast<double>(f.origin + k));
            truth.y.push_back(f.actual(k));
        }
        pred.x.push_back(static_cast<double>(f.origin - 1));
        pred.y.push_back(f.history(f.history.size() - 1));
        for (Eigen::Index k = 0; k < f.prediction.size(); ++k) {
            pred.x.push_back(static_cast<double>(f.origin + k));
            pred.y.push_back(f.prediction(k));
        }
        pred.dashed = true;
        const std::string& id = c.series_ids[static_cast<std::size_t>(f.series)];
        const fs::path path = dir / ("series_" + std::to_string(f.series) + ".svg");
        write_line_chart(path, id + " (" + model::to_string(ckpt.model.variant) + ")", {truth, pred},
                         static_cast<double>(f.origin) - 0.5);
        out << path.string() << '\n';
    }
    return kSuccess;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const char* env_seed) {
    CLI::App app{"DeepDGL global/local time-series forecasting", "deepdgl"};
    Options o;

    auto* synth = app.add_subcommand("synth", "Write a synthetic multi-series dataset as CSV");
    synth->add_option("--config", o.config, "Config file (key = value lines)");
    synth->add_option("--out-dir", o.out_dir, "Output directory");
    synth->allow_extras();
    synth->footer("Any config key can be set with --key value, e.g. --synth.n_series 20.");

    auto* train = app.add_subcommand("train", "Train a model and write checkpoints");
    train->add_option("--config", o.config, "Config file (key = value lines)");
    train->add_option("--out-dir", o.out_dir, "Output directory");
    train->allow_extras();
    train->footer("Any config key can be set with --key value, e.g. --alpha 0.5 or --set model.variant=no_cmc.");

    auto* eval = app.add_subcommand("eval", "Score a checkpoint and write a metrics CSV");
    eval->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
    eval->add_option("--mode", o.mode, "Evaluation setting")->check(CLI::IsMember({"transductive", "inductive"}));
    eval->add_option("--variant", o.variant, "Expected model variant")
        ->check(CLI::IsMember({"full", "conv_transformer", "no_cmc", "global_only", "local_only"}));
    eval->add_option("--out", o.out, "Metrics CSV path");
    eval->add_option("--values", o.values, "Values CSV overriding the training data");
    eval->add_option("--covariates", o.covariates, "Covariates CSV overriding the training data");

    auto* forecast = app.add_subcommand("forecast", "Forecast the next horizon for each series");
    forecast->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
    forecast->add_option("--series", o.series, "Series indices (default: all)")->delimiter(',');
    forecast->add_option("--origin", o.origin, "First forecast step (default: end of data)");
    forecast->add_option("--future-covariates", o.future_covariates, "Covariates CSV for steps past the data");
    forecast->add_option("--out", o.out, "Forecast CSV path");
    forecast->add_option("--values", o.values, "Values CSV overriding the training data");
    forecast->add_option("--covariates", o.covariates, "Covariates CSV overriding the training data");

    auto* plot = app.add_subcommand("plot", "Write SVG charts of ground truth and forecast");
    plot->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
    plot->add_option("--series", o.series, "Series indices (default: all)")->delimiter(',');
    plot->add_option("--origin", o.origin, "First forecast step (default: last horizon of the data)");
    plot->add_option("--future-covariates", o.future_covariates, "Covariates CSV for steps past the data");
    plot->add_option("--out-dir", o.out_dir, "Output directory");
    plot->add_option("--values", o.values, "Values CSV overriding the training data");
    plot->add_option("--covariates", o.covariates, "Covariates CSV overriding the training data");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kSuccess;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kUsage;
    }
    if (app.get_subcommands().empty()) {
        err << "error: a subcommand is required\n\n" << app.help();
        return kUsage;
    }

    try {
        if (synth->parsed()) return cmd_synth(o, overrides_from(synth->remaining()), env_seed, out, err);
        if (train->parsed()) return cmd_train(o, overrides_from(train->remaining()), args, env_seed, out, err);
        if (eval->parsed()) return cmd_eval(o, out, err);
        if (forecast->parsed()) return cmd_forecast(o, out);
        return cmd_plot(o, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const DivergenceError& e) {
        err << "error: numeric divergence: " << e.what() << '\n';
        return kDivergence;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kDataError;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kDataError;
    }
}

}  // namespace deepdgl::cli
