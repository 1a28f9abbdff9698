#include "deepdgl/training.hpp"

#include "deepdgl/errors.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

namespace deepdgl::training {

namespace {

std::string fmt(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& s) {
    T v{};
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError("invalid value for " + key + ": " + s);
    return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("invalid boolean for " + key + ": " + s);
}

std::string rng_digest(const std::vector<const Rng*>& rngs) {
    std::ostringstream out;
    for (const Rng* r : rngs) out << *r << ';';
    const std::string s = out.str();
    char buf[17];
    const auto res = std::to_chars(buf, buf + sizeof(buf), fnv1a(s.data(), s.size()), 16);
    return std::string(buf, res.ptr);
}

}  // namespace

void TrainConfig::validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
    if (!(decay_factor > 0) || decay_factor > 1) throw ConfigError("decay_factor must be in (0, 1]");
    if (decay_every < 1) throw ConfigError("decay_every must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (b_h < 1 || b_v < 1) throw ConfigError("b_h and b_v must be >= 1");
    if (!(clip_norm > 0)) throw ConfigError("clip_norm must be > 0");
    if (dead_code_patience < 1) throw ConfigError("dead_code_patience must be >= 1");
    if (val_stride < 1) throw ConfigError("val_stride must be >= 1");
}

std::map<std::string, std::string> TrainConfig::to_key_values() const {
    return {
        {"train.learning_rate", fmt(learning_rate)},
        {"train.decay_factor", fmt(decay_factor)},
        {"train.decay_every", std::to_string(decay_every)},
        {"train.epochs", std::to_string(epochs)},
        {"train.b_h", std::to_string(b_h)},
        {"train.b_v", std::to_string(b_v)},
        {"train.seed", std::to_string(seed)},
        {"train.clip_norm", fmt(clip_norm)},
        {"train.dead_code_reset", dead_code_reset ? "true" : "false"},
        {"train.dead_code_patience", std::to_string(dead_code_patience)},
        {"train.val_stride", std::to_string(val_stride)},
    };
}

TrainConfig TrainConfig::from_key_values(const std::map<std::string, std::string>& kv) {
    TrainConfig c;
    for (const auto& [key, value] : kv) {
        if (key.rfind("train.", 0) != 0) continue;
        if (key == "train.learning_rate") c.learning_rate = parse_number<double>(key, value);
        else if (key == "train.decay_factor") c.decay_factor = parse_number<double>(key, value);
        else if (key == "train.decay_every") c.decay_every = parse_number<int>(key, value);
        else if (key == "train.epochs") c.epochs = parse_number<int>(key, value);
        else if (key == "train.b_h") c.b_h = parse_number<int>(key, value);
        else if (key == "train.b_v") c.b_v = parse_number<int>(key, value);
        else if (key == "train.seed") c.seed = parse_number<std::uint64_t>(key, value);
        else if (key == "train.clip_norm") c.clip_norm = parse_number<double>(key, value);
        else if (key == "train.dead_code_reset") c.dead_code_reset = parse_bool(key, value);
        else if (key == "train.dead_code_patience") c.dead_code_patience = parse_number<int>(key, value);
        else if (key == "train.val_stride") c.val_stride = parse_number<int>(key, value);
        else throw ConfigError("unknown training key: " + key);
    }
    c.validate();
    return c;
}

double learning_rate_at(const TrainConfig& cfg, int epoch) {
    return cfg.learning_rate * std::pow(cfg.decay_factor, epoch / cfg.decay_every);
}

std::vector<std::vector<int>> horizontal_blocks(int n_offsets, int b_h) {
    if (b_h < 1) throw ConfigError("b_h must be >= 1");
    std::vector<std::vector<int>> blocks;
    for (int t = 0; t < n_offsets; t += b_h) {
        std::vector<int> block(static_cast<std::size_t>(std::min(b_h, n_offsets - t)));
        std::iota(block.begin(), block.end(), t);
        blocks.push_back(std::move(block));
    }
    return blocks;
}

std::vector<std::vector<int>> vertical_blocks(std::vector<int> series, int b_v, bool min_two, Rng& rng) {
    if (b_v < 1) throw ConfigError("b_v must be >= 1");
    std::shuffle(series.begin(), series.end(), rng);
    std::vector<std::vector<int>> blocks;
    for (std::size_t i = 0; i < series.size(); i += static_cast<std::size_t>(b_v)) {
        const auto end = std::min(series.size(), i + static_cast<std::size_t>(b_v));
        blocks.emplace_back(series.begin() + static_cast<std::ptrdiff_t>(i), series.begin() + static_cast<std::ptrdiff_t>(end));
    }
    if (min_two && blocks.size() > 1 && blocks.back().size() == 1) {
        blocks[blocks.size() - 2].push_back(blocks.back().front());
        blocks.pop_back();
    }
    return blocks;
}

double clip_gradients(Gradients& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) sq += g.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& [name, g] : grads) g *= s;
    }
    return norm;
}

void Adam::step(ParameterSet& params, const Gradients& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, p] : params) {
        const auto it = grads.find(name);
        if (it == grads.end()) continue;
        const Matrix& g = it->second;
        if (g.rows() != p.rows() || g.cols() != p.cols()) throw ShapeError("Adam: gradient shape of " + name);
        auto [mi, fresh_m] = m_.try_emplace(name, Matrix::Zero(p.rows(), p.cols()));
        auto [vi, fresh_v] = v_.try_emplace(name, Matrix::Zero(p.rows(), p.cols()));
        Matrix& m = mi->second;
        Matrix& v = vi->second;
        m = beta1_ * m + (1.0 - beta1_) * g;
        v = beta2_ * v + (1.0 - beta2_) * g.cwiseAbs2();
        p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    }
}

void Adam::reset_rows(const std::string& name, const std::vector<int>& rows) {
    for (auto* moments : {&m_, &v_}) {
        const auto it = moments->find(name);
        if (it == moments->end()) continue;
        for (int r : rows) it->second.row(r).setZero();
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

enum class DType : std::uint8_t { f32 = 0, f64 = 1, i64 = 2 };

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("checkpoint truncated");
    return v;
}

void put_header(std::ostream& out, const std::string& name, DType dtype, const std::vector<std::uint64_t>& dims) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) put<std::uint64_t>(out, d);
}

std::string join(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::vector<int> split_ints(const std::string& s) {
    std::vector<int> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(parse_number<int>("transductive_series", item));
    return out;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    static_assert(std::endian::native == std::endian::little, "checkpoint payloads are written little-endian");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path.string());

    std::map<std::string, std::string> manifest = ckpt.model.to_key_values();
    manifest.merge(ckpt.train.to_key_values());
    manifest["artifact_version"] = kArtifactVersion;
    manifest["epoch"] = std::to_string(ckpt.epoch);
    manifest["variant"] = model::to_string(ckpt.model.variant);
    manifest["rng_digest"] = ckpt.rng_digest;
    manifest["transductive_series"] = join(ckpt.transductive_series);
    for (const auto& [k, v] : ckpt.extra) manifest["meta." + k] = v;

    out << kCheckpointMagic << '\n';
    for (const auto& [k, v] : manifest) {
        if (k.find('\n') != std::string::npos || v.find('\n') != std::string::npos) {
            throw DataError("manifest entries must be single-line: " + k);
        }
        out << k << " = " << v << '\n';
    }
    out << "end_manifest\n";

    put<std::uint64_t>(out, ckpt.params.size() + 2);
    for (const auto& [name, m] : ckpt.params) {
        put_header(out, "param." + name, DType::f64,
                   {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())});
        out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    }
    for (const auto& [name, v] : {std::pair{"state.code_usage", &ckpt.code_usage}, std::pair{"state.code_idle", &ckpt.code_idle}}) {
        put_header(out, name, DType::i64, {static_cast<std::uint64_t>(v->size())});
        out.write(reinterpret_cast<const char*>(v->data()), static_cast<std::streamsize>(v->size() * sizeof(std::int64_t)));
    }
    if (!out) throw DataError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kCheckpointMagic) throw DataError("not a checkpoint file: " + path.string());

    std::map<std::string, std::string> manifest;
    bool ended = false;
    while (std::getline(in, line)) {
        if (line == "end_manifest") {
            ended = true;
            break;
        }
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) throw DataError("malformed checkpoint manifest line: " + line);
        manifest[line.substr(0, eq)] = line.substr(eq + 3);
    }
    if (!ended) throw DataError("checkpoint manifest not terminated");

    Checkpoint ckpt;
    ckpt.model = model::ModelConfig::from_key_values(manifest);
    ckpt.train = TrainConfig::from_key_values(manifest);
    for (const auto& [k, v] : manifest) {
        if (k == "epoch") ckpt.epoch = parse_number<int>(k, v);
        else if (k == "rng_digest") ckpt.rng_digest = v;
        else if (k == "transductive_series") ckpt.transductive_series = split_ints(v);
        else if (k.rfind("meta.", 0) == 0) ckpt.extra[k.substr(5)] = v;
    }

    const auto count = get<std::uint64_t>(in);
    for (std::uint64_t a = 0; a < count; ++a) {
        const auto len = get<std::uint32_t>(in);
        if (len > 4096) throw DataError("checkpoint array name too long");
        std::string name(len, '\0');
        in.read(name.data(), len);
        const auto dtype = static_cast<DType>(get<std::uint8_t>(in));
        const auto rank = get<std::uint32_t>(in);
        if (rank > 8) throw DataError("checkpoint array rank too large: " + name);
        std::vector<std::uint64_t> dims(rank);
        std::uint64_t n = 1;
        for (auto& d : dims) {
            d = get<std::uint64_t>(in);
            n *= d;
        }
        if (n > (std::uint64_t{1} << 32)) throw DataError("checkpoint array too large: " + name);
        std::vector<double> values(n);
        std::vector<std::int64_t> ints;
        switch (dtype) {
            case DType::f64:
                in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(double)));
                break;
            case DType::f32: {
                std::vector<float> f(n);
                in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(n * sizeof(float)));
                std::copy(f.begin(), f.end(), values.begin());
                break;
            }
            case DType::i64:
                ints.resize(n);
                in.read(reinterpret_cast<char*>(ints.data()), static_cast<std::streamsize>(n * sizeof(std::int64_t)));
                break;
            default: throw DataError("unknown dtype in checkpoint array " + name);
        }
        if (!in) throw DataError("checkpoint truncated in array " + name);

        if (name.rfind("param.", 0) == 0) {
            if (dtype == DType::i64 || rank != 2) throw DataError("parameter arrays must be rank-2 floats: " + name);
            Matrix m = Eigen::Map<const Matrix>(values.data(), static_cast<Eigen::Index>(dims[0]),
                                                static_cast<Eigen::Index>(dims[1]));
            ckpt.params.add(name.substr(6), std::move(m));
        } else if (name == "state.code_usage") {
            ckpt.code_usage = std::move(ints);
        } else if (name == "state.code_idle") {
            ckpt.code_idle = std::move(ints);
        }
    }

    const ParameterSet expected = model::init_params(ckpt.model, 0);
    for (const auto& [name, m] : expected) {
        if (!ckpt.params.contains(name)) throw DataError("checkpoint is missing parameter " + name);
        const Matrix& got = ckpt.params.at(name);
        if (got.rows() != m.rows() || got.cols() != m.cols()) throw DataError("checkpoint parameter has wrong shape: " + name);
    }
    if (ckpt.params.size() != expected.size()) throw DataError("checkpoint has unexpected parameters");
    return ckpt;
}

// ---------------------------------------------------------------------------
// Metrics

Matrix raw_targets(std::span<const data::WindowSample> windows) {
    if (windows.empty()) return Matrix(0, 0);
    Matrix out(static_cast<Eigen::Index>(windows.size()), windows.front().horizon());
    for (std::size_t i = 0; i < windows.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) =
            data::denormalize(windows[i].target, windows[i].norm_mean, windows[i].norm_std).transpose();
    }
    return out;
}

MetricsReport metrics(const Matrix& targets, const Matrix& preds) {
    if (targets.rows() != preds.rows() || targets.cols() != preds.cols()) throw ShapeError("metrics: shape mismatch");
    if (targets.rows() == 0 || targets.cols() == 0) throw DataError("metrics: no windows to score");
    const Eigen::Index n = targets.rows();
    const auto err = (targets - preds).array().abs();
    const auto ape = err / targets.array().abs().max(kMetricEps);
    const auto sape = 2.0 * err / (targets + preds).array().abs().max(kMetricEps);
    const Eigen::ArrayXd abs_sum = targets.array().abs().rowwise().sum().max(kMetricEps);

    MetricsReport r;
    r.n_windows = static_cast<int>(n);
    r.mape = ape.rowwise().mean().mean();
    r.smape = sape.rowwise().mean().mean();
    r.wape = (err.rowwise().sum() / abs_sum).mean();
    r.horizon_mae = err.colwise().mean().transpose().matrix();
    r.horizon_mape = ape.colwise().mean().transpose().matrix();
    r.horizon_smape = sape.colwise().mean().transpose().matrix();
    return r;
}

MetricsReport evaluate_windows(const Checkpoint& ckpt, std::span<const data::WindowSample> windows) {
    const std::uint64_t before = ckpt.checksum();
    const Matrix preds = model::forecast(ckpt.params, ckpt.model, windows);
    MetricsReport r = metrics(raw_targets(windows), preds);
    r.variant = model::to_string(ckpt.model.variant);
    r.checksum_before = before;
    r.checksum_after = ckpt.checksum();
    if (r.checksum_before != r.checksum_after) throw ProtocolError("model parameters changed during evaluation");
    return r;
}

MetricsReport evaluate_transductive(const Checkpoint& ckpt, const data::DatasetSplits& splits) {
    MetricsReport r = evaluate_windows(ckpt, splits.test);
    r.mode = "transductive";
    return r;
}

MetricsReport evaluate_inductive(const Checkpoint& ckpt, const data::DatasetSplits& splits, bool validation) {
    const auto& series = validation ? splits.inductive_val_series : splits.inductive_test_series;
    std::set<int> trained(splits.transductive_series.begin(), splits.transductive_series.end());
    trained.insert(ckpt.transductive_series.begin(), ckpt.transductive_series.end());
    for (int s : series) {
        if (trained.count(s)) {
            throw ProtocolError("inductive series " + std::to_string(s) + " was used for training");
        }
    }
    MetricsReport r = evaluate_windows(ckpt, validation ? splits.inductive_val : splits.inductive_test);
    r.mode = "inductive";
    return r;
}

void write_metrics_csv(const MetricsReport& r, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write metrics: " + path.string());
    out << "metric,value\n";
    out << "mode," << r.mode << '\n';
    out << "variant," << r.variant << '\n';
    out << "mape," << fmt(r.mape) << '\n';
    out << "wape," << fmt(r.wape) << '\n';
    out << "smape," << fmt(r.smape) << '\n';
    out << "n_windows," << r.n_windows << '\n';
    out << "horizon_step,mae\n";
    for (Eigen::Index i = 0; i < r.horizon_mae.size(); ++i) out << (i + 1) << ',' << fmt(r.horizon_mae(i)) << '\n';
}

void write_training_curve_csv(const std::vector<EpochRecord>& curve, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write training curve: " + path.string());
    out << "epoch,learning_rate,loss,pred,cmc,vq,val_wape,batches,codes_reset\n";
    for (const auto& e : curve) {
        out << e.epoch << ',' << fmt(e.learning_rate) << ',' << fmt(e.loss) << ',' << fmt(e.pred) << ',' << fmt(e.cmc)
            << ',' << fmt(e.vq) << ',' << fmt(e.val_wape) << ',' << e.batches << ',' << e.codes_reset << '\n';
    }
}

// ---------------------------------------------------------------------------
// Training loop

TrainResult train(const data::DatasetSplits& splits, const model::ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const EpochCallback& on_epoch) {
    model_cfg.validate();
    train_cfg.validate();
    if (splits.train.empty()) throw DataError("no transductive training windows");

    std::map<int, std::vector<const data::WindowSample*>> by_series;
    for (const auto& w : splits.train) by_series[w.series_index].push_back(&w);
    std::vector<int> series;
    int n_offsets = 0;
    for (const auto& [s, ws] : by_series) {
        series.push_back(s);
        n_offsets = std::max(n_offsets, static_cast<int>(ws.size()));
    }
    if (model_cfg.uses_cmc() && series.size() < 2) {
        throw SamplingError("contrastive training needs at least two training series");
    }

    std::vector<data::WindowSample> val;
    for (std::size_t i = 0; i < splits.val.size(); i += static_cast<std::size_t>(train_cfg.val_stride)) {
        val.push_back(splits.val[i]);
    }
    const Matrix val_targets = raw_targets(val);

    ParameterSet params = model::init_params(model_cfg, train_cfg.seed);
    Adam adam;
    Rng batching = make_rng(train_cfg.seed, Stream::batching);
    Rng dead = make_rng(train_cfg.seed, Stream::dead_codes);
    std::optional<vq::Codebook> book;
    if (model_cfg.uses_vq()) book.emplace(params.at("vq.codebook"));

    TrainResult result;
    result.codebook.codes = model_cfg.codebook_size;

    auto snapshot = [&](int epoch) {
        Checkpoint c;
        c.model = model_cfg;
        c.train = train_cfg;
        c.params = params;
        c.epoch = epoch;
        c.transductive_series = splits.transductive_series;
        c.rng_digest = rng_digest({&batching, &dead});
        if (book) {
            c.code_usage = book->usage_counts;
            c.code_idle = book->steps_since_use;
        }
        return c;
    };

    double best_wape = std::numeric_limits<double>::infinity();
    std::uint64_t batch_index = 0;
    std::vector<data::WindowSample> batch;
    for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        rec.learning_rate = learning_rate_at(train_cfg, epoch);
        for (const auto& hb : horizontal_blocks(n_offsets, train_cfg.b_h)) {
            for (const auto& vb : vertical_blocks(series, train_cfg.b_v, model_cfg.uses_cmc(), batching)) {
                batch.clear();
                for (int s : vb) {
                    const auto& ws = by_series.at(s);
                    for (int o : hb) {
                        if (o < static_cast<int>(ws.size())) batch.push_back(*ws[static_cast<std::size_t>(o)]);
                    }
                }
                if (batch.empty()) continue;

                ad::Graph g(params);
                model::TrainRngs rngs = model::TrainRngs::from_seed(train_cfg.seed, batch_index);
                const model::ForwardResult fr = model::forward_train(g, batch, model_cfg, rngs);
                if (!std::isfinite(fr.losses.total)) {
                    throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                          std::to_string(batch_index) + " (pred=" + fmt(fr.losses.pred) +
                                          ", cmc=" + fmt(fr.losses.cmc) + ", vq=" + fmt(fr.losses.vq) + ")");
                }
                g.backward(fr.total, false);
                Gradients grads = g.param_grads();
                const double norm = clip_gradients(grads, train_cfg.clip_norm);
                if (!std::isfinite(norm)) {
                    throw DivergenceError("non-finite gradient norm at epoch " + std::to_string(epoch) + ", batch " +
                                          std::to_string(batch_index));
                }
                adam.step(params, grads, rec.learning_rate);

                if (book) {
                    for (int c : fr.codes) ++book->usage_counts[static_cast<std::size_t>(c)];
                    vq::advance_batch(*book, fr.codes);
                    std::vector<int> reset;
                    if (train_cfg.dead_code_reset) {
                        book->vectors = params.at("vq.codebook");
                        reset = vq::reset_dead_codes(*book, fr.encoder_outputs, train_cfg.dead_code_patience, dead);
                        if (!reset.empty()) {
                            params.set("vq.codebook", book->vectors);
                            adam.reset_rows("vq.codebook", reset);
                        }
                    }
                    std::vector<int> used(fr.codes);
                    std::sort(used.begin(), used.end());
                    used.erase(std::unique(used.begin(), used.end()), used.end());
                    rec.codes_reset += static_cast<int>(reset.size());
                    result.codebook.used.push_back(std::move(used));
                    result.codebook.reset.push_back(std::move(reset));
                }

                rec.loss += fr.losses.total;
                rec.pred += fr.losses.pred;
                rec.cmc += fr.losses.cmc;
                rec.vq += fr.losses.vq;
                ++rec.batches;
                ++batch_index;
            }
        }
        if (rec.batches > 0) {
            rec.loss /= rec.batches;
            rec.pred /= rec.batches;
            rec.cmc /= rec.batches;
            rec.vq /= rec.batches;
        }
        if (!params.all_finite()) throw DivergenceError("non-finite parameters after epoch " + std::to_string(epoch));

        rec.val_wape = val.empty() ? rec.loss : metrics(val_targets, model::forecast(params, model_cfg, val)).wape;
        result.curve.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (rec.val_wape < best_wape || epoch == 0) {
            best_wape = rec.val_wape;
            result.best = snapshot(epoch);
        }
    }
    result.last = snapshot(train_cfg.epochs - 1);
    return result;
}

}  // namespace deepdgl::training
