#include "deepdgl/model.hpp"

#include "deepdgl/errors.hpp"
#include "deepdgl/vq.hpp"

#include <algorithm>
#include <charconv>
#include <optional>
#include <sstream>

namespace deepdgl::model {

namespace {

constexpr int kForecastChunk = 64;

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string format_list(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(v[i]);
    }
    return s;
}

int parse_int(const std::string& key, const std::string& s) {
    int v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError("invalid integer for " + key + ": " + s);
    return v;
}

double parse_double(const std::string& key, const std::string& s) {
    double v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError("invalid number for " + key + ": " + s);
    return v;
}

std::vector<int> parse_list(const std::string& key, const std::string& s) {
    std::vector<int> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        while (!item.empty() && item.front() == ' ') item.erase(item.begin());
        while (!item.empty() && item.back() == ' ') item.pop_back();
        out.push_back(parse_int(key, item));
    }
    if (out.empty()) throw ConfigError("empty list for " + key);
    return out;
}

// Adds a projection when a block's width differs from its input.
nets::Seq maybe_project(const nets::Seq& h, ad::Graph& g, const std::string& name, int width) {
    return h.width() == width ? h : nets::linear(h, g, name);
}

nets::Seq with_covariates(const nets::Seq& x, const ad::Var& covariates, int n_cov) {
    if (n_cov == 0) return x;
    const ad::Var parts[] = {x.data, covariates};
    return {ad::concat_cols(parts), x.batch, x.length};
}

// Shared trunk attention: input projection, blocks 0..L-2, then the
// projection (if any) in front of the last block.
nets::Seq trunk_attention(ad::Graph& g, const nets::Seq& features, const ad::Var& covariates, const ModelConfig& cfg) {
    nets::Seq h = nets::linear(with_covariates(features, covariates, cfg.n_covariates), g, "trunk.input_proj");
    const std::size_t n = cfg.enc_dims.size();
    for (std::size_t j = 0; j + 1 < n; ++j) {
        h = maybe_project(h, g, "trunk.proj" + std::to_string(j), cfg.enc_dims[j]);
        h = nets::attention_block(h, g, "trunk.block" + std::to_string(j), cfg.encoder_block(j));
    }
    return maybe_project(h, g, "trunk.proj" + std::to_string(n - 1), cfg.enc_dims[n - 1]);
}

nets::Seq seq_of(ad::Graph& g, Matrix m, int batch, int length) { return {g.constant(std::move(m)), batch, length}; }

}  // namespace

std::string to_string(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::conv_transformer: return "conv_transformer";
        case Variant::no_cmc: return "no_cmc";
        case Variant::global_only: return "global_only";
        case Variant::local_only: return "local_only";
    }
    return "full";
}

Variant parse_variant(const std::string& s) {
    for (Variant v : {Variant::full, Variant::conv_transformer, Variant::no_cmc, Variant::global_only, Variant::local_only}) {
        if (to_string(v) == s) return v;
    }
    throw ConfigError("unknown variant '" + s + "' (expected full|conv_transformer|no_cmc|global_only|local_only)");
}

void ModelConfig::validate() const {
    if (input_steps < 1 || horizon < 1) throw ConfigError("input_steps and horizon must be >= 1");
    conv().validate(1);
    if (enc_dims.empty() || enc_dims.size() != enc_heads.size()) throw ConfigError("encoder dims/heads must be equal-length lists");
    if (dec_dims.empty() || dec_dims.size() != dec_heads.size()) throw ConfigError("decoder dims/heads must be equal-length lists");
    if (ffn_ratio < 1) throw ConfigError("ffn_ratio must be >= 1");
    for (std::size_t j = 0; j < enc_dims.size(); ++j) encoder_block(j).validate();
    for (std::size_t j = 0; j < dec_dims.size(); ++j) decoder_block(j).validate();
    if (codebook_size < 1) throw ConfigError("codebook_size must be >= 1");
    if (context_dim < 1) throw ConfigError("context_dim must be >= 1");
    if (alpha < 0 || gamma < 0) throw ConfigError("alpha and gamma must be >= 0");
    if (temperature <= 0) throw ConfigError("temperature must be > 0");
    if (positives < 1 || negatives < 1) throw ConfigError("positives and negatives must be >= 1");
    if (hyper_hidden < 1 || disc_hidden < 1) throw ConfigError("hidden widths must be >= 1");
    if (hyper_gain <= 0) throw ConfigError("hyper_gain must be > 0");
    if (n_covariates < 0) throw ConfigError("n_covariates must be >= 0");
    if (phase_period < 2) throw ConfigError("phase_period must be >= 2");
}

nets::ConvStackConfig ModelConfig::conv() const {
    nets::ConvStackConfig c;
    c.kernel_sizes = conv_kernels;
    c.channels = conv_channels;
    return c;
}

nets::AttentionBlockConfig ModelConfig::encoder_block(std::size_t j) const {
    nets::AttentionBlockConfig b;
    b.model_dim = enc_dims.at(j);
    b.n_heads = enc_heads.at(j);
    b.ffn_hidden = ffn_ratio * b.model_dim;
    b.layer_norm = b.model_dim > 1;
    return b;
}

nets::AttentionBlockConfig ModelConfig::decoder_block(std::size_t j) const {
    nets::AttentionBlockConfig b;
    b.model_dim = dec_dims.at(j);
    b.n_heads = dec_heads.at(j);
    b.ffn_hidden = ffn_ratio * b.model_dim;
    b.masked = true;
    b.cross = true;
    b.context_dim = context_width();
    b.layer_norm = b.model_dim > 1;
    return b;
}

context::ContextNetConfig ModelConfig::context_net() const {
    context::ContextNetConfig c;
    c.conv = conv();
    for (std::size_t j = 0; j < enc_dims.size(); ++j) c.blocks.push_back(encoder_block(j));
    c.n_covariates = n_covariates;
    c.context_dim = context_dim;
    c.disc_hidden = disc_hidden;
    return c;
}

bool ModelConfig::uses_global() const { return variant != Variant::local_only; }

bool ModelConfig::uses_local() const {
    return variant == Variant::full || variant == Variant::no_cmc || variant == Variant::local_only;
}

int ModelConfig::context_width() const {
    return enc_dims.back() * ((uses_global() ? 1 : 0) + (uses_local() ? 1 : 0));
}

std::map<std::string, std::string> ModelConfig::to_key_values() const {
    return {
        {"model.input_steps", std::to_string(input_steps)},
        {"model.horizon", std::to_string(horizon)},
        {"model.conv_kernels", format_list(conv_kernels)},
        {"model.conv_channels", format_list(conv_channels)},
        {"model.enc_heads", format_list(enc_heads)},
        {"model.enc_dims", format_list(enc_dims)},
        {"model.dec_heads", format_list(dec_heads)},
        {"model.dec_dims", format_list(dec_dims)},
        {"model.ffn_ratio", std::to_string(ffn_ratio)},
        {"model.codebook_size", std::to_string(codebook_size)},
        {"model.context_dim", std::to_string(context_dim)},
        {"model.alpha", format_double(alpha)},
        {"model.gamma", format_double(gamma)},
        {"model.temperature", format_double(temperature)},
        {"model.positives", std::to_string(positives)},
        {"model.negatives", std::to_string(negatives)},
        {"model.hyper_hidden", std::to_string(hyper_hidden)},
        {"model.hyper_gain", format_double(hyper_gain)},
        {"model.disc_hidden", std::to_string(disc_hidden)},
        {"model.n_covariates", std::to_string(n_covariates)},
        {"model.phase_period", std::to_string(phase_period)},
        {"model.variant", to_string(variant)},
    };
}

ModelConfig ModelConfig::from_key_values(const std::map<std::string, std::string>& kv) {
    ModelConfig c;
    for (const auto& [key, value] : kv) {
        if (key.rfind("model.", 0) != 0) continue;
        if (key == "model.input_steps") c.input_steps = parse_int(key, value);
        else if (key == "model.horizon") c.horizon = parse_int(key, value);
        else if (key == "model.conv_kernels") c.conv_kernels = parse_list(key, value);
        else if (key == "model.conv_channels") c.conv_channels = parse_list(key, value);
        else if (key == "model.enc_heads") c.enc_heads = parse_list(key, value);
        else if (key == "model.enc_dims") c.enc_dims = parse_list(key, value);
        else if (key == "model.dec_heads") c.dec_heads = parse_list(key, value);
        else if (key == "model.dec_dims") c.dec_dims = parse_list(key, value);
        else if (key == "model.ffn_ratio") c.ffn_ratio = parse_int(key, value);
        else if (key == "model.codebook_size") c.codebook_size = parse_int(key, value);
        else if (key == "model.context_dim") c.context_dim = parse_int(key, value);
        else if (key == "model.alpha") c.alpha = parse_double(key, value);
        else if (key == "model.gamma") c.gamma = parse_double(key, value);
        else if (key == "model.temperature") c.temperature = parse_double(key, value);
        else if (key == "model.positives") c.positives = parse_int(key, value);
        else if (key == "model.negatives") c.negatives = parse_int(key, value);
        else if (key == "model.hyper_hidden") c.hyper_hidden = parse_int(key, value);
        else if (key == "model.hyper_gain") c.hyper_gain = parse_double(key, value);
        else if (key == "model.disc_hidden") c.disc_hidden = parse_int(key, value);
        else if (key == "model.n_covariates") c.n_covariates = parse_int(key, value);
        else if (key == "model.phase_period") c.phase_period = parse_int(key, value);
        else if (key == "model.variant") c.variant = parse_variant(value);
        else throw ConfigError("unknown model key: " + key);
    }
    c.validate();
    return c;
}

paramgen::BlockLayout local_layout(const ModelConfig& cfg) {
    return paramgen::layout_for(cfg.encoder_block(cfg.enc_dims.size() - 1));
}

ParameterSet init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng = make_rng(seed, Stream::init);
    ParameterSet ps;
    const auto conv = cfg.conv();
    const int conv_out = conv.out_channels();

    nets::init_conv_stack(ps, "trunk", 1, conv, rng);
    nets::init_linear(ps, "trunk.input_proj", conv_out + cfg.n_covariates, cfg.enc_dims.front(), rng);
    int width = cfg.enc_dims.front();
    for (std::size_t j = 0; j < cfg.enc_dims.size(); ++j) {
        if (cfg.enc_dims[j] != width) {
            nets::init_linear(ps, "trunk.proj" + std::to_string(j), width, cfg.enc_dims[j], rng);
        }
        width = cfg.enc_dims[j];
        if (j + 1 < cfg.enc_dims.size()) nets::init_block(ps, "trunk.block" + std::to_string(j), cfg.encoder_block(j), rng);
    }
    nets::init_block(ps, "global.last", cfg.encoder_block(cfg.enc_dims.size() - 1), rng);
    ps.add("vq.codebook", vq::init_codebook(cfg.codebook_size, conv_out, rng));

    const auto ctx = cfg.context_net();
    context::init_context_net(ps, ctx, rng);
    context::init_discriminator(ps, "disc.f1", cfg.context_dim, conv_out, cfg.disc_hidden, rng);
    context::init_discriminator(ps, "disc.f2", cfg.context_dim, cfg.enc_dims.back(), cfg.disc_hidden, rng);
    paramgen::init_hypernetwork(ps, "hyper", {cfg.context_dim, cfg.hyper_hidden, cfg.hyper_gain}, local_layout(cfg), rng);

    nets::init_conv_stack(ps, "dec", 1, conv, rng);
    nets::init_linear(ps, "dec.input_proj", conv_out + cfg.n_covariates, cfg.dec_dims.front(), rng);
    width = cfg.dec_dims.front();
    for (std::size_t j = 0; j < cfg.dec_dims.size(); ++j) {
        if (cfg.dec_dims[j] != width) {
            nets::init_linear(ps, "dec.proj" + std::to_string(j), width, cfg.dec_dims[j], rng);
        }
        width = cfg.dec_dims[j];
        nets::init_block(ps, "dec.block" + std::to_string(j), cfg.decoder_block(j), rng);
    }
    if (width != 1) nets::init_linear(ps, "dec.head", width, 1, rng);
    return ps;
}

BatchInputs make_inputs(ad::Graph& g, std::span<const data::WindowSample> batch, const ModelConfig& cfg) {
    if (batch.empty()) throw ShapeError("empty batch");
    const int b = static_cast<int>(batch.size());
    const int T = cfg.input_steps, tau = cfg.horizon, nc = cfg.n_covariates;
    Matrix values(b * T, 1), cov(b * T, nc), dec(b * tau, 1), fut(b * tau, nc);
    BatchInputs in;
    in.targets.resize(b, tau);
    for (int s = 0; s < b; ++s) {
        const auto& w = batch[s];
        if (w.input_length() != T || w.horizon() != tau) {
            throw ShapeError("window length (" + std::to_string(w.input_length()) + ", " + std::to_string(w.horizon()) +
                             ") does not match the model (" + std::to_string(T) + ", " + std::to_string(tau) + ")");
        }
        if (w.input_covariates.cols() != nc || w.target_covariates.cols() != nc || w.input_covariates.rows() != T ||
            w.target_covariates.rows() != tau) {
            throw DataError("window covariates do not match the model's " + std::to_string(nc) + " covariate channels");
        }
        values.middleRows(s * T, T) = w.input;
        cov.middleRows(s * T, T) = w.input_covariates;
        dec(s * tau, 0) = w.input(T - 1);
        for (int t = 1; t < tau; ++t) dec(s * tau + t, 0) = w.target(t - 1);
        fut.middleRows(s * tau, tau) = w.target_covariates;
        in.targets.row(s) = w.target.transpose();
        in.series.push_back(w.series_index);
    }
    in.values = seq_of(g, std::move(values), b, T);
    in.covariates = g.constant(std::move(cov));
    in.decoder_values = seq_of(g, std::move(dec), b, tau);
    in.future_covariates = g.constant(std::move(fut));
    return in;
}

nets::Seq trunk_features(ad::Graph& g, const nets::Seq& values, const ModelConfig& cfg) {
    return nets::causal_conv_stack(values, g, "trunk", cfg.conv());
}

GlobalEncoding encode_global(ad::Graph& g, const nets::Seq& conv_features, const ad::Var& covariates,
                             const ModelConfig& cfg, bool quantize) {
    GlobalEncoding out;
    nets::Seq features = conv_features;
    if (quantize) {
        auto q = vq::quantize(conv_features.data, g.param("vq.codebook"));
        out.z = conv_features.data;
        out.zq = q.zq;
        out.codes = std::move(q.indices);
        features.data = q.output;
    }
    const nets::Seq h = trunk_attention(g, features, covariates, cfg);
    out.output = nets::attention_block(h, g, "global.last", cfg.encoder_block(cfg.enc_dims.size() - 1));
    return out;
}

nets::Seq encode_local(ad::Graph& g, const nets::Seq& conv_features, const ad::Var& covariates, const ad::Var& d,
                       const ModelConfig& cfg) {
    if (d.cols() != cfg.context_dim || d.rows() != conv_features.batch) throw ShapeError("context variable shape");
    const nets::Seq h = trunk_attention(g, conv_features, covariates, cfg);
    const ad::Var flat = paramgen::generate(g, "hyper", d, cfg.hyper_gain);
    return paramgen::apply_generated(h, flat, local_layout(cfg));
}

ad::Var decode(ad::Graph& g, const nets::Seq& decoder_values, const ad::Var& future_covariates,
               const nets::Seq& encoder_context, const ModelConfig& cfg) {
    if (encoder_context.width() != cfg.context_width()) throw ShapeError("decoder context width does not match variant");
    nets::Seq h = nets::causal_conv_stack(decoder_values, g, "dec", cfg.conv());
    h = nets::linear(with_covariates(h, future_covariates, cfg.n_covariates), g, "dec.input_proj");
    for (std::size_t j = 0; j < cfg.dec_dims.size(); ++j) {
        h = maybe_project(h, g, "dec.proj" + std::to_string(j), cfg.dec_dims[j]);
        h = nets::attention_block(h, g, "dec.block" + std::to_string(j), cfg.decoder_block(j), encoder_context);
    }
    if (h.width() != 1) h = nets::linear(h, g, "dec.head");
    return h.data;
}

ad::Var prediction_loss(const ad::Var& pred, const ad::Var& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
        throw ShapeError("prediction_loss: prediction and target shapes differ");
    }
    return ad::mean(ad::abs(ad::sub(target, pred)));
}

TrainRngs TrainRngs::from_seed(std::uint64_t seed, std::uint64_t index) {
    return {make_rng(seed, Stream::negatives, index), make_rng(seed, Stream::reparam, index)};
}

namespace {

struct Encoded {
    nets::Seq context;
    GlobalEncoding global;
    std::optional<context::ContextEncoding> ctx;
    ad::Var d;
};

Encoded encode(ad::Graph& g, const BatchInputs& in, const ModelConfig& cfg, context::SampleMode mode, Rng* reparam) {
    Encoded e;
    const nets::Seq conv = trunk_features(g, in.values, cfg);
    std::vector<ad::Var> parts;
    if (cfg.uses_global()) {
        e.global = encode_global(g, conv, in.covariates, cfg, cfg.uses_vq());
        parts.push_back(e.global.output.data);
    }
    if (cfg.uses_local()) {
        e.ctx = context::encode_context(g, in.values, in.covariates, cfg.context_net());
        if (cfg.uses_cmc() && mode == context::SampleMode::train) {
            e.d = context::sample_context(e.ctx->mean, e.ctx->log_var, mode, *reparam);
        } else {
            e.d = e.ctx->mean;
        }
        parts.push_back(encode_local(g, conv, in.covariates, e.d, cfg).data);
    }
    e.context = {parts.size() == 1 ? parts[0] : ad::concat_cols(parts), in.values.batch, in.values.length};
    return e;
}

}  // namespace

ForwardResult forward_train(ad::Graph& g, std::span<const data::WindowSample> batch, const ModelConfig& cfg,
                            TrainRngs& rngs) {
    const BatchInputs in = make_inputs(g, batch, cfg);
    const int b = static_cast<int>(batch.size());
    Encoded e = encode(g, in, cfg, context::SampleMode::train, &rngs.reparam);

    ForwardResult r;
    r.predictions = decode(g, in.decoder_values, in.future_covariates, e.context, cfg);
    r.pred_loss = prediction_loss(ad::reshape(r.predictions, b, cfg.horizon), g.constant(in.targets));
    r.total = r.pred_loss;
    r.losses.pred = r.pred_loss.scalar();

    if (cfg.uses_cmc()) {
        const auto cmc_batch = context::sample_cmc_batch(in.series, cfg.input_steps, cfg.positives, cfg.negatives, rngs.negatives);
        r.cmc_loss = context::cmc_loss(g, cmc_batch, e.d, *e.ctx, cfg.alpha, cfg.temperature).total;
        r.losses.cmc = r.cmc_loss.scalar();
        r.total = ad::add(r.total, r.cmc_loss);
    }
    if (cfg.uses_vq()) {
        r.vq_loss = vq::vq_loss(e.global.z, e.global.zq, cfg.gamma, b);
        r.losses.vq = r.vq_loss.scalar();
        r.total = ad::add(r.total, r.vq_loss);
        r.codes = e.global.codes;
        r.encoder_outputs = e.global.z.value();
    }
    r.losses.total = r.losses.pred + r.losses.cmc + r.losses.vq;
    return r;
}

Matrix forecast_normalized(const ParameterSet& params, const ModelConfig& cfg,
                           std::span<const data::WindowSample> windows) {
    const int tau = cfg.horizon;
    Matrix out(static_cast<Eigen::Index>(windows.size()), tau);
    for (std::size_t first = 0; first < windows.size(); first += kForecastChunk) {
        const auto chunk = windows.subspan(first, std::min<std::size_t>(kForecastChunk, windows.size() - first));
        const int b = static_cast<int>(chunk.size());
        Matrix context_value, fut_all;
        int context_length = 0;
        {
            ad::Graph g(params, false);
            const BatchInputs in = make_inputs(g, chunk, cfg);
            const Encoded e = encode(g, in, cfg, context::SampleMode::infer, nullptr);
            context_value = e.context.data.value();
            context_length = e.context.length;
            fut_all = in.future_covariates.value();
        }

        Matrix dec_in(b, tau);
        for (int s = 0; s < b; ++s) dec_in(s, 0) = chunk[s].input(cfg.input_steps - 1);
        for (int k = 1; k <= tau; ++k) {
            // A fresh graph per step keeps memory at one decoder pass.
            ad::Graph g(params, false);
            Matrix values(b * k, 1), fut(b * k, cfg.n_covariates);
            for (int s = 0; s < b; ++s) {
                values.middleRows(s * k, k) = dec_in.row(s).head(k).transpose();
                fut.middleRows(s * k, k) = fut_all.middleRows(s * tau, k);
            }
            const ad::Var pred = decode(g, seq_of(g, std::move(values), b, k), g.constant(std::move(fut)),
                                        seq_of(g, context_value, b, context_length), cfg);
            for (int s = 0; s < b; ++s) {
                const double next = pred.value()(s * k + k - 1, 0);
                out(static_cast<Eigen::Index>(first) + s, k - 1) = next;
                if (k < tau) dec_in(s, k) = next;
            }
        }
    }
    return out;
}

Matrix forecast(const ParameterSet& params, const ModelConfig& cfg, std::span<const data::WindowSample> windows) {
    Matrix out = forecast_normalized(params, cfg, windows);
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        out.row(r) = data::denormalize(out.row(r).transpose(), windows[i].norm_mean, windows[i].norm_std).transpose();
    }
    return out;
}

data::WindowSample window_from_history(const Eigen::VectorXd& history, const Matrix& history_covariates,
                                       const Matrix& future_covariates, const ModelConfig& cfg) {
    if (history.size() != cfg.input_steps) {
        throw DataError("history has " + std::to_string(history.size()) + " steps, model expects " +
                        std::to_string(cfg.input_steps));
    }
    if (cfg.n_covariates > 0 && (future_covariates.rows() != cfg.horizon || future_covariates.cols() != cfg.n_covariates)) {
        throw DataError("model was trained with " + std::to_string(cfg.n_covariates) +
                        " covariates: future covariates for the full horizon are required");
    }
    if (history_covariates.rows() != cfg.input_steps || history_covariates.cols() != cfg.n_covariates) {
        throw DataError("history covariates do not match the model");
    }
    data::SeriesCollection c;
    c.values.resize(1, cfg.input_steps + cfg.horizon);
    c.values.row(0).head(cfg.input_steps) = history.transpose();
    c.values.row(0).tail(cfg.horizon).setZero();
    c.series_ids = {"history"};
    if (cfg.n_covariates > 0) {
        Matrix cov(cfg.input_steps + cfg.horizon, cfg.n_covariates);
        cov.topRows(cfg.input_steps) = history_covariates;
        cov.bottomRows(cfg.horizon) = future_covariates;
        c.covariates = std::move(cov);
    }
    data::WindowSample w = data::make_window(c, 0, 0, cfg.input_steps, cfg.horizon);
    w.target.setZero();
    return w;
}

}  // namespace deepdgl::model
