#include "deepdgl/paramgen.hpp"

#include "deepdgl/errors.hpp"

#include <cmath>

namespace deepdgl::paramgen {

BlockLayout layout_for(const nets::AttentionBlockConfig& cfg) {
    BlockLayout layout;
    layout.block = cfg;
    for (const auto& s : nets::block_param_shapes(cfg)) {
        layout.entries.push_back({s.name, s.rows, s.cols, layout.total_size});
        layout.total_size += s.size();
    }
    return layout;
}

Eigen::VectorXd flatten(const ParameterSet& ps, const std::string& prefix, const BlockLayout& layout) {
    Eigen::VectorXd flat(static_cast<Eigen::Index>(layout.total_size));
    for (const auto& e : layout.entries) {
        const Matrix& m = ps.at(prefix + "." + e.name);
        if (m.rows() != e.rows || m.cols() != e.cols) throw ShapeError("flatten: shape of " + e.name + " differs from layout");
        flat.segment(static_cast<Eigen::Index>(e.offset), m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
    }
    return flat;
}

ParameterSet unflatten(const Eigen::VectorXd& flat, const std::string& prefix, const BlockLayout& layout) {
    if (static_cast<std::size_t>(flat.size()) != layout.total_size) throw ShapeError("unflatten: size differs from layout");
    ParameterSet ps;
    for (const auto& e : layout.entries) {
        ps.add(prefix + "." + e.name,
               Eigen::Map<const Matrix>(flat.data() + e.offset, e.rows, e.cols));
    }
    return ps;
}

void init_hypernetwork(ParameterSet& ps, const std::string& prefix, const HyperConfig& cfg, const BlockLayout& layout,
                       Rng& rng) {
    if (cfg.gain <= 0) throw ConfigError("hypernetwork gain must be > 0");
    nets::init_linear(ps, prefix + ".l1", cfg.context_dim, cfg.hidden, rng);
    const auto total = static_cast<Eigen::Index>(layout.total_size);
    ps.add(prefix + ".l2.w", Matrix::Zero(cfg.hidden, total));
    const Eigen::VectorXd base = nets::init_block_flat(layout.block, rng) / cfg.gain;
    ps.add(prefix + ".l2.b", base.transpose());
}

ad::Var generate(ad::Graph& g, const std::string& prefix, const ad::Var& d, double gain) {
    const ad::Var hidden = ad::relu(ad::linear(d, g.param(prefix + ".l1.w"), g.param(prefix + ".l1.b")));
    return ad::scale(ad::linear(hidden, g.param(prefix + ".l2.w"), g.param(prefix + ".l2.b")), gain);
}

GeneratedBlockParams generate(const Eigen::VectorXd& d, const ParameterSet& hyper, const std::string& prefix,
                              const BlockLayout& layout, double gain) {
    ad::Graph g(hyper, false);
    const ad::Var flat = generate(g, prefix, g.constant(d.transpose()), gain);
    if (static_cast<std::size_t>(flat.cols()) != layout.total_size) throw ShapeError("hypernetwork output size != layout");
    return {flat.value().row(0).transpose(), layout};
}

nets::BlockWeights generated_weights(const ad::Var& flat, const BlockLayout& layout) {
    if (static_cast<std::size_t>(flat.cols()) != layout.total_size) {
        throw ShapeError("generated parameters: width " + std::to_string(flat.cols()) + " != layout size " +
                         std::to_string(layout.total_size));
    }
    nets::BlockWeights w;
    w.grouped = true;
    for (const auto& e : layout.entries) {
        w.entries.push_back(ad::slice_cols(flat, static_cast<Eigen::Index>(e.offset), static_cast<Eigen::Index>(e.size())));
    }
    return w;
}

nets::Seq apply_generated(const nets::Seq& h, const ad::Var& flat, const BlockLayout& layout) {
    if (flat.rows() != h.batch) throw ShapeError("generated parameters: one row per sequence required");
    return nets::attention_block(h, generated_weights(flat, layout), layout.block);
}

}  // namespace deepdgl::paramgen
