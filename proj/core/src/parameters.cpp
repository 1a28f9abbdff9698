#include "deepdgl/parameters.hpp"

#include "deepdgl/errors.hpp"

namespace deepdgl {

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

void ParameterSet::add(const std::string& name, Matrix value) {
    if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
    arrays_.emplace(name, std::move(value));
}

void ParameterSet::set(const std::string& name, Matrix value) {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw ConfigError("unknown parameter: " + name);
    if (it->second.rows() != value.rows() || it->second.cols() != value.cols()) {
        throw ShapeError("shape mismatch when setting parameter " + name);
    }
    it->second = std::move(value);
}

const Matrix& ParameterSet::at(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

Matrix& ParameterSet::at(const std::string& name) {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

std::size_t ParameterSet::total_count() const {
    std::size_t n = 0;
    for (const auto& [_, m] : arrays_) n += static_cast<std::size_t>(m.size());
    return n;
}

std::vector<std::string> ParameterSet::names() const {
    std::vector<std::string> out;
    out.reserve(arrays_.size());
    for (const auto& [name, _] : arrays_) out.push_back(name);
    return out;
}

std::vector<std::string> ParameterSet::names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (auto it = arrays_.lower_bound(prefix); it != arrays_.end(); ++it) {
        if (it->first.compare(0, prefix.size(), prefix) != 0) break;
        out.push_back(it->first);
    }
    return out;
}

std::uint64_t ParameterSet::checksum() const {
    std::uint64_t h = 14695981039346656037ull;
    for (const auto& [name, m] : arrays_) {
        h = fnv1a(name.data(), name.size(), h);
        const std::int64_t shape[2] = {m.rows(), m.cols()};
        h = fnv1a(shape, sizeof(shape), h);
        h = fnv1a(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double), h);
    }
    return h;
}

bool ParameterSet::all_finite() const {
    for (const auto& [_, m] : arrays_) {
        if (!m.allFinite()) return false;
    }
    return true;
}

bool ParameterSet::operator==(const ParameterSet& other) const {
    if (arrays_.size() != other.arrays_.size()) return false;
    auto a = arrays_.begin();
    auto b = other.arrays_.begin();
    for (; a != arrays_.end(); ++a, ++b) {
        if (a->first != b->first) return false;
        if (a->second.rows() != b->second.rows() || a->second.cols() != b->second.cols()) return false;
        if (a->second != b->second) return false;
    }
    return true;
}

}  // namespace deepdgl
