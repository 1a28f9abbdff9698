#pragma once

#include "deepdgl/autodiff.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace deepdgl {

// Named trainable arrays. Iteration order is lexicographic by name, which
// fixes the order of checksums, serialization and optimizer state.
class ParameterSet {
public:
    void add(const std::string& name, Matrix value);
    void set(const std::string& name, Matrix value);

    bool contains(const std::string& name) const { return arrays_.count(name) != 0; }
    const Matrix& at(const std::string& name) const;
    Matrix& at(const std::string& name);

    std::size_t total_count() const;
    std::size_t size() const { return arrays_.size(); }
    std::vector<std::string> names() const;
    std::vector<std::string> names_with_prefix(const std::string& prefix) const;

    // FNV-1a over names, shapes and the raw bytes of every value.
    std::uint64_t checksum() const;
    bool all_finite() const;

    auto begin() const { return arrays_.begin(); }
    auto end() const { return arrays_.end(); }
    auto begin() { return arrays_.begin(); }
    auto end() { return arrays_.end(); }

    bool operator==(const ParameterSet& other) const;

private:
    std::map<std::string, Matrix> arrays_;
};

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed = 14695981039346656037ull);

}  // namespace deepdgl
