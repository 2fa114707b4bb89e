#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "pyramid_isp/autograd.hpp"

namespace pyramid_isp {

/// Named, ordered collection of trainable leaves.
template <typename T>
class ParameterSet {
public:
    void add(const std::string& name, Tensor<T> value) {
        if (params_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
        params_.emplace(name, Var<T>::leaf(std::move(value), false));
    }

    const Var<T>& get(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ContractError("missing parameter '" + name + "'");
        return it->second;
    }
    Var<T>& get(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ContractError("missing parameter '" + name + "'");
        return it->second;
    }
    bool contains(const std::string& name) const { return params_.count(name) > 0; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(params_.size());
        for (const auto& [k, _] : params_) out.push_back(k);
        return out;
    }

    std::size_t size() const { return params_.size(); }
    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [_, v] : params_) n += v.value().size();
        return n;
    }

    void set_requires_grad(bool r) {
        for (auto& [_, v] : params_) v.set_requires_grad(r);
    }
    void zero_grad() {
        for (auto& [_, v] : params_) v.zero_grad();
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    /// Deep copy of the values, detached from any gradient state.
    template <typename U = T>
    ParameterSet<U> clone() const {
        ParameterSet<U> out;
        for (const auto& [k, v] : params_) out.add(k, v.value().template cast<U>());
        return out;
    }

    bool values_equal(const ParameterSet& o) const {
        if (params_.size() != o.params_.size()) return false;
        for (const auto& [k, v] : params_) {
            if (!o.contains(k) || !(v.value() == o.get(k).value())) return false;
        }
        return true;
    }

private:
    std::map<std::string, Var<T>> params_;
};

/// Stable 64-bit FNV-1a, used to derive per-parameter random streams.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit draw.
inline double unit_uniform(std::mt19937_64& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }

}  // namespace pyramid_isp
