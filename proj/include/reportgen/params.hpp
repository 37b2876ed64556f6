#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "reportgen/errors.hpp"
#include "reportgen/rng.hpp"
#include "reportgen/tensor.hpp"

namespace reportgen {

/// Xavier/Glorot uniform init: entries in +/- sqrt(6 / (fan_in + fan_out)).
/// 2-D weights use [in, out] orientation (inputs hit rows); conv kernels
/// [Co, Ci, kh, kw] use the receptive-field fans.
inline Tensor xavier_init(const Shape& shape, Rng& rng) {
    double fan_in = 0.0, fan_out = 0.0;
    if (shape.size() == 2) {
        fan_in = static_cast<double>(shape[0]);
        fan_out = static_cast<double>(shape[1]);
    } else if (shape.size() == 4) {
        const double receptive = static_cast<double>(shape[2] * shape[3]);
        fan_in = static_cast<double>(shape[1]) * receptive;
        fan_out = static_cast<double>(shape[0]) * receptive;
    } else {
        throw ConfigError("xavier_init: shape " + shape_to_string(shape) +
                          " has no fan_in/fan_out interpretation");
    }
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    Tensor t(shape);
    for (double& v : t.values()) v = rng.uniform(-bound, bound);
    return t;
}

/// Named, ordered collection of trainable tensors. Order is the checkpoint
/// manifest order; handles are shared with the model's structured params.
class ModelParams {
public:
    // Returns a handle sharing the registered node (Tensor copies are shallow).
    Tensor add(const std::string& name, Tensor t) {
        if (index_.count(name))
            throw ContractError("parameter '" + name + "' registered twice");
        t.set_requires_grad(true);
        index_[name] = entries_.size();
        entries_.emplace_back(name, t);
        return t;
    }

    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }

    Tensor* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &entries_[it->second].second;
    }
    const Tensor* find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &entries_[it->second].second;
    }

    std::size_t count() const { return entries_.size(); }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& [name, t] : entries_) n += t.size();
        return n;
    }

    void zero_grad() {
        for (auto& [name, t] : entries_) t.zero_grad();
    }

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace reportgen
