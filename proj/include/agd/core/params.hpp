#pragma once

// Named parameter collection. Insertion order is preserved so checkpoints
// and optimizer state line up deterministically across runs.

#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "agd/core/tensor.hpp"

namespace agd {

template <typename T>
class ParamStore {
public:
    Tensor<T>& add(const std::string& name, Tensor<T> t) {
        if (index_.count(name)) throw ConfigError("duplicate parameter: " + name);
        t.set_requires_grad(true);
        index_[name] = names_.size();
        names_.push_back(name);
        tensors_.push_back(std::move(t));
        return tensors_.back();
    }

    Tensor<T>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return tensors_[it->second];
    }
    const Tensor<T>& get(const std::string& name) const {
        return const_cast<ParamStore*>(this)->get(name);
    }
    bool has(const std::string& name) const { return index_.count(name) != 0; }

    size_t count() const { return tensors_.size(); }
    const std::vector<std::string>& names() const { return names_; }
    std::vector<Tensor<T>>& tensors() { return tensors_; }
    const std::vector<Tensor<T>>& tensors() const { return tensors_; }

    size_t total_scalars() const {
        size_t n = 0;
        for (auto& t : tensors_) n += t.size();
        return n;
    }

    void zero_grad() {
        for (auto& t : tensors_) t.zero_grad();
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor<T>> tensors_;
    std::unordered_map<std::string, size_t> index_;
};

// Uniform(-bound, bound) fill, the usual fan-in scaling.
template <typename T>
void init_uniform(Tensor<T>& t, std::mt19937_64& rng, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.values()) v = T(dist(rng));
}

}  // namespace agd
