#pragma once

// Named parameter registry: the single source of truth for optimization,
// weight-decay exclusion, checkpointing and audits.

#include <string>
#include <vector>

#include "mdn/tensor.hpp"

namespace mdn {

template <typename S>
struct ParamEntry {
    std::string name;
    Tensor<S> tensor;
    bool decay = true;  // false for norms, biases, embeddings and priors
};

template <typename S>
class ParamRegistry {
public:
    Tensor<S> add(const std::string& name, Tensor<S> t, bool decay) {
        for (const auto& e : entries_)
            check<Error>(e.name != name, "duplicate parameter name '", name, "'");
        t.set_requires_grad(true);
        entries_.push_back({name, t, decay});
        return t;
    }

    const std::vector<ParamEntry<S>>& entries() const { return entries_; }
    std::vector<ParamEntry<S>>& entries() { return entries_; }

    int64_t total_params() const {
        int64_t n = 0;
        for (const auto& e : entries_) n += e.tensor.numel();
        return n;
    }

    int64_t count_with_prefix(const std::string& prefix) const {
        int64_t n = 0;
        for (const auto& e : entries_)
            if (e.name.rfind(prefix, 0) == 0) n += e.tensor.numel();
        return n;
    }

    const ParamEntry<S>* find(const std::string& name) const {
        for (const auto& e : entries_)
            if (e.name == name) return &e;
        return nullptr;
    }

    void zero_grads() {
        for (auto& e : entries_) e.tensor.zero_grad();
    }

private:
    std::vector<ParamEntry<S>> entries_;
};

}  // namespace mdn
