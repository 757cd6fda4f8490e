#pragma once

// SGD with momentum and L2-in-gradient weight decay, plus the warmup+cosine
// learning-rate schedule.

#include <cmath>
#include <unordered_map>

#include "mdn/registry.hpp"

namespace mdn {

struct OptimConfig {
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;
};

// v <- momentum*v + grad + wd*param; param <- param - lr*v. Weight decay is
// skipped for entries registered with decay=false (norms, biases, embeddings,
// routing priors).
template <typename S>
class SgdOptimizer {
public:
    explicit SgdOptimizer(OptimConfig cfg) : cfg_(cfg) {}

    void step(ParamRegistry<S>& registry) {
        if (buffers_.empty())
            for (const auto& e : registry.entries())
                buffers_[e.name].assign(e.tensor.numel(), S(0));
        for (auto& e : registry.entries()) {
            if (e.tensor.grad().empty()) continue;  // no gradient flowed this step
            auto& v = buffers_[e.name];
            check<ShapeError>(static_cast<int64_t>(v.size()) == e.tensor.numel(),
                              "optimizer buffer shape drift for '", e.name, "'");
            auto& p = e.tensor.data();
            const auto& g = e.tensor.grad();
            const S wd = e.decay ? static_cast<S>(cfg_.weight_decay) : S(0);
            const S mom = static_cast<S>(cfg_.momentum);
            const S lr = static_cast<S>(cfg_.lr);
            for (size_t i = 0; i < v.size(); ++i) {
                check<NumericError>(std::isfinite(static_cast<double>(g[i])),
                                    "non-finite gradient in '", e.name, "', step aborted");
                v[i] = mom * v[i] + g[i] + wd * p[i];
                p[i] -= lr * v[i];
            }
        }
        registry.zero_grads();
    }

    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }

private:
    OptimConfig cfg_;
    std::unordered_map<std::string, std::vector<S>> buffers_;
};

// Linear warmup from warmup_start to base_lr over warmup_epochs, then cosine
// annealing from base_lr to 0 at total_epochs.
inline double lr_at(double epoch, double total_epochs, double base_lr, double warmup_epochs,
                    double warmup_start) {
    check<ConfigError>(epoch >= 0 && epoch <= total_epochs, "lr_at: epoch ", epoch,
                       " outside [0,", total_epochs, "]");
    if (warmup_epochs > 0 && epoch < warmup_epochs)
        return warmup_start + (base_lr - warmup_start) * (epoch / warmup_epochs);
    if (total_epochs <= warmup_epochs) return base_lr;
    const double progress = (epoch - warmup_epochs) / (total_epochs - warmup_epochs);
    return base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

}  // namespace mdn
