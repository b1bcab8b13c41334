#pragma once

#include <map>
#include <string>

#include "prunelab/tensor.hpp"

namespace prunelab {

enum class OptimizerKind { sgd, adam };

struct OptimizerSettings {
    OptimizerKind kind = OptimizerKind::sgd;
    double lr = 1e-2;
    double momentum = 0.0;  // sgd only
    double beta1 = 0.9;     // adam only
    double beta2 = 0.999;
    double eps = 1e-8;

    // Plain SGD: the only setting under which the score accumulator identity holds.
    bool is_plain_sgd() const { return kind == OptimizerKind::sgd && momentum == 0.0; }
    void validate() const;
};

// Per-parameter first-order optimizer. State is keyed by parameter name.
class Optimizer {
public:
    explicit Optimizer(OptimizerSettings settings);

    const OptimizerSettings& settings() const { return settings_; }

    void update(const std::string& name, Tensor2D& param, const Tensor2D& grad);

private:
    struct Slot {
        Tensor2D first;
        Tensor2D second;
        long steps = 0;
    };
    OptimizerSettings settings_;
    std::map<std::string, Slot> slots_;
};

}  // namespace prunelab
