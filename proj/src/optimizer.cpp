#include "prunelab/optimizer.hpp"

#include <cmath>

#include "prunelab/errors.hpp"
#include "prunelab/kernels/kernels.hpp"

namespace prunelab {

void OptimizerSettings::validate() const {
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive, got " + std::to_string(lr));
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw ConfigError("momentum must lie in [0,1), got " + std::to_string(momentum));
    }
}

Optimizer::Optimizer(OptimizerSettings settings) : settings_(settings) { settings_.validate(); }

void Optimizer::update(const std::string& name, Tensor2D& param, const Tensor2D& grad) {
    require_same_shape(param, grad, "optimizer update");
    const auto& k = kernels::active();
    if (settings_.is_plain_sgd()) {
        k.axpy(param.data(), grad.data(), -settings_.lr, grad.size());
        return;
    }
    Slot& slot = slots_[name];
    if (slot.first.empty()) {
        slot.first = Tensor2D::zeros_like(param);
        slot.second = Tensor2D::zeros_like(param);
    }
    ++slot.steps;
    if (settings_.kind == OptimizerKind::sgd) {
        k.scale(slot.first.data(), slot.first.data(), settings_.momentum, grad.size());
        k.axpy(slot.first.data(), grad.data(), 1.0, grad.size());
        k.axpy(param.data(), slot.first.data(), -settings_.lr, grad.size());
        return;
    }
    const double b1 = settings_.beta1;
    const double b2 = settings_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(slot.steps));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(slot.steps));
    for (std::size_t i = 0; i < param.size(); ++i) {
        slot.first[i] = b1 * slot.first[i] + (1.0 - b1) * grad[i];
        slot.second[i] = b2 * slot.second[i] + (1.0 - b2) * grad[i] * grad[i];
        const double mhat = slot.first[i] / c1;
        const double vhat = slot.second[i] / c2;
        param[i] -= settings_.lr * mhat / (std::sqrt(vhat) + settings_.eps);
    }
}

}  // namespace prunelab
