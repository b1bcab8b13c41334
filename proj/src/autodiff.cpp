#include "prunelab/autodiff.hpp"

#include <cmath>
#include <utility>

#include "prunelab/errors.hpp"
#include "prunelab/kernels/kernels.hpp"

namespace prunelab::ad {

const Tensor2D& GradientStore::at(const std::string& name) const {
    auto it = grads_.find(name);
    if (it == grads_.end()) throw IndexError("no gradient recorded for parameter '" + name + "'");
    return it->second;
}

const Tensor2D* GradientStore::find(const std::string& name) const {
    auto it = grads_.find(name);
    return it == grads_.end() ? nullptr : &it->second;
}

void GradientStore::insert(std::string name, Tensor2D grad) {
    auto [it, inserted] = grads_.try_emplace(std::move(name), std::move(grad));
    if (!inserted) {
        // Same parameter bound twice into one graph: gradients add up.
        const auto& k = kernels::active();
        const Tensor2D& extra = grad;
        k.axpy(it->second.data(), extra.data(), 1.0, extra.size());
    }
}

Var Graph::constant(Tensor2D value) {
    nodes_.push_back(Node{std::move(value), {}, {}, {}, {}, false});
    return Var{nodes_.size() - 1};
}

Var Graph::parameter(std::string name, Tensor2D value) {
    params_[name] = nodes_.size();
    nodes_.push_back(Node{std::move(value), {}, {}, {}, std::move(name), true});
    return Var{nodes_.size() - 1};
}

std::optional<Var> Graph::find_parameter(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) return std::nullopt;
    return Var{it->second};
}

Var Graph::record(Tensor2D value, std::vector<Var> parents, BackwardFn backward) {
    bool needs = false;
    for (Var p : parents) needs = needs || nodes_.at(p.index).requires_grad;
    Node node{std::move(value), {}, std::move(parents), {}, {}, needs};
    if (needs) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

const Tensor2D& Graph::grad(Var v) const { return nodes_.at(v.index).grad; }

Tensor2D& Graph::grad_buffer(Var target) {
    Node& n = nodes_.at(target.index);
    if (n.grad.empty()) n.grad = Tensor2D::zeros_like(n.value);
    return n.grad;
}

void Graph::accumulate(Var target, const Tensor2D& delta) {
    if (!requires_grad(target)) return;
    Tensor2D& buf = grad_buffer(target);
    require_same_shape(buf, delta, "gradient accumulate");
    kernels::active().axpy(buf.data(), delta.data(), 1.0, delta.size());
}

GradientStore Graph::backward(Var loss) {
    if (backward_done_) {
        throw ContractError("backward already ran on this graph; call reset() first");
    }
    const Node& ln = nodes_.at(loss.index);
    if (ln.value.rows() != 1 || ln.value.cols() != 1) {
        throw ContractError("backward needs a scalar (1x1) loss, got " + ln.value.shape_string());
    }
    backward_done_ = true;

    GradientStore store;
    if (!ln.requires_grad) return store;
    grad_buffer(loss)(0, 0) = 1.0;

    for (std::size_t idx = loss.index + 1; idx-- > 0;) {
        Node& n = nodes_[idx];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(*this, Var{idx});
    }
    for (auto& n : nodes_) {
        if (!n.param_name.empty() && n.requires_grad) {
            store.insert(n.param_name, n.grad.empty() ? Tensor2D::zeros_like(n.value)
                                                      : std::move(n.grad));
        }
    }
    return store;
}

void Graph::reset() {
    nodes_.clear();
    params_.clear();
    backward_done_ = false;
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Var matmul(Graph& g, Var a, Var b) {
    const Tensor2D& A = g.value(a);
    const Tensor2D& B = g.value(b);
    if (A.cols() != B.rows()) {
        throw DimensionError("matmul: inner dimensions differ, " + A.shape_string() + " * " +
                             B.shape_string());
    }
    Tensor2D C(A.rows(), B.cols());
    kernels::active().gemm_acc(C.data(), A.data(), B.data(), A.rows(), A.cols(), B.cols());
    return g.record(std::move(C), {a, b}, [a, b](Graph& gr, Var self) {
        const auto& k = kernels::active();
        const Tensor2D& G = gr.grad(self);
        const Tensor2D& Av = gr.value(a);
        const Tensor2D& Bv = gr.value(b);
        if (gr.requires_grad(a)) {
            const Tensor2D Bt = Bv.transposed();
            k.gemm_acc(gr.grad_buffer(a).data(), G.data(), Bt.data(), G.rows(), G.cols(), Bt.cols());
        }
        if (gr.requires_grad(b)) {
            const Tensor2D At = Av.transposed();
            k.gemm_acc(gr.grad_buffer(b).data(), At.data(), G.data(), At.rows(), At.cols(), G.cols());
        }
    });
}

Var add(Graph& g, Var a, Var b) {
    const Tensor2D& A = g.value(a);
    const Tensor2D& B = g.value(b);
    require_same_shape(A, B, "add");
    Tensor2D C(A.rows(), A.cols());
    kernels::active().add(C.data(), A.data(), B.data(), C.size());
    return g.record(std::move(C), {a, b}, [a, b](Graph& gr, Var self) {
        gr.accumulate(a, gr.grad(self));
        gr.accumulate(b, gr.grad(self));
    });
}

Var hadamard(Graph& g, Var a, Var b) {
    const Tensor2D& A = g.value(a);
    const Tensor2D& B = g.value(b);
    require_same_shape(A, B, "hadamard");
    Tensor2D C(A.rows(), A.cols());
    kernels::active().mul(C.data(), A.data(), B.data(), C.size());
    return g.record(std::move(C), {a, b}, [a, b](Graph& gr, Var self) {
        const auto& k = kernels::active();
        const Tensor2D& G = gr.grad(self);
        if (gr.requires_grad(a)) {
            k.mul_acc(gr.grad_buffer(a).data(), G.data(), gr.value(b).data(), G.size());
        }
        if (gr.requires_grad(b)) {
            k.mul_acc(gr.grad_buffer(b).data(), G.data(), gr.value(a).data(), G.size());
        }
    });
}

Var relu(Graph& g, Var a) {
    const Tensor2D& A = g.value(a);
    Tensor2D C(A.rows(), A.cols());
    kernels::active().relu(C.data(), A.data(), C.size());
    return g.record(std::move(C), {a}, [a](Graph& gr, Var self) {
        const Tensor2D& G = gr.grad(self);
        kernels::active().relu_backward_acc(gr.grad_buffer(a).data(), gr.value(a).data(), G.data(),
                                            G.size());
    });
}

Var sigmoid(Graph& g, Var a) {
    const Tensor2D& A = g.value(a);
    Tensor2D C(A.rows(), A.cols());
    for (std::size_t i = 0; i < C.size(); ++i) C[i] = sigmoid(A[i]);
    return g.record(std::move(C), {a}, [a](Graph& gr, Var self) {
        const Tensor2D& G = gr.grad(self);
        const Tensor2D& Y = gr.value(self);
        Tensor2D& ga = gr.grad_buffer(a);
        for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i] * Y[i] * (1.0 - Y[i]);
    });
}

Var scale(Graph& g, Var a, double s) {
    const Tensor2D& A = g.value(a);
    Tensor2D C(A.rows(), A.cols());
    kernels::active().scale(C.data(), A.data(), s, C.size());
    return g.record(std::move(C), {a}, [a, s](Graph& gr, Var self) {
        const Tensor2D& G = gr.grad(self);
        kernels::active().axpy(gr.grad_buffer(a).data(), G.data(), s, G.size());
    });
}

Var add_scalar(Graph& g, Var a, double s) {
    Tensor2D C = g.value(a);
    for (std::size_t i = 0; i < C.size(); ++i) C[i] += s;
    return g.record(std::move(C), {a}, [a](Graph& gr, Var self) { gr.accumulate(a, gr.grad(self)); });
}

Var sum(Graph& g, Var a) {
    Tensor2D C(1, 1, g.value(a).sum());
    return g.record(std::move(C), {a}, [a](Graph& gr, Var self) {
        const double s = gr.grad(self)(0, 0);
        Tensor2D& ga = gr.grad_buffer(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s;
    });
}

Var add_bias(Graph& g, Var a, Var bias) {
    const Tensor2D& A = g.value(a);
    const Tensor2D& b = g.value(bias);
    if (b.cols() != 1 || b.rows() != A.rows()) {
        throw DimensionError("add_bias: bias " + b.shape_string() + " does not match " +
                             A.shape_string());
    }
    Tensor2D C = A;
    for (std::size_t i = 0; i < C.rows(); ++i) {
        for (std::size_t j = 0; j < C.cols(); ++j) C(i, j) += b(i, 0);
    }
    return g.record(std::move(C), {a, bias}, [a, bias](Graph& gr, Var self) {
        const Tensor2D& G = gr.grad(self);
        gr.accumulate(a, G);
        if (gr.requires_grad(bias)) {
            Tensor2D& gb = gr.grad_buffer(bias);
            for (std::size_t i = 0; i < G.rows(); ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < G.cols(); ++j) s += G(i, j);
                gb(i, 0) += s;
            }
        }
    });
}

Var elementwise(Graph& g, ElementwiseOp op, Var a, const Var* b) {
    switch (op) {
        case ElementwiseOp::relu: return relu(g, a);
        case ElementwiseOp::sigmoid: return sigmoid(g, a);
        case ElementwiseOp::add:
        case ElementwiseOp::hadamard:
            if (b == nullptr) throw ContractError("elementwise: binary op needs two arguments");
            return op == ElementwiseOp::add ? add(g, a, *b) : hadamard(g, a, *b);
    }
    throw ContractError("elementwise: unknown op");
}

Tensor2D softmax_columns(const Tensor2D& logits, double inv_temperature) {
    Tensor2D p(logits.rows(), logits.cols());
    for (std::size_t j = 0; j < logits.cols(); ++j) {
        double mx = logits(0, j) * inv_temperature;
        for (std::size_t i = 1; i < logits.rows(); ++i) mx = std::max(mx, logits(i, j) * inv_temperature);
        double z = 0.0;
        for (std::size_t i = 0; i < logits.rows(); ++i) {
            p(i, j) = std::exp(logits(i, j) * inv_temperature - mx);
            z += p(i, j);
        }
        for (std::size_t i = 0; i < logits.rows(); ++i) p(i, j) /= z;
    }
    return p;
}

namespace {

// log-sum-exp of column j of `x` scaled by `inv_t`.
double column_lse(const Tensor2D& x, std::size_t j, double inv_t) {
    double mx = x(0, j) * inv_t;
    for (std::size_t i = 1; i < x.rows(); ++i) mx = std::max(mx, x(i, j) * inv_t);
    double z = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) z += std::exp(x(i, j) * inv_t - mx);
    return mx + std::log(z);
}

}  // namespace

Var softmax_cross_entropy(Graph& g, Var logits, std::span<const int> labels) {
    const Tensor2D& X = g.value(logits);
    if (X.rows() < 2) throw DimensionError("softmax_cross_entropy: need at least 2 classes");
    if (labels.size() != X.cols()) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                             " labels for logits " + X.shape_string());
    }
    std::vector<int> y(labels.begin(), labels.end());
    double total = 0.0;
    for (std::size_t j = 0; j < X.cols(); ++j) {
        if (y[j] < 0 || static_cast<std::size_t>(y[j]) >= X.rows()) {
            throw IndexError("softmax_cross_entropy: label " + std::to_string(y[j]) +
                             " out of range for " + std::to_string(X.rows()) + " classes");
        }
        total += column_lse(X, j, 1.0) - X(static_cast<std::size_t>(y[j]), j);
    }
    const double inv_b = 1.0 / static_cast<double>(X.cols());
    Tensor2D loss(1, 1, total * inv_b);
    return g.record(std::move(loss), {logits}, [logits, y = std::move(y), inv_b](Graph& gr, Var self) {
        const double s = gr.grad(self)(0, 0) * inv_b;
        Tensor2D p = softmax_columns(gr.value(logits));
        for (std::size_t j = 0; j < p.cols(); ++j) p(static_cast<std::size_t>(y[j]), j) -= 1.0;
        kernels::active().scale(p.data(), p.data(), s, p.size());
        gr.accumulate(logits, p);
    });
}

Var kd_divergence(Graph& g, const Tensor2D& teacher_logits, Var student_logits,
                  double temperature) {
    if (!(temperature > 0.0)) {
        throw ConfigError("kd_divergence: temperature must be positive, got " +
                          std::to_string(temperature));
    }
    const Tensor2D& S = g.value(student_logits);
    require_same_shape(teacher_logits, S, "kd_divergence");
    const double inv_t = 1.0 / temperature;
    const Tensor2D p = softmax_columns(teacher_logits, inv_t);
    double total = 0.0;
    for (std::size_t j = 0; j < S.cols(); ++j) {
        const double lse_t = column_lse(teacher_logits, j, inv_t);
        const double lse_s = column_lse(S, j, inv_t);
        for (std::size_t i = 0; i < S.rows(); ++i) {
            if (p(i, j) == 0.0) continue;
            const double log_p = teacher_logits(i, j) * inv_t - lse_t;
            const double log_q = S(i, j) * inv_t - lse_s;
            total += p(i, j) * (log_p - log_q);
        }
    }
    const double inv_b = 1.0 / static_cast<double>(S.cols());
    const double t2 = temperature * temperature;
    Tensor2D loss(1, 1, t2 * total * inv_b);
    return g.record(std::move(loss), {student_logits},
                    [student_logits, p, inv_t, inv_b, temperature](Graph& gr, Var self) {
                        // d/ds of T^2 KL = T (q - p)
                        const double s = gr.grad(self)(0, 0) * inv_b * temperature;
                        Tensor2D q = softmax_columns(gr.value(student_logits), inv_t);
                        for (std::size_t i = 0; i < q.size(); ++i) q[i] = s * (q[i] - p[i]);
                        gr.accumulate(student_logits, q);
                    });
}

}  // namespace prunelab::ad
