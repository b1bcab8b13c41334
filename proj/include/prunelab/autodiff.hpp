#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prunelab/tensor.hpp"

namespace prunelab::ad {

// Handle to a node of a Graph. Only meaningful for the graph that issued it.
struct Var {
    std::size_t index = 0;
};

// Parameter name -> dL/dparam, shaped like the parameter.
class GradientStore {
public:
    bool contains(const std::string& name) const { return grads_.count(name) != 0; }
    const Tensor2D& at(const std::string& name) const;
    const Tensor2D* find(const std::string& name) const;
    std::size_t size() const { return grads_.size(); }
    auto begin() const { return grads_.begin(); }
    auto end() const { return grads_.end(); }

    void insert(std::string name, Tensor2D grad);

private:
    std::map<std::string, Tensor2D> grads_;
};

// Append-only tape. Nodes are stored in creation order, so parents always
// precede children and backward is a single reverse sweep. Node values are
// never modified after creation.
class Graph {
public:
    // Called during backward with the node's accumulated output gradient
    // available through grad(self). Implementations add into their parents
    // via accumulate().
    using BackwardFn = std::function<void(Graph&, Var self)>;

    Var constant(Tensor2D value);
    Var parameter(std::string name, Tensor2D value);
    // The node bound by the most recent parameter() call with this name.
    std::optional<Var> find_parameter(const std::string& name) const;

    // Adds an operation node. `backward` is dropped when no parent needs a
    // gradient.
    Var record(Tensor2D value, std::vector<Var> parents, BackwardFn backward);

    const Tensor2D& value(Var v) const { return nodes_.at(v.index).value; }
    bool requires_grad(Var v) const { return nodes_.at(v.index).requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    // Output gradient of a node during backward.
    const Tensor2D& grad(Var v) const;
    // grad(target) += delta. No-op for nodes that do not require a gradient.
    void accumulate(Var target, const Tensor2D& delta);
    // Direct access to the gradient buffer of `target` (allocated on demand).
    Tensor2D& grad_buffer(Var target);

    // Reverse sweep from a 1x1 loss node, seeded with 1.0. May be called
    // once per graph; reset() starts a new tape.
    GradientStore backward(Var loss);

    void reset();

private:
    struct Node {
        Tensor2D value;
        Tensor2D grad;
        std::vector<Var> parents;
        BackwardFn backward;
        std::string param_name;
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;
    std::map<std::string, std::size_t> params_;
    bool backward_done_ = false;
};

Var matmul(Graph& g, Var a, Var b);
Var add(Graph& g, Var a, Var b);
Var hadamard(Graph& g, Var a, Var b);
Var relu(Graph& g, Var a);
Var sigmoid(Graph& g, Var a);
Var scale(Graph& g, Var a, double s);
Var add_scalar(Graph& g, Var a, double s);
// Sum of all entries as a 1x1 node.
Var sum(Graph& g, Var a);
// a[r x c] + bias[r x 1] broadcast across columns.
Var add_bias(Graph& g, Var a, Var bias);

enum class ElementwiseOp { relu, sigmoid, add, hadamard };
// Dispatching front end over the named elementwise ops; `b` is required for
// the binary kinds and ignored otherwise.
Var elementwise(Graph& g, ElementwiseOp op, Var a, const Var* b = nullptr);

// Logits are C x B with one example per column. Returns the batch mean of
// -log softmax(logits[:, b])[labels[b]] as a 1x1 node.
Var softmax_cross_entropy(Graph& g, Var logits, std::span<const int> labels);

// T^2 * KL(softmax(teacher/T) || softmax(student/T)), averaged over the
// batch columns. The teacher is a constant; gradients reach the student only.
Var kd_divergence(Graph& g, const Tensor2D& teacher_logits, Var student_logits,
                  double temperature);

// Numerically stable column softmax, shared by the loss ops and the models.
Tensor2D softmax_columns(const Tensor2D& logits, double inv_temperature = 1.0);

double sigmoid(double x);

}  // namespace prunelab::ad
