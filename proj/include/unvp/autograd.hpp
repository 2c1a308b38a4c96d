#pragma once

// Reverse-mode tape. Primitives record themselves in execution order; the
// backward sweep walks the record in reverse, accumulating adjoints in
// scratch buffers keyed by array identity. Parameter .grad fields are only
// touched after the whole sweep finished cleanly, so a numeric failure never
// leaves gradients half-written.

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "unvp/array.hpp"
#include "unvp/error.hpp"

namespace unvp {

class Tape {
public:
    // Returns the adjoint buffer for `a`, creating it zero-filled on first use.
    using Accum = std::function<std::vector<double>&(const ArrayPtr&)>;
    // Receives the output adjoint and pushes contributions into input buffers.
    using BackFn = std::function<void(const std::vector<double>& gout, const Accum& adj)>;

    bool recording = true;

    // Registers the result of a primitive. Always verifies the forward values
    // are finite; stores a node only while recording and only if gradients can
    // flow into the result at all.
    ArrayPtr record(const char* op, std::vector<ArrayPtr> inputs, ArrayPtr out, BackFn back) {
        if (!out->all_finite())
            throw NumericError(std::string(op) + ": non-finite output at node " + std::to_string(nodes_.size()));
        bool needs_grad = false;
        for (const auto& in : inputs)
            if (in->requires_grad) needs_grad = true;
        out->requires_grad = needs_grad;
        if (recording && needs_grad)
            nodes_.push_back(Node{op, std::move(inputs), out, std::move(back)});
        return out;
    }

    std::size_t size() const { return nodes_.size(); }

    void clear() { nodes_.clear(); }

    // Accumulates d(loss)/d(leaf) into every reachable leaf with
    // requires_grad. Repeated calls add up until grads are cleared.
    void backward(const ArrayPtr& loss) {
        if (loss->numel() != 1)
            throw ShapeError("backward: target must be scalar, got " + loss->shape_str());

        std::unordered_map<const Array*, std::vector<double>> adjoint;
        adjoint[loss.get()] = {1.0};

        Accum accum = [&adjoint](const ArrayPtr& a) -> std::vector<double>& {
            auto& buf = adjoint[a.get()];
            if (buf.size() != a->numel()) buf.assign(a->numel(), 0.0);
            return buf;
        };

        for (std::size_t k = nodes_.size(); k-- > 0;) {
            const Node& node = nodes_[k];
            auto it = adjoint.find(node.out.get());
            if (it == adjoint.end()) continue; // not on a path to the loss
            node.back(it->second, accum);
            for (const auto& in : node.inputs) {
                auto jt = adjoint.find(in.get());
                if (jt == adjoint.end()) continue;
                for (double v : jt->second)
                    if (!std::isfinite(v))
                        throw NumericError(std::string("backward: non-finite gradient out of '") + node.op +
                                           "' at node " + std::to_string(k));
            }
        }

        // Sweep finished; now it is safe to touch persistent gradients.
        for (const Node& node : nodes_) {
            for (const auto& in : node.inputs) {
                if (!in->requires_grad || in->grad.empty()) continue;
                auto it = adjoint.find(in.get());
                if (it == adjoint.end() || it->second.empty()) continue;
                for (std::size_t i = 0; i < in->grad.size(); ++i) in->grad[i] += it->second[i];
                it->second.clear(); // a leaf may feed many nodes; fold once
            }
        }
        if (loss->requires_grad && !loss->grad.empty()) {
            auto it = adjoint.find(loss.get());
            if (it != adjoint.end() && !it->second.empty()) loss->grad[0] += 1.0;
        }
    }

private:
    struct Node {
        const char* op;
        std::vector<ArrayPtr> inputs;
        ArrayPtr out;
        BackFn back;
    };
    std::vector<Node> nodes_;
};

// Scoped recording switch for inference-only passes.
struct NoGrad {
    explicit NoGrad(Tape& t) : tape(t), prev(t.recording) { tape.recording = false; }
    ~NoGrad() { tape.recording = prev; }
    Tape& tape;
    bool prev;
};

} // namespace unvp
