#pragma once

#include <functional>
#include <vector>

#include "demorph/tensor.hpp"

namespace demorph {

// Gradients indexed by tape node id; empty vector = node not reached.
using GradBuffers = std::vector<std::vector<double>>;

// Append-only record of differentiable operations. Node ids are creation
// order, so every node's parents precede it and a single reverse sweep
// visits each node exactly once. A tape belongs to one training context;
// it is not shared across threads.
class Tape {
public:
    // Backward closure: reads this node's accumulated gradient, adds into
    // the parents' buffers (already allocated by the sweep).
    using BackwardFn = std::function<void(const std::vector<double>& out_grad, GradBuffers& grads)>;

    // Register a leaf (parameter or input we want gradients for).
    int watch(Tensor& t);

    // Record an interior op node. Parents must already be on this tape.
    int record(std::vector<int> parents, int64_t out_size, BackwardFn fn);

    // Reverse sweep from a tape-recorded scalar. Populates gradients for
    // every reachable node and consumes the tape (one backward per tape).
    GradBuffers backward(const Tensor& loss);

    // Handle of t on THIS tape; -1 when t is detached or belongs to another
    // (possibly dead) tape.
    int handle_of(const Tensor& t) const {
        return t.grad_id >= 0 && t.grad_tape == id_ ? t.grad_id : -1;
    }

    uint64_t id() const { return id_; }
    int64_t node_size(int id) const { return nodes_.at(static_cast<size_t>(id)).size; }
    size_t num_nodes() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

private:
    struct Node {
        std::vector<int> parents;
        int64_t size = 0;
        BackwardFn backward;  // null for leaves
    };
    std::vector<Node> nodes_;
    uint64_t id_ = 0;
    bool consumed_ = false;
};

}  // namespace demorph
