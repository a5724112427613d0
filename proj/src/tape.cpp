#include "demorph/tape.hpp"

#include <atomic>

namespace demorph {

namespace {
std::atomic<uint64_t> g_tape_counter{1};
}

Tape::Tape() : id_(g_tape_counter.fetch_add(1)) {}

int Tape::watch(Tensor& t) {
    if (consumed_) throw TapeError("watch: tape already consumed by backward");
    Node n;
    n.size = t.size();
    nodes_.push_back(std::move(n));
    t.grad_id = static_cast<int>(nodes_.size()) - 1;
    t.grad_tape = id_;
    return t.grad_id;
}

int Tape::record(std::vector<int> parents, int64_t out_size, BackwardFn fn) {
    if (consumed_) throw TapeError("record: tape already consumed by backward");
    for (int p : parents) {
        if (p < 0 || p >= static_cast<int>(nodes_.size()))
            throw TapeError("record: parent handle " + std::to_string(p) + " not on this tape");
    }
    Node n;
    n.parents = std::move(parents);
    n.size = out_size;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

GradBuffers Tape::backward(const Tensor& loss) {
    if (handle_of(loss) < 0) throw TapeError("backward: tensor is detached from this tape");
    if (consumed_) throw TapeError("backward: tape already consumed");
    if (loss.size() != 1) throw TapeError("backward: loss must be scalar, got " + shape_str(loss.shape));
    int root = loss.grad_id;
    if (root >= static_cast<int>(nodes_.size()))
        throw TapeError("backward: loss handle not on this tape");

    GradBuffers grads(nodes_.size());
    grads[static_cast<size_t>(root)] = {1.0};

    // Reachability pass so unreachable side branches are skipped, then one
    // reverse sweep in id order (reverse topological by construction).
    std::vector<char> reachable(nodes_.size(), 0);
    reachable[static_cast<size_t>(root)] = 1;
    for (int id = root; id >= 0; --id) {
        if (!reachable[static_cast<size_t>(id)]) continue;
        for (int p : nodes_[static_cast<size_t>(id)].parents) reachable[static_cast<size_t>(p)] = 1;
    }
    for (int id = root; id >= 0; --id) {
        auto& node = nodes_[static_cast<size_t>(id)];
        if (!reachable[static_cast<size_t>(id)] || !node.backward) continue;
        auto& g = grads[static_cast<size_t>(id)];
        if (g.empty()) g.assign(static_cast<size_t>(node.size), 0.0);
        for (int p : node.parents) {
            auto& pg = grads[static_cast<size_t>(p)];
            if (pg.empty()) pg.assign(static_cast<size_t>(nodes_[static_cast<size_t>(p)].size), 0.0);
        }
        node.backward(g, grads);
    }
    consumed_ = true;
    return grads;
}

}  // namespace demorph
