#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "swinfe/tensor.hpp"

namespace swinfe {

/// Multiply-accumulate counter with a per-operation breakdown.
class FlopCounter {
public:
    void add(std::string_view op, std::uint64_t macs) {
        total_ += macs;
        by_op_[std::string(op)] += macs;
    }
    std::uint64_t total() const { return total_; }
    std::uint64_t of(std::string_view op) const {
        auto it = by_op_.find(std::string(op));
        return it == by_op_.end() ? 0 : it->second;
    }
    /// Sum over every op whose name starts with `prefix`.
    std::uint64_t with_prefix(std::string_view prefix) const {
        std::uint64_t n = 0;
        for (const auto& [name, v] : by_op_) {
            if (std::string_view(name).substr(0, prefix.size()) == prefix) n += v;
        }
        return n;
    }
    const std::map<std::string, std::uint64_t>& breakdown() const { return by_op_; }
    void reset() {
        total_ = 0;
        by_op_.clear();
    }

private:
    std::uint64_t total_ = 0;
    std::map<std::string, std::uint64_t> by_op_;
};

/// Per-forward-pass record of differentiable operations.
///
/// Nodes are appended in execution order, so every parent precedes its
/// children. backward() walks the list in reverse. A tape with recording
/// disabled still runs operations (and counts FLOPs) but keeps no nodes.
template <typename T>
class Tape {
public:
    using Impl = std::shared_ptr<TensorData<T>>;
    using BackwardFn = std::function<void(std::span<const T> out_grad)>;

    struct Node {
        std::string op;
        std::vector<Impl> parents;
        Impl output;
        BackwardFn backward;
    };

    explicit Tape(bool recording = true, FlopCounter* flops = nullptr)
        : recording_(recording), flops_(flops) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }
    void set_recording(bool on) { recording_ = on; }

    FlopCounter* flops() const { return flops_; }
    void set_flops(FlopCounter* f) { flops_ = f; }
    void count(std::string_view op, std::uint64_t macs) {
        if (flops_) flops_->add(op, macs);
    }

    /// True when an op over `parents` must be recorded.
    bool needs_grad(std::initializer_list<const Tensor<T>*> parents) const {
        if (!recording_) return false;
        for (const auto* p : parents) {
            if (p && p->defined() && p->requires_grad()) return true;
        }
        return false;
    }

    void record(std::string op, std::vector<Impl> parents, const Tensor<T>& output, BackwardFn fn) {
        nodes_.push_back(Node{std::move(op), std::move(parents), output.impl(), std::move(fn)});
    }

    std::size_t size() const { return nodes_.size(); }
    const std::vector<Node>& nodes() const { return nodes_; }
    void clear() { nodes_.clear(); }

    /// Test hook: scale the incoming gradient of every `op` node by `factor`
    /// during backward, producing a deliberately wrong derivative.
    void inject_backward_fault(std::string op, T factor) {
        fault_op_ = std::move(op);
        fault_factor_ = factor;
    }

    void backward(const Tensor<T>& loss) {
        if (!loss.defined() || loss.numel() != 1) {
            throw ContractError("backward() requires a scalar loss, got shape " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
        }
        if (nodes_.empty()) throw ContractError("backward() on an empty tape");
        auto lg = loss.impl()->grad_buffer();
        lg[0] += T(1);
        std::vector<T> scratch;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            auto& out = *it->output;
            if (out.grad.empty()) continue;
            if (!fault_op_.empty() && it->op == fault_op_) {
                scratch.assign(out.grad.begin(), out.grad.end());
                for (auto& g : scratch) g *= fault_factor_;
                it->backward(scratch);
            } else {
                it->backward(out.grad);
            }
        }
    }

private:
    bool recording_;
    FlopCounter* flops_;
    std::vector<Node> nodes_;
    std::string fault_op_;
    T fault_factor_ = T(1);
};

}  // namespace swinfe
