#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "morphlm/nn/tensor.hpp"

namespace morphlm::nn {

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
};

/// Ordered, name-indexed collection of parameters. Copying a store deep-copies
/// every tensor; modules refer to parameters by index so copies stay valid.
class ParameterStore {
public:
    std::size_t add(std::string name, Tensor init);

    Parameter& operator[](std::size_t i) { return params_[i]; }
    const Parameter& operator[](std::size_t i) const { return params_[i]; }

    std::optional<std::size_t> find(std::string_view name) const;
    Parameter& get(std::string_view name);
    const Parameter& get(std::string_view name) const;

    std::size_t size() const { return params_.size(); }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    void zero_grad();
    std::size_t total_values() const;

private:
    std::vector<Parameter> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;
};

/// Reverse-mode tape. Parameter leaves read and accumulate directly into the
/// Parameter tensors; all other gradients live on the tape and are reset at
/// the start of each backward() call, so one forward can be differentiated
/// with respect to several roots in turn.
class Tape {
public:
    enum class Mode { train, inference };
    using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

    explicit Tape(Mode mode = Mode::train) : mode_(mode) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Mode mode() const { return mode_; }
    bool training() const { return mode_ == Mode::train; }

    Var parameter(Parameter& p);
    Var constant(Tensor value);

    /// Records an op result. `fn` is dropped when no input requires a gradient.
    Var record(Tensor value, bool requires_grad, BackwardFn fn);

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

    /// Gradient accumulator for `v`, zero-initialised on first touch.
    Tensor& grad(Var v);

    /// Seeds d(root)/d(root) = 1 and propagates to every parameter leaf.
    void backward(Var root);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        Parameter* param = nullptr;
        BackwardFn backward;
        bool requires_grad = false;
        bool touched = false;
    };

    Mode mode_;
    std::deque<Node> nodes_;
    std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

}  // namespace morphlm::nn
