#pragma once

#include <functional>
#include <memory>
#include <random>

#include "voxa/nd.hpp"

namespace voxa {

template <class T>
class Tape;

// Named trainable weight. The value lives behind a shared_ptr so forward
// passes can view it without copying; grad is the cross-batch accumulator.
template <class T>
struct Parameter {
    std::string name;
    std::shared_ptr<NdArray<T>> value;
    NdArray<T> grad;

    Parameter(std::string n, NdArray<T> v)
        : name(std::move(n)),
          value(std::make_shared<NdArray<T>>(std::move(v))),
          grad(value->shape) {}

    void zero_grad() { std::fill(grad.v.begin(), grad.v.end(), T(0)); }
};

// Handle to a value, optionally recorded on a tape.
template <class T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NdArray<T> v) : val_(std::make_shared<NdArray<T>>(std::move(v))) {}
    explicit Tensor(std::shared_ptr<NdArray<T>> v) : val_(std::move(v)) {}

    bool defined() const { return bool(val_); }
    const NdArray<T>& val() const { return *val_; }
    const std::vector<int>& shape() const { return val_->shape; }
    std::shared_ptr<const NdArray<T>> ptr() const { return val_; }
    std::int64_t numel() const { return val_->numel(); }

    bool on_tape() const { return tape_ != nullptr; }
    Tape<T>* tape() const { return tape_; }
    int node() const { return node_; }

private:
    friend class Tape<T>;
    std::shared_ptr<NdArray<T>> val_;
    Tape<T>* tape_ = nullptr;
    int node_ = -1;
};

// Reverse-mode tape. Nodes are appended in execution order, which is a
// topological order by construction; backward walks it once in reverse.
template <class T>
class Tape {
public:
    // parent_grads[i] is null when that parent needs no gradient.
    using BackFn =
        std::function<void(const NdArray<T>& gout, const std::vector<NdArray<T>*>& parent_grads)>;

    Tensor<T> leaf(NdArray<T> v, bool requires_grad) {
        Tensor<T> t(std::move(v));
        if (!requires_grad) return t;
        bind(t, add_node({}, nullptr, true, nullptr));
        return t;
    }

    Tensor<T> param(Parameter<T>& p) {
        Tensor<T> t(p.value);
        bind(t, add_node({}, nullptr, true, &p));
        return t;
    }

    // Record an op. Inputs not on this tape are treated as constants.
    Tensor<T> record(NdArray<T> out, const std::vector<const Tensor<T>*>& inputs, BackFn back) {
        bool any = false;
        std::vector<int> parents(inputs.size(), -1);
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            const Tensor<T>* in = inputs[i];
            if (in->on_tape() && in->tape() == this && nodes_[std::size_t(in->node())].needs) {
                parents[std::size_t(i)] = in->node();
                any = true;
            }
        }
        Tensor<T> t(std::move(out));
        if (!any) return t;
        bind(t, add_node(std::move(parents), std::move(back), true, nullptr));
        return t;
    }

    // Accumulates into every requires-grad leaf; a tape is consumed once.
    void backward(const Tensor<T>& root) {
        if (consumed_) throw std::logic_error("tape already consumed by backward");
        if (!root.on_tape() || root.tape() != this)
            throw std::logic_error("backward root is not on this tape");
        if (root.numel() != 1) throw ShapeError("backward root must be scalar");

        grads_.assign(nodes_.size(), NdArray<T>());
        shapes_.resize(nodes_.size());
        grads_[std::size_t(root.node())] = NdArray<T>(root.shape(), T(1));

        for (int i = int(nodes_.size()) - 1; i >= 0; --i) {
            auto& node = nodes_[std::size_t(i)];
            auto& g = grads_[std::size_t(i)];
            if (g.v.empty() || !node.back) continue;
            std::vector<NdArray<T>*> pg(node.parents.size(), nullptr);
            for (std::size_t p = 0; p < node.parents.size(); ++p) {
                const int pid = node.parents[p];
                if (pid < 0) continue;
                auto& slot = grads_[std::size_t(pid)];
                if (slot.v.empty()) slot = NdArray<T>(shapes_[std::size_t(pid)], T(0));
                pg[p] = &slot;
            }
            node.back(g, pg);
            g = NdArray<T>();  // free as we go
        }

        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            auto* p = nodes_[i].param;
            if (!p || grads_[i].v.empty()) continue;
            for (std::size_t j = 0; j < p->grad.v.size(); ++j) p->grad.v[j] += grads_[i].v[j];
        }
        consumed_ = true;
    }

    // Gradient of a leaf created via leaf(..., true), valid after backward.
    NdArray<T> grad_of(const Tensor<T>& t) const {
        if (!consumed_) throw std::logic_error("backward has not run");
        if (!t.on_tape() || t.tape() != this) throw std::logic_error("tensor not on tape");
        const auto& g = grads_[std::size_t(t.node())];
        if (g.v.empty()) return NdArray<T>(t.shape(), T(0));
        return g;
    }

    void note_shape(int node, const std::vector<int>& shape) {
        shapes_[std::size_t(node)] = shape;
    }

    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    void clear() {
        nodes_.clear();
        grads_.clear();
        shapes_.clear();
        consumed_ = false;
    }

private:
    struct Node {
        std::vector<int> parents;
        BackFn back;
        bool needs = false;
        Parameter<T>* param = nullptr;
    };

    int add_node(std::vector<int> parents, BackFn back, bool needs, Parameter<T>* param) {
        nodes_.push_back(Node{std::move(parents), std::move(back), needs, param});
        shapes_.emplace_back();
        return int(nodes_.size()) - 1;
    }

    void bind(Tensor<T>& t, int node) {
        t.tape_ = this;
        t.node_ = node;
        shapes_[std::size_t(node)] = t.shape();
    }

    std::vector<Node> nodes_;
    std::vector<NdArray<T>> grads_;
    std::vector<std::vector<int>> shapes_;
    bool consumed_ = false;
};

// Ordered collection of parameters; registration order fixes checkpoint and
// optimizer layout.
template <class T>
class ParamStore {
public:
    Parameter<T>& add(const std::string& name, NdArray<T> init) {
        params_.push_back(std::make_unique<Parameter<T>>(name, std::move(init)));
        return *params_.back();
    }

    std::size_t size() const { return params_.size(); }
    Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
    const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

    Parameter<T>* find(const std::string& name) {
        for (auto& p : params_)
            if (p->name == name) return p.get();
        return nullptr;
    }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

    std::int64_t total_scalars() const {
        std::int64_t n = 0;
        for (auto& p : params_) n += p->value->numel();
        return n;
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::vector<std::unique_ptr<Parameter<T>>> params_;
};

// Deterministic weight initializers.
template <class T>
NdArray<T> normal_init(std::vector<int> shape, double stddev, std::mt19937_64& rng) {
    NdArray<T> a(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& x : a.v) x = T(dist(rng));
    return a;
}

template <class T>
NdArray<T> kaiming_init(std::vector<int> shape, std::int64_t fan_in, std::mt19937_64& rng) {
    return normal_init<T>(std::move(shape), std::sqrt(2.0 / double(fan_in)), rng);
}

}  // namespace voxa
