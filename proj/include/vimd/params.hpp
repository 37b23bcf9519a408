#pragma once

// Named parameter registry shared by the encoder, ViM stack and heads.
// Each forward pass binds every parameter to a single tape leaf so that
// repeated use accumulates into one gradient, collected after backward().

#include "vimd/autodiff.hpp"
#include "vimd/core.hpp"

#include <map>
#include <string>

namespace vimd {

struct ParamEntry {
    Matrix value;
    Matrix grad;
    Matrix m, v;  // optimizer state
};

class ParamStore {
public:
    Matrix& create(const std::string& name, Matrix init) {
        auto [it, inserted] = entries_.try_emplace(name);
        if (inserted) {
            it->second.value = std::move(init);
            it->second.grad = Matrix::Zero(it->second.value.rows(), it->second.value.cols());
        }
        return it->second.value;
    }

    bool has(const std::string& name) const { return entries_.count(name) > 0; }

    ParamEntry& entry(const std::string& name) {
        auto it = entries_.find(name);
        require(it != entries_.end(), "unknown parameter: " + name);
        return it->second;
    }

    const std::map<std::string, ParamEntry>& entries() const { return entries_; }
    std::map<std::string, ParamEntry>& entries() { return entries_; }

    void begin_graph(bool requires_grad = true) {
        active_.clear();
        requires_grad_ = requires_grad;
    }

    ad::Var var(const std::string& name) {
        auto it = active_.find(name);
        if (it != active_.end()) return it->second;
        ad::Var v = ad::leaf(entry(name).value, requires_grad_);
        active_.emplace(name, v);
        return v;
    }

    // pull gradients out of the current graph; parameters untouched by it get zero
    void collect_grads() {
        for (auto& [name, e] : entries_) {
            auto it = active_.find(name);
            if (it != active_.end() && it->second.grad().size() != 0)
                e.grad = it->second.grad();
            else
                e.grad.setZero();
        }
    }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& [name, e] : entries_) n += static_cast<std::size_t>(e.value.size());
        return n;
    }

private:
    std::map<std::string, ParamEntry> entries_;
    std::map<std::string, ad::Var> active_;
    bool requires_grad_ = true;
};

}  // namespace vimd
