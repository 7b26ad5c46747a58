// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

// Reverse-mode autodiff over row-major matrices.
//
// Every op returns a Var holding its value and, when gradients are enabled
// and at least one input requires them, a backward closure plus parent links.
// backward(loss) walks the graph in reverse topological order. Parameters are
// long-lived leaves whose gradients accumulate into Parameter::grad.

#pragma once

#include "ecgchat/tensor.hpp"

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ecgchat::ag {

struct Parameter {
    std::string name;
    std::string group;
    Matrix value;
    Matrix grad;
    bool trainable = true;

    Parameter(std::string n, std::string g, Matrix v)
        : name(std::move(n)), group(std::move(g)), value(std::move(v)),
          grad(Matrix::Zero(value.rows(), value.cols())) {}

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using ParamPtr = std::shared_ptr<Parameter>;

struct Node {
    Matrix value;
    Matrix grad;
    Parameter* param = nullptr;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    const Matrix& val() const { return param != nullptr ? param->value : value; }
    Matrix& grad_ref();
};

class Var {
public:
    Var() = default;
    explicit Var(Matrix value);
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Var leaf(Parameter& p);

    const Matrix& value() const { return node_->val(); }
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    double item() const { return value()(0, 0); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const { return static_cast<bool>(node_); }
    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

bool grad_enabled();

/// Disables graph construction for its lifetime (inference paths).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Seeds d(loss)/d(loss) = 1 and propagates. loss must be 1x1.
void backward(const Var& loss);

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var add_row(const Var& x, const Var& row);
Var scale(const Var& x, double s);
Var mul_scalar(const Var& x, const Var& s);
Var exp(const Var& x);
Var gelu(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var gather_rows(const Var& table, std::span<const int> index);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(const Var& x, Index start, Index count);
Var transpose(const Var& x);
Var mean_rows(const Var& x);
Var sum(const Var& x);
Var l2_normalize_rows(const Var& x, double eps = 1e-12);

/// Multi-head scaled dot-product attention over row-token matrices q, k, v
/// (tokens x width); width must divide evenly by heads.
Var attention(const Var& q, const Var& k, const Var& v, int heads, bool causal);

/// Mean token cross-entropy over rows whose mask entry is nonzero.
/// Rows with mask 0 receive exactly zero gradient.
Var cross_entropy(const Var& logits, std::span<const int> targets, std::span<const std::uint8_t> mask);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }

double gelu_scalar(double x);

}  // namespace ecgchat::ag
