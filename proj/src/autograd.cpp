// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "ecgchat/autograd.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_set>

namespace ecgchat::ag {

namespace {

thread_local bool g_grad_enabled = true;

void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

Var make_result(Matrix value, std::initializer_list<Var> inputs, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (g_grad_enabled) {
        bool any = false;
        for (const auto& in : inputs) any = any || in.requires_grad();
        if (any) {
            node->requires_grad = true;
            for (const auto& in : inputs) node->parents.push_back(in.node());
            node->backward_fn = std::move(fn);
        }
    }
    return Var(std::move(node));
}

Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

}  // namespace

Matrix& Node::grad_ref() {
    if (param != nullptr) {
        if (param->grad.rows() != param->value.rows() || param->grad.cols() != param->value.cols())
            param->grad = Matrix::Zero(param->value.rows(), param->value.cols());
        return param->grad;
    }
    if (grad.rows() != value.rows() || grad.cols() != value.cols())
        grad = Matrix::Zero(value.rows(), value.cols());
    return grad;
}

Var::Var(Matrix value) : node_(std::make_shared<Node>()) { node_->value = std::move(value); }

Var Var::leaf(Parameter& p) {
    auto node = std::make_shared<Node>();
    node->param = &p;
    node->requires_grad = p.trainable && g_grad_enabled;
    return Var(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Var& loss) {
    require(loss.rows() == 1 && loss.cols() == 1, "backward: loss must be scalar");
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    loss.node()->grad_ref().setConstant(1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
    // Drop intermediate grads so the graph can be released promptly.
    for (Node* n : order) {
        if (n->param == nullptr) n->grad.resize(0, 0);
    }
}

Var matmul(const Var& a, const Var& b) {
    require(a.cols() == b.rows(), "matmul: inner dimensions differ");
    Matrix out = a.value() * b.value();
    return make_result(std::move(out), {a, b}, [](Node& n) {
        Node& pa = parent(n, 0);
        Node& pb = parent(n, 1);
        if (pa.requires_grad) pa.grad_ref().noalias() += n.grad * pb.val().transpose();
        if (pb.requires_grad) pb.grad_ref().noalias() += pa.val().transpose() * n.grad;
    });
}

Var add(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
    return make_result(a.value() + b.value(), {a, b}, [](Node& n) {
        for (std::size_t i = 0; i < 2; ++i)
            if (parent(n, i).requires_grad) parent(n, i).grad_ref() += n.grad;
    });
}

Var sub(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
    return make_result(a.value() - b.value(), {a, b}, [](Node& n) {
        if (parent(n, 0).requires_grad) parent(n, 0).grad_ref() += n.grad;
        if (parent(n, 1).requires_grad) parent(n, 1).grad_ref() -= n.grad;
    });
}

Var add_row(const Var& x, const Var& row) {
    require(row.rows() == 1 && row.cols() == x.cols(), "add_row: bias shape mismatch");
    Matrix out = x.value().rowwise() + row.value().row(0);
    return make_result(std::move(out), {x, row}, [](Node& n) {
        if (parent(n, 0).requires_grad) parent(n, 0).grad_ref() += n.grad;
        if (parent(n, 1).requires_grad) parent(n, 1).grad_ref() += n.grad.colwise().sum();
    });
}

Var scale(const Var& x, double s) {
    return make_result(x.value() * s, {x}, [s](Node& n) { parent(n, 0).grad_ref() += n.grad * s; });
}

Var mul_scalar(const Var& x, const Var& s) {
    require(s.rows() == 1 && s.cols() == 1, "mul_scalar: scalar must be 1x1");
    return make_result(x.value() * s.item(), {x, s}, [](Node& n) {
        Node& px = parent(n, 0);
        Node& ps = parent(n, 1);
        if (px.requires_grad) px.grad_ref() += n.grad * ps.val()(0, 0);
        if (ps.requires_grad) ps.grad_ref()(0, 0) += n.grad.cwiseProduct(px.val()).sum();
    });
}

Var exp(const Var& x) {
    Matrix out = x.value().array().exp().matrix();
    return make_result(out, {x}, [](Node& n) { parent(n, 0).grad_ref() += n.grad.cwiseProduct(n.value); });
}

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

Var gelu(const Var& x) {
    Matrix out = x.value().unaryExpr([](double v) { return gelu_scalar(v); });
    return make_result(std::move(out), {x}, [](Node& n) {
        Node& px = parent(n, 0);
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        Matrix d = px.val().unaryExpr([inv_sqrt_2pi](double v) {
            const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
            return cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
        });
        px.grad_ref() += n.grad.cwiseProduct(d);
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Index cols = x.cols();
    require(gamma.cols() == cols && beta.cols() == cols && gamma.rows() == 1 && beta.rows() == 1,
            "layer_norm: affine shape mismatch");
    const Matrix& xv = x.value();
    Matrix xhat(xv.rows(), cols);
    Eigen::VectorXd inv_std(xv.rows());
    for (Index r = 0; r < xv.rows(); ++r) {
        const double mean = xv.row(r).mean();
        const double var = (xv.row(r).array() - mean).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
    }
    Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
    return make_result(std::move(out), {x, gamma, beta},
                       [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
                           Node& px = parent(n, 0);
                           Node& pg = parent(n, 1);
                           Node& pb = parent(n, 2);
                           if (pg.requires_grad) pg.grad_ref() += n.grad.cwiseProduct(xhat).colwise().sum();
                           if (pb.requires_grad) pb.grad_ref() += n.grad.colwise().sum();
                           if (px.requires_grad) {
                               Matrix dxhat = n.grad.array().rowwise() * pg.val().row(0).array();
                               const double inv_cols = 1.0 / static_cast<double>(dxhat.cols());
                               Matrix& gx = px.grad_ref();
                               for (Index r = 0; r < dxhat.rows(); ++r) {
                                   const double m1 = dxhat.row(r).sum() * inv_cols;
                                   const double m2 = dxhat.row(r).dot(xhat.row(r)) * inv_cols;
                                   gx.row(r).array() +=
                                       inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                               }
                           }
                       });
}

Var gather_rows(const Var& table, std::span<const int> index) {
    const Matrix& t = table.value();
    Matrix out(static_cast<Index>(index.size()), t.cols());
    for (std::size_t i = 0; i < index.size(); ++i) {
        require(index[i] >= 0 && index[i] < t.rows(), "gather_rows: index out of range");
        out.row(static_cast<Index>(i)) = t.row(index[i]);
    }
    std::vector<int> idx(index.begin(), index.end());
    return make_result(std::move(out), {table}, [idx = std::move(idx)](Node& n) {
        Matrix& g = parent(n, 0).grad_ref();
        for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += n.grad.row(static_cast<Index>(i));
    });
}

Var concat_rows(std::span<const Var> parts) {
    require(!parts.empty(), "concat_rows: no inputs");
    Index rows = 0;
    const Index cols = parts.front().cols();
    for (const auto& p : parts) {
        require(p.cols() == cols, "concat_rows: column mismatch");
        rows += p.rows();
    }
    Matrix out(rows, cols);
    Index at = 0;
    for (const auto& p : parts) {
        out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    if (g_grad_enabled) {
        bool any = false;
        for (const auto& p : parts) any = any || p.requires_grad();
        if (any) {
            node->requires_grad = true;
            std::vector<Index> offsets;
            Index off = 0;
            for (const auto& p : parts) {
                node->parents.push_back(p.node());
                offsets.push_back(off);
                off += p.rows();
            }
            node->backward_fn = [offsets = std::move(offsets)](Node& n) {
                for (std::size_t i = 0; i < n.parents.size(); ++i) {
                    Node& p = *n.parents[i];
                    if (p.requires_grad) p.grad_ref() += n.grad.middleRows(offsets[i], p.val().rows());
                }
            };
        }
    }
    return Var(std::move(node));
}

Var slice_rows(const Var& x, Index start, Index count) {
    require(start >= 0 && count >= 0 && start + count <= x.rows(), "slice_rows: out of range");
    Matrix out = x.value().middleRows(start, count);
    return make_result(std::move(out), {x}, [start, count](Node& n) {
        parent(n, 0).grad_ref().middleRows(start, count) += n.grad;
    });
}

Var transpose(const Var& x) {
    Matrix out = x.value().transpose();
    return make_result(std::move(out), {x}, [](Node& n) { parent(n, 0).grad_ref() += n.grad.transpose(); });
}

Var mean_rows(const Var& x) {
    const double inv = 1.0 / static_cast<double>(x.rows());
    Matrix out = x.value().colwise().sum() * inv;
    return make_result(std::move(out), {x}, [inv](Node& n) {
        parent(n, 0).grad_ref().rowwise() += n.grad.row(0) * inv;
    });
}

Var sum(const Var& x) {
    Matrix out(1, 1);
    out(0, 0) = x.value().sum();
    return make_result(std::move(out), {x}, [](Node& n) { parent(n, 0).grad_ref().array() += n.grad(0, 0); });
}

Var l2_normalize_rows(const Var& x, double eps) {
    const Matrix& xv = x.value();
    Eigen::VectorXd norms = xv.rowwise().norm().array().max(eps);
    Matrix out = xv.array().colwise() / norms.array();
    Matrix y = out;
    return make_result(std::move(out), {x}, [y = std::move(y), norms = std::move(norms)](Node& n) {
        Matrix& g = parent(n, 0).grad_ref();
        for (Index r = 0; r < y.rows(); ++r) {
            const double d = n.grad.row(r).dot(y.row(r));
            g.row(r) += (n.grad.row(r) - d * y.row(r)) / norms(r);
        }
    });
}

Var attention(const Var& q, const Var& k, const Var& v, int heads, bool causal) {
    const Index nq = q.rows();
    const Index nk = k.rows();
    const Index width = q.cols();
    require(heads > 0 && width % heads == 0, "attention: width not divisible by heads");
    require(k.cols() == width && v.cols() == width && v.rows() == nk, "attention: shape mismatch");
    require(!causal || nq == nk, "attention: causal requires square scores");
    const Index hd = width / heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));

    const Matrix& qv = q.value();
    const Matrix& kv = k.value();
    const Matrix& vv = v.value();
    Matrix out(nq, width);
    std::vector<Matrix> probs(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Matrix s = (qv.middleCols(h * hd, hd) * kv.middleCols(h * hd, hd).transpose()) * inv_scale;
        for (Index i = 0; i < nq; ++i) {
            const Index limit = causal ? i + 1 : nk;
            double mx = s.row(i).head(limit).maxCoeff();
            double total = 0.0;
            for (Index j = 0; j < limit; ++j) {
                s(i, j) = std::exp(s(i, j) - mx);
                total += s(i, j);
            }
            for (Index j = 0; j < limit; ++j) s(i, j) /= total;
            for (Index j = limit; j < nk; ++j) s(i, j) = 0.0;
        }
        out.middleCols(h * hd, hd).noalias() = s * vv.middleCols(h * hd, hd);
        probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    return make_result(std::move(out), {q, k, v},
                       [probs = std::move(probs), heads, hd, inv_scale](Node& n) {
                           Node& pq = parent(n, 0);
                           Node& pk = parent(n, 1);
                           Node& pv = parent(n, 2);
                           for (int h = 0; h < heads; ++h) {
                               const Matrix& p = probs[static_cast<std::size_t>(h)];
                               auto go = n.grad.middleCols(h * hd, hd);
                               if (pv.requires_grad) pv.grad_ref().middleCols(h * hd, hd).noalias() += p.transpose() * go;
                               if (!pq.requires_grad && !pk.requires_grad) continue;
                               Matrix dp = go * pv.val().middleCols(h * hd, hd).transpose();
                               Eigen::VectorXd rowdot = dp.cwiseProduct(p).rowwise().sum();
                               Matrix ds = p.cwiseProduct(dp.colwise() - rowdot) * inv_scale;
                               if (pq.requires_grad)
                                   pq.grad_ref().middleCols(h * hd, hd).noalias() += ds * pk.val().middleCols(h * hd, hd);
                               if (pk.requires_grad)
                                   pk.grad_ref().middleCols(h * hd, hd).noalias() +=
                                       ds.transpose() * pq.val().middleCols(h * hd, hd);
                           }
                       });
}

Var cross_entropy(const Var& logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
    const Index rows = logits.rows();
    require(static_cast<Index>(targets.size()) == rows && static_cast<Index>(mask.size()) == rows,
            "cross_entropy: target/mask length mismatch");
    const Matrix& lv = logits.value();
    Matrix probs = Matrix::Zero(rows, lv.cols());
    double total = 0.0;
    Index count = 0;
    for (Index r = 0; r < rows; ++r) {
        if (mask[static_cast<std::size_t>(r)] == 0) continue;
        const int t = targets[static_cast<std::size_t>(r)];
        require(t >= 0 && t < lv.cols(), "cross_entropy: target out of range");
        const double mx = lv.row(r).maxCoeff();
        RowVector e = (lv.row(r).array() - mx).exp().matrix();
        const double z = e.sum();
        probs.row(r) = e / z;
        total += -(lv(r, t) - mx - std::log(z));
        ++count;
    }
    require(count > 0, "cross_entropy: mask selects no rows");
    Matrix out(1, 1);
    out(0, 0) = total / static_cast<double>(count);
    std::vector<int> tg(targets.begin(), targets.end());
    std::vector<std::uint8_t> mk(mask.begin(), mask.end());
    return make_result(std::move(out), {logits},
                       [probs = std::move(probs), tg = std::move(tg), mk = std::move(mk), count](Node& n) {
                           Matrix& g = parent(n, 0).grad_ref();
                           const double s = n.grad(0, 0) / static_cast<double>(count);
                           for (Index r = 0; r < probs.rows(); ++r) {
                               if (mk[static_cast<std::size_t>(r)] == 0) continue;
                               g.row(r) += probs.row(r) * s;
                               g(r, tg[static_cast<std::size_t>(r)]) -= s;
                           }
                       });
}

}  // namespace ecgchat::ag
