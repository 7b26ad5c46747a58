// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "ecgchat/optimizer.hpp"

#include <cmath>
#include <numbers>

namespace ecgchat::train {

double WarmupCosine::at(long step) const {
    const long total = std::max<long>(1, total_steps);
    const long warm = static_cast<long>(std::ceil(warmup_fraction * static_cast<double>(total)));
    if (step < warm) return peak * static_cast<double>(step + 1) / static_cast<double>(warm);
    const double span = static_cast<double>(std::max<long>(1, total - warm));
    const double p = std::min(1.0, static_cast<double>(step - warm) / span);
    const double floor = min_ratio * peak;
    return floor + (peak - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * p));
}

AdamW::AdamW(std::vector<ag::ParamPtr> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
        m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
}

double AdamW::step(double lr) {
    double sq = 0.0;
    for (const auto& p : params_) sq += p->grad.squaredNorm();
    const double norm = std::sqrt(sq);
    const double clip = cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;

    ++t_;
    last_lr_ = lr;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i];
        const Matrix g = p.grad * clip;
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        if (cfg_.weight_decay > 0.0 && p.value.rows() > 1) p.value *= 1.0 - lr * cfg_.weight_decay;
        p.value.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
    }
    return norm;
}

std::map<std::string, double> AdamW::group_lr() const {
    std::map<std::string, double> out;
    for (const auto& p : params_) out[p->group] = last_lr_;
    return out;
}

void AdamW::save_state(checkpoint::Archive& out) const {
    out.config["optimizer"] = {{"kind", "adamw"},
                               {"t", t_},
                               {"last_lr", last_lr_},
                               {"beta1", cfg_.beta1},
                               {"beta2", cfg_.beta2},
                               {"eps", cfg_.eps},
                               {"weight_decay", cfg_.weight_decay}};
    for (std::size_t i = 0; i < params_.size(); ++i) {
        out.tensors.emplace_back("adam.m/" + params_[i]->name, m_[i]);
        out.tensors.emplace_back("adam.v/" + params_[i]->name, v_[i]);
    }
}

void AdamW::load_state(const checkpoint::Archive& in) {
    const auto& o = in.config.at("optimizer");
    t_ = o.at("t").get<long>();
    last_lr_ = o.value("last_lr", 0.0);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const Matrix* m = in.find("adam.m/" + params_[i]->name);
        const Matrix* v = in.find("adam.v/" + params_[i]->name);
        if (!m || !v) throw checkpoint::CheckpointError("optimizer state is missing " + params_[i]->name);
        if (m->rows() != m_[i].rows() || m->cols() != m_[i].cols())
            throw checkpoint::CheckpointError("optimizer state shape mismatch for " + params_[i]->name);
        m_[i] = *m;
        v_[i] = *v;
    }
}

}  // namespace ecgchat::train
