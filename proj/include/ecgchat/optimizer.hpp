// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ecgchat/autograd.hpp"
#include "ecgchat/checkpoint.hpp"

#include <map>
#include <string>
#include <vector>

namespace ecgchat::train {

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double clip_norm = 1.0;  // global gradient norm; 0 disables
};

/// Linear warmup over the first warmup_fraction of steps, then cosine decay to
/// min_ratio * peak.
struct WarmupCosine {
    double peak = 1e-4;
    long total_steps = 1;
    double warmup_fraction = 0.03;
    double min_ratio = 0.0;

    double at(long step) const;
};

/// Decoupled weight decay Adam over an explicit parameter list. Weight decay
/// skips row-vector parameters (biases, norms, single embeddings).
class AdamW {
public:
    AdamW(std::vector<ag::ParamPtr> params, AdamWConfig cfg);

    /// Applies one update at the given learning rate and returns the
    /// pre-clipping gradient norm.
    double step(double lr);
    long steps() const { return t_; }
    const std::vector<ag::ParamPtr>& params() const { return params_; }

    /// Learning rate last applied, per parameter group.
    std::map<std::string, double> group_lr() const;

    void save_state(checkpoint::Archive& out) const;
    /// Throws CheckpointError on missing or mis-shaped moments.
    void load_state(const checkpoint::Archive& in);

private:
    std::vector<ag::ParamPtr> params_;
    AdamWConfig cfg_;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    long t_ = 0;
    double last_lr_ = 0.0;
};

}  // namespace ecgchat::train
