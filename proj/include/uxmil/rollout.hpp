#pragma once

#include <string>
#include <vector>

#include "uxmil/tensor.hpp"

namespace uxmil {

// Attention rollout output for one aggregating Transformer stack. The CLS
// scores cover the n-1 non-CLS instances, renormalized to sum 1.
struct RolloutResult {
    Tensor<double> matrix;           // [n, n], row-stochastic
    std::vector<double> cls_scores;  // length n-1, instance order
};

// Residual-corrected rollout: per layer A~ = 0.5 (A + I) with rows
// renormalized, result = A~_L * ... * A~_1. Layers must be square and
// row-stochastic within 1e-6.
Tensor<double> attention_rollout(const std::vector<Tensor<double>>& attn_per_layer);

// Rollout plus extraction of the CLS row (CLS at index 0), renormalized.
RolloutResult rollout_cls_scores(const std::vector<Tensor<double>>& attn_per_layer);

// Per-episode instance attention for export: 16 clip scores (vision) and/or
// 16 patch scores (audio); absent modality -> empty vector.
struct InstanceAttention {
    std::string episode_id;
    std::vector<double> clip_scores;
    std::vector<double> patch_scores;
};

// Writes `attention.csv` (episode_id, modality, instance_index, score) and a
// bar-chart SVG per present modality named {episode_id}_{modality}.svg.
void export_attention(const InstanceAttention& result, const std::string& dir);

}  // namespace uxmil
