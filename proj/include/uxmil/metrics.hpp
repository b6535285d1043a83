#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uxmil/common.hpp"

namespace uxmil {

// Subject-independent fold assignment: test subject sets are pairwise
// disjoint, exhaustive, and near-equal in size.
struct FoldPlan {
    std::size_t k = 4;
    uint64_t seed = 0;
    std::vector<std::vector<std::string>> test_subjects;  // one list per fold
};

FoldPlan subject_kfold(std::vector<std::string> subject_ids, std::size_t k, uint64_t seed);

// 7-point score -> coarse scale: {1,2}->0 (negative), {3,4,5}->1 (neutral),
// {6,7}->2 (positive).
int quantize3(int score);

double acc7(const std::vector<int>& preds, const std::vector<int>& labels);
double acc3(const std::vector<int>& preds, const std::vector<int>& labels);

}  // namespace uxmil
