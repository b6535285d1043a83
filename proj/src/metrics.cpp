#include "uxmil/metrics.hpp"

#include <algorithm>
#include <set>

#include "uxmil/rng.hpp"

namespace uxmil {

FoldPlan subject_kfold(std::vector<std::string> subject_ids, std::size_t k, uint64_t seed) {
    std::sort(subject_ids.begin(), subject_ids.end());
    subject_ids.erase(std::unique(subject_ids.begin(), subject_ids.end()), subject_ids.end());
    if (k == 0) throw ConfigError("subject_kfold: k must be positive");
    if (subject_ids.size() < k)
        throw ConfigError("subject_kfold: " + std::to_string(subject_ids.size()) +
                          " subjects is fewer than k=" + std::to_string(k));
    Rng rng = Rng(seed).derive("kfold");
    rng.shuffle(subject_ids);
    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;
    plan.test_subjects.assign(k, {});
    for (std::size_t i = 0; i < subject_ids.size(); ++i)
        plan.test_subjects[i % k].push_back(subject_ids[i]);
    return plan;
}

int quantize3(int score) {
    if (score < 1 || score > 7)
        throw ValidationError("quantize3: score " + std::to_string(score) +
                              " out of range 1..7");
    if (score <= 2) return 0;
    if (score <= 5) return 1;
    return 2;
}

namespace {

double match_rate(const std::vector<int>& preds, const std::vector<int>& labels, bool coarse) {
    if (preds.empty()) throw ValidationError("accuracy: empty prediction list");
    if (preds.size() != labels.size())
        throw ValidationError("accuracy: " + std::to_string(preds.size()) + " predictions vs " +
                              std::to_string(labels.size()) + " labels");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const int p = coarse ? quantize3(preds[i]) : preds[i];
        const int l = coarse ? quantize3(labels[i]) : labels[i];
        hits += (p == l);
    }
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

}  // namespace

double acc7(const std::vector<int>& preds, const std::vector<int>& labels) {
    return match_rate(preds, labels, false);
}

double acc3(const std::vector<int>& preds, const std::vector<int>& labels) {
    return match_rate(preds, labels, true);
}

}  // namespace uxmil
