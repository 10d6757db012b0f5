#pragma once

// Sequence-level classification metrics.

#include <span>
#include <vector>

#include "pcrf/errors.hpp"
#include "pcrf/geometry.hpp"

namespace pcrf {

struct ClassificationMetrics {
    std::size_t total = 0;
    std::size_t correct = 0;
    double accuracy = 0.0;
    std::vector<std::vector<std::size_t>> confusion;  // [truth][predicted]
    std::vector<double> f1;                           // per label, one-vs-rest
    std::vector<bool> f1_defined;                     // label occurs in truth or predictions
    double macro_f1 = 0.0;                            // unweighted mean over defined labels
};

inline ClassificationMetrics classification_metrics(std::span<const Label> truth, std::span<const Label> predicted, int n_labels) {
    if (truth.size() != predicted.size()) throw UsageError("truth and predictions differ in length");
    ClassificationMetrics m;
    const std::size_t L = static_cast<std::size_t>(n_labels);
    m.confusion.assign(L, std::vector<std::size_t>(L, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= n_labels || predicted[i] < 0 || predicted[i] >= n_labels)
            throw UsageError("label out of range in metrics");
        ++m.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
        m.correct += truth[i] == predicted[i];
    }
    m.total = truth.size();
    m.accuracy = m.total ? static_cast<double>(m.correct) / static_cast<double>(m.total) : 0.0;
    m.f1.assign(L, 0.0);
    m.f1_defined.assign(L, false);
    double sum = 0.0;
    std::size_t defined = 0;
    for (std::size_t l = 0; l < L; ++l) {
        std::size_t tp = m.confusion[l][l], fn = 0, fp = 0;
        for (std::size_t j = 0; j < L; ++j)
            if (j != l) {
                fn += m.confusion[l][j];
                fp += m.confusion[j][l];
            }
        if (tp + fn + fp == 0) continue;
        m.f1_defined[l] = true;
        m.f1[l] = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fn + fp);
        sum += m.f1[l];
        ++defined;
    }
    m.macro_f1 = defined ? sum / static_cast<double>(defined) : 0.0;
    return m;
}

}  // namespace pcrf
