#pragma once

#include <random>
#include <stdexcept>
#include <vector>

#include "cacc/tensor.hpp"

namespace cacc {

// Walker/Vose alias table for O(1) draws from a fixed categorical
// distribution. Construction normalizes the weights; draw order per sample
// is bucket index first, then the acceptance uniform.
class AliasTable {
public:
    explicit AliasTable(const std::vector<double>& weights) {
        const size_t n = weights.size();
        if (n == 0) throw std::invalid_argument("alias table needs at least one weight");
        double total = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0)) throw std::invalid_argument("alias table weights must be nonnegative");
            total += w;
        }
        if (!(total > 0.0)) throw std::invalid_argument("alias table weights sum to zero");
        probs_.resize(n);
        for (size_t i = 0; i < n; ++i) probs_[i] = weights[i] / total;

        accept_.assign(n, 1.0);
        alias_.assign(n, 0);
        std::vector<double> scaled(n);
        std::vector<int> small, large;
        for (size_t i = 0; i < n; ++i) {
            scaled[i] = probs_[i] * static_cast<double>(n);
            (scaled[i] < 1.0 ? small : large).push_back(static_cast<int>(i));
        }
        while (!small.empty() && !large.empty()) {
            const int s = small.back();
            const int l = large.back();
            small.pop_back();
            large.pop_back();
            accept_[static_cast<size_t>(s)] = scaled[static_cast<size_t>(s)];
            alias_[static_cast<size_t>(s)] = l;
            scaled[static_cast<size_t>(l)] = (scaled[static_cast<size_t>(l)] + scaled[static_cast<size_t>(s)]) - 1.0;
            (scaled[static_cast<size_t>(l)] < 1.0 ? small : large).push_back(l);
        }
        // numerical leftovers are full buckets
        for (int i : large) accept_[static_cast<size_t>(i)] = 1.0;
        for (int i : small) accept_[static_cast<size_t>(i)] = 1.0;
    }

    int sample(std::mt19937& rng) const {
        std::uniform_int_distribution<int> bucket(0, static_cast<int>(probs_.size()) - 1);
        const int i = bucket(rng);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        return u(rng) < accept_[static_cast<size_t>(i)] ? i : alias_[static_cast<size_t>(i)];
    }

    const std::vector<double>& probs() const { return probs_; }

private:
    std::vector<double> probs_;   // normalized distribution
    std::vector<double> accept_;  // per-bucket acceptance threshold
    std::vector<int> alias_;      // fallback index per bucket
};

}  // namespace cacc
