#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <vector>

#include "ridgeplan/common.hpp"

namespace ridgeplan {

// Complete binary tree over `capacity` leaves keeping sums (for sampling)
// plus min/max of the leaf values over occupied leaves. Parents are
// recomputed from their children on every update, so sums never drift.
class SumTree {
public:
    explicit SumTree(std::size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw ParameterError("SumTree: capacity must be positive");
        leaves_ = 1;
        while (leaves_ < capacity) leaves_ <<= 1;
        sum_.assign(2 * leaves_, 0.0);
        min_.assign(2 * leaves_, std::numeric_limits<double>::infinity());
        max_.assign(2 * leaves_, 0.0);
    }

    std::size_t capacity() const { return capacity_; }
    double total() const { return sum_[1]; }
    double leaf(std::size_t i) const { return sum_[leaves_ + i]; }
    double min_leaf() const { return min_[1]; }
    double max_leaf() const { return max_[1]; }

    void set(std::size_t i, double value) {
        if (i >= capacity_) throw BoundsError("SumTree: leaf index out of range");
        std::size_t n = leaves_ + i;
        sum_[n] = value;
        min_[n] = value;
        max_[n] = value;
        for (n >>= 1; n >= 1; n >>= 1) {
            sum_[n] = sum_[2 * n] + sum_[2 * n + 1];
            min_[n] = std::min(min_[2 * n], min_[2 * n + 1]);
            max_[n] = std::max(max_[2 * n], max_[2 * n + 1]);
        }
    }

    // Leaf whose cumulative range contains `mass`, in [0, total()).
    std::size_t find(double mass) const {
        std::size_t n = 1;
        while (n < leaves_) {
            const std::size_t left = 2 * n;
            if (mass < sum_[left] || sum_[left + 1] <= 0.0) {
                n = left;
            } else {
                mass -= sum_[left];
                n = left + 1;
            }
        }
        return n - leaves_;
    }

    // Checks every internal node against its children; returns the worst
    // relative mismatch.
    double consistency_error() const {
        double worst = 0.0;
        for (std::size_t n = 1; n < leaves_; ++n) {
            const double kids = sum_[2 * n] + sum_[2 * n + 1];
            const double scale = std::max(std::abs(kids), 1e-300);
            worst = std::max(worst, std::abs(sum_[n] - kids) / scale);
        }
        return worst;
    }

private:
    std::size_t capacity_;
    std::size_t leaves_;
    std::vector<double> sum_;
    std::vector<double> min_;
    std::vector<double> max_;
};

struct ReplayParams {
    std::size_t capacity = 50000;
    double alpha = 0.6;
    double priority_eps = 1e-3;
};

// Handle to a stored transition. `serial` detects slots that were
// overwritten since the handle was issued.
struct ReplayIndex {
    std::size_t slot = 0;
    std::uint64_t serial = 0;
};

template <typename T>
struct SampledBatch {
    std::vector<const T*> items;
    std::vector<ReplayIndex> indices;  // one per PER-drawn item
    std::vector<double> weights;       // importance weights, one per item
    std::size_t n_prioritized = 0;     // items[0, n_prioritized) came from PER
};

// Proportional prioritized replay. Tree leaves hold p^alpha.
template <typename T>
class PrioritizedReplay {
public:
    explicit PrioritizedReplay(ReplayParams params = {})
        : params_(params), tree_(params.capacity), raw_(params.capacity), items_(params.capacity),
          serials_(params.capacity, 0) {}

    std::size_t size() const { return size_; }
    std::size_t capacity() const { return params_.capacity; }
    std::uint64_t stale_updates() const { return stale_updates_; }
    const SumTree& tree() const { return tree_; }
    const ReplayParams& params() const { return params_; }

    double priority(std::size_t slot) const { return raw_.at(slot); }
    double max_priority() const { return size_ == 0 ? 1.0 : raw_tree_max(); }

    ReplayIndex push(T item) {
        const double p = max_priority();
        const std::size_t slot = cursor_;
        items_[slot] = std::move(item);
        serials_[slot] = ++next_serial_;
        set_priority(slot, p);
        cursor_ = (cursor_ + 1) % params_.capacity;
        size_ = std::min(size_ + 1, params_.capacity);
        return {slot, serials_[slot]};
    }

    const T& at(std::size_t slot) const { return *items_.at(slot); }
    bool valid(const ReplayIndex& idx) const {
        return idx.slot < params_.capacity && serials_[idx.slot] == idx.serial && items_[idx.slot];
    }

    // Oldest-first slot order.
    std::vector<std::size_t> slots_in_order() const {
        std::vector<std::size_t> out;
        const std::size_t start = size_ < params_.capacity ? 0 : cursor_;
        for (std::size_t k = 0; k < size_; ++k) out.push_back((start + k) % params_.capacity);
        return out;
    }

    double probability(std::size_t slot) const { return tree_.leaf(slot) / tree_.total(); }

    // Stratified draw: `batch` equal-mass segments, one sample each.
    SampledBatch<T> sample(std::size_t batch, double beta, Rng& rng) const {
        if (batch == 0) return {};
        if (size_ < batch)
            throw StateError("replay: sample of " + std::to_string(batch) + " from buffer of size " +
                             std::to_string(size_));
        SampledBatch<T> out;
        const double total = tree_.total();
        const double segment = total / static_cast<double>(batch);
        const double min_prob = tree_.min_leaf() / total;
        const double max_weight = std::pow(static_cast<double>(size_) * min_prob, -beta);
        for (std::size_t i = 0; i < batch; ++i) {
            const double mass = std::min(segment * (static_cast<double>(i) + uniform01(rng)),
                                         std::nextafter(total, 0.0));
            std::size_t slot = tree_.find(mass);
            if (slot >= size_ || !items_[slot]) slot = last_occupied_before(slot);
            const double prob = probability(slot);
            out.items.push_back(&*items_[slot]);
            out.indices.push_back({slot, serials_[slot]});
            out.weights.push_back(std::pow(static_cast<double>(size_) * prob, -beta) / max_weight);
        }
        out.n_prioritized = batch;
        return out;
    }

    // p = |td| + eps. Handles to overwritten slots are skipped and counted.
    void update_priorities(const std::vector<ReplayIndex>& indices, const std::vector<double>& td_errors) {
        if (indices.size() != td_errors.size())
            throw ParameterError("update_priorities: index/error length mismatch");
        for (std::size_t k = 0; k < indices.size(); ++k) {
            if (!valid(indices[k])) {
                ++stale_updates_;
                continue;
            }
            set_priority(indices[k].slot, std::abs(td_errors[k]) + params_.priority_eps);
        }
    }

private:
    // p -> p^alpha is monotone, so the largest leaf maps back to the largest p.
    double raw_tree_max() const { return std::pow(tree_.max_leaf(), 1.0 / params_.alpha); }

    void set_priority(std::size_t slot, double p) {
        raw_[slot] = p;
        tree_.set(slot, std::pow(p, params_.alpha));
    }

    std::size_t last_occupied_before(std::size_t slot) const {
        std::size_t s = std::min(slot, size_ - 1);
        while (s > 0 && (!items_[s] || tree_.leaf(s) <= 0.0)) --s;
        return s;
    }

    ReplayParams params_;
    SumTree tree_;
    std::vector<double> raw_;
    std::vector<std::optional<T>> items_;
    std::vector<std::uint64_t> serials_;
    std::size_t cursor_ = 0;
    std::size_t size_ = 0;
    std::uint64_t next_serial_ = 0;
    std::uint64_t stale_updates_ = 0;
};

// Bounded FIFO of transitions from goal-reaching episodes, sampled uniformly.
template <typename T>
class SuccessBuffer {
public:
    explicit SuccessBuffer(std::size_t capacity = 5000) : capacity_(capacity) {}

    std::size_t size() const { return items_.size(); }
    std::size_t capacity() const { return capacity_; }
    const T& at(std::size_t i) const { return items_.at(i); }

    void push_episode(const std::vector<T>& episode) {
        for (const T& t : episode) {
            items_.push_back(t);
            if (items_.size() > capacity_) items_.pop_front();
        }
    }

    std::vector<const T*> sample(std::size_t n, Rng& rng) const {
        std::vector<const T*> out;
        if (items_.empty()) return out;
        for (std::size_t i = 0; i < n; ++i) out.push_back(&items_[uniform_index(rng, items_.size())]);
        return out;
    }

private:
    std::size_t capacity_;
    std::deque<T> items_;
};

// batch - k prioritized draws plus k = min(n_success, success.size())
// uniform success draws (importance weight 1).
template <typename T>
SampledBatch<T> sample_mixed(const PrioritizedReplay<T>& replay, const SuccessBuffer<T>& success,
                             std::size_t batch, std::size_t n_success, double beta, Rng& rng) {
    const std::size_t k = std::min(n_success, success.size());
    if (replay.size() < batch)
        throw StateError("replay: buffer of size " + std::to_string(replay.size()) +
                         " cannot supply a batch of " + std::to_string(batch));
    SampledBatch<T> out = replay.sample(batch - k, beta, rng);
    for (const T* t : success.sample(k, rng)) {
        out.items.push_back(t);
        out.weights.push_back(1.0);
    }
    return out;
}

}  // namespace ridgeplan
