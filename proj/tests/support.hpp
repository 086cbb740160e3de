#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "ridgeplan/trainer.hpp"

namespace rp_test {

using namespace ridgeplan;

inline std::shared_ptr<const TerrainMap> shared(TerrainMap m) {
    return std::make_shared<const TerrainMap>(std::move(m));
}

inline Cell random_cell(const TerrainMap& m, Rng& rng) {
    return {uniform_int(rng, 0, m.width() - 1), uniform_int(rng, 0, m.height() - 1)};
}

// Fills every parameter with U(-scale, scale) so biases are not all zero.
template <typename S>
void randomize(nn::QNetwork<S>& net, std::uint64_t seed, double scale = 0.3) {
    Rng rng(seed);
    for (auto* p : net.params())
        for (auto& v : p->value) v = static_cast<S>(uniform(rng, -scale, scale));
    net.touch_params();
}

// Random batch for an architecture; global samples are zero outside `boxes`.
template <typename S>
nn::InputBatch<S> random_batch(const nn::ArchSpec& arch, const std::vector<nn::Box>& boxes, Rng& rng) {
    nn::InputBatch<S> in;
    const int n = static_cast<int>(boxes.size());
    in.n = n;
    if (!arch.global.empty()) {
        const nn::Shape g = arch.global_input();
        in.global.resize(n, g);
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < g.c; ++c)
                for (int r = boxes[i].r0; r < boxes[i].r1; ++r)
                    for (int col = boxes[i].c0; col < boxes[i].c1; ++col)
                        in.global.sample(i)[(static_cast<std::size_t>(c) * g.h + r) * g.w + col] =
                            static_cast<S>(uniform(rng, 0.0, 1.0));
    }
    if (!arch.local.empty()) {
        in.local.resize(n, arch.local_input());
        for (auto& v : in.local.data) v = static_cast<S>(uniform(rng, -1.0, 1.0));
    }
    if (arch.scalar_features) {
        in.scalars.resize(n, nn::Shape{arch.scalar_features, 1, 1});
        for (auto& v : in.scalars.data) v = static_cast<S>(uniform(rng, -1.0, 1.0));
    }
    return in;
}

template <typename S>
nn::InputBatch<S> as_boxed(nn::InputBatch<S> in, const std::vector<nn::Box>& boxes) {
    in.global_boxed = nn::from_dense(in.global, boxes);
    in.boxed = true;
    return in;
}

struct GradCheck {
    double max_rel = 0.0;
    int checked = 0;
    int resampled = 0;  // entries whose +-h probe crossed a ReLU or pool kink
};

// Central differences on L = sum(w * Q) against backward(), on `per_tensor`
// sampled entries of each parameter tensor. Between kinks the network is
// linear in any single parameter, so a probe with unequal left and right
// slopes straddles a kink; such an entry is redrawn (capped) instead of
// being compared.
inline GradCheck grad_check(nn::QNetwork<double>& net, const nn::InputBatch<double>& in, std::uint64_t seed,
                            double h = 1e-3, int per_tensor = 12) {
    Rng rng(seed);
    const std::size_t nq = static_cast<std::size_t>(in.n) * kNumActions;
    std::vector<double> w(nq);
    for (auto& v : w) v = uniform(rng, -1.0, 1.0);
    auto loss = [&] {
        const auto& q = net.forward(in);
        double l = 0;
        for (std::size_t i = 0; i < nq; ++i) l += w[i] * q[i];
        return l;
    };
    const double l0 = loss();
    net.zero_grad();
    net.backward(w);
    GradCheck out;
    for (auto* p : net.params()) {
        const std::size_t len = p->value.size();
        const int count = static_cast<int>(std::min<std::size_t>(len, per_tensor));
        int redraws = 0;
        for (int k = 0; k < count; ++k) {
            const std::size_t i = len <= static_cast<std::size_t>(per_tensor) && redraws == 0 ? k : uniform_index(rng, len);
            const double analytic = p->grad[i];
            const double saved = p->value[i];
            // Shrink the step a few times before giving up on an entry: a
            // probe only straddles a kink when the kink is within h.
            bool smooth = false;
            double numeric = 0;
            for (double step = h; step >= h * 1e-3 && !smooth; step /= 10) {
                p->value[i] = saved + step;
                p->touch();
                const double lp = loss();
                p->value[i] = saved - step;
                p->touch();
                const double lm = loss();
                p->value[i] = saved;
                p->touch();
                const double right = lp - l0, left = l0 - lm;
                smooth = std::abs(right - left) <= 1e-9 * step / h + 1e-6 * std::max(std::abs(right), std::abs(left));
                numeric = (lp - lm) / (2 * step);
            }
            if (!smooth) {
                ++out.resampled;
                if (++redraws < 4 * count) --k;
                continue;
            }
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
            out.max_rel = std::max(out.max_rel, std::abs(analytic - numeric) / denom);
            ++out.checked;
        }
    }
    return out;
}

// The reduced LOPA used by the gradient checks: 10x10x3 / 6x6x1 inputs.
inline nn::ArchSpec reduced_lopa() { return nn::lopa_arch({3, 10, 10}, {1, 6, 6}); }

}  // namespace rp_test
