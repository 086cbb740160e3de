#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ridgeplan/common.hpp"
#include "ridgeplan/env.hpp"
#include "ridgeplan/nn/boxed.hpp"
#include "ridgeplan/nn/layers.hpp"

namespace ridgeplan::nn {

// Full layer description of a dueling Q-network: optional global and local
// convolutional channels, optional scalar features, concatenation, then an
// advantage branch and a value branch joined by the dueling head.
struct ArchSpec {
    std::string name;
    std::vector<LayerSpec> global;
    std::vector<LayerSpec> local;
    int scalar_features = 0;
    LayerSpec concat;
    std::vector<LayerSpec> advantage;
    std::vector<LayerSpec> value;
    LayerSpec dueling;

    Shape global_input() const { return global.empty() ? Shape{0, 0, 0} : global.front().in; }
    Shape local_input() const { return local.empty() ? Shape{0, 0, 0} : local.front().in; }
    int feature_count() const { return concat.out.c; }

    friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

namespace detail {

struct ChannelBuilder {
    std::vector<LayerSpec> layers;
    Shape cur;

    explicit ChannelBuilder(Shape in) : cur(in) {}

    ChannelBuilder& conv(int out_c, int k) {
        const Shape out{out_c, cur.h - k + 1, cur.w - k + 1};
        if (out.h < 1 || out.w < 1) throw ArchitectureError("conv kernel larger than input");
        layers.push_back({LayerKind::conv, cur, out, k, 1});
        cur = out;
        return *this;
    }
    ChannelBuilder& relu() {
        layers.push_back({LayerKind::relu, cur, cur, 0, 0});
        return *this;
    }
    ChannelBuilder& pool(int size, int stride) {
        if (cur.h < size || cur.w < size) throw ArchitectureError("pool window larger than input");
        const Shape out{cur.c, (cur.h - size) / stride + 1, (cur.w - size) / stride + 1};
        layers.push_back({LayerKind::maxpool, cur, out, size, stride});
        cur = out;
        return *this;
    }
    ChannelBuilder& flatten() {
        const Shape out{static_cast<int>(cur.size()), 1, 1};
        layers.push_back({LayerKind::flatten, cur, out, 0, 0});
        cur = out;
        return *this;
    }
    ChannelBuilder& dense(int out) {
        const Shape o{out, 1, 1};
        layers.push_back({LayerKind::dense, cur, o, 0, 0});
        cur = o;
        return *this;
    }
};

inline std::vector<LayerSpec> global_channel(Shape in) {
    return ChannelBuilder(in).conv(8, 3).relu().pool(2, 3).conv(16, 3).relu().flatten().layers;
}

inline std::vector<LayerSpec> local_channel(Shape in) {
    return ChannelBuilder(in).conv(4, 3).relu().conv(10, 3).relu().flatten().layers;
}

inline void add_head(ArchSpec& a, int hidden) {
    int f = a.scalar_features;
    if (!a.global.empty()) f += a.global.back().out.c;
    if (!a.local.empty()) f += a.local.back().out.c;
    a.concat = {LayerKind::concat, {f, 1, 1}, {f, 1, 1}, 0, 0};
    const Shape fs{f, 1, 1};
    a.advantage = ChannelBuilder(fs).dense(hidden).relu().dense(kNumActions).layers;
    a.value = ChannelBuilder(fs).dense(hidden).relu().dense(1).layers;
    a.dueling = {LayerKind::dueling_head, {kNumActions + 1, 1, 1}, {kNumActions, 1, 1}, 0, 0};
}

}  // namespace detail

inline constexpr int kHidden = 128;

// Dual-channel network. Full-size inputs give the trace
// 100 -> 98 -> 33 -> 31 (x16 = 15376) and 20 -> 18 -> 16 (x10 = 2560).
inline ArchSpec lopa_arch(Shape global_in = {3, 100, 100}, Shape local_in = {1, 20, 20},
                          int hidden = kHidden) {
    ArchSpec a;
    a.name = "lopa";
    a.global = detail::global_channel(global_in);
    a.local = detail::local_channel(local_in);
    detail::add_head(a, hidden);
    return a;
}

// Local view plus (distance, direction) scalars.
inline ArchSpec ldqn_arch(Shape local_in = {1, 20, 20}, int hidden = kHidden) {
    ArchSpec a;
    a.name = "ldqn";
    a.local = detail::local_channel(local_in);
    a.scalar_features = 3;
    detail::add_head(a, hidden);
    return a;
}

// Global channel only, fed the whole map without the attention window.
inline ArchSpec dueling_baseline_arch(Shape global_in = {3, 100, 100}, int hidden = kHidden) {
    ArchSpec a;
    a.name = "dueling-baseline";
    a.global = detail::global_channel(global_in);
    detail::add_head(a, hidden);
    return a;
}

inline ArchSpec arch_by_name(const std::string& name) {
    if (name == "lopa") return lopa_arch();
    if (name == "ldqn") return ldqn_arch();
    if (name == "dueling-baseline") return dueling_baseline_arch();
    throw ParameterError("unknown architecture '" + name + "'");
}

inline nlohmann::json arch_to_json(const ArchSpec& a) {
    auto list = [](const std::vector<LayerSpec>& ls) {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& l : ls) j.push_back(to_json_value(l));
        return j;
    };
    return {{"name", a.name},
            {"global", list(a.global)},
            {"local", list(a.local)},
            {"scalar_features", a.scalar_features},
            {"concat", to_json_value(a.concat)},
            {"advantage", list(a.advantage)},
            {"value", list(a.value)},
            {"dueling_head", to_json_value(a.dueling)}};
}

inline ArchSpec arch_from_json(const nlohmann::json& j) {
    try {
        auto list = [](const nlohmann::json& arr) {
            std::vector<LayerSpec> out;
            for (const auto& l : arr) out.push_back(layer_from_json(l));
            return out;
        };
        ArchSpec a;
        a.name = j.at("name").get<std::string>();
        a.global = list(j.at("global"));
        a.local = list(j.at("local"));
        a.scalar_features = j.at("scalar_features").get<int>();
        a.concat = layer_from_json(j.at("concat"));
        a.advantage = list(j.at("advantage"));
        a.value = list(j.at("value"));
        a.dueling = layer_from_json(j.at("dueling_head"));
        return a;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("architecture: ") + e.what());
    }
}

// Q[a] = V + A[a] - mean(A).
template <typename S>
std::array<S, kNumActions> dueling_combine(S value, std::span<const S, kNumActions> adv) {
    S mean = 0;
    for (S a : adv) mean += a;
    mean /= S(kNumActions);
    std::array<S, kNumActions> q{};
    for (int a = 0; a < kNumActions; ++a) q[a] = value + (adv[a] - mean);
    return q;
}

// Network inputs for a batch; unused parts stay empty. With `boxed` set the
// global input is read from `global_boxed` instead of `global`.
template <typename S>
struct InputBatch {
    int n = 0;
    Tensor<S> global;
    Tensor<S> local;
    Tensor<S> scalars;
    bool boxed = false;
    BoxedTensor<S> global_boxed;
};

template <typename S>
class QNetwork {
public:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    QNetwork() = default;

    explicit QNetwork(ArchSpec arch) : arch_(std::move(arch)) {
        validate();
        global_ = Sequential<S>(arch_.global);
        local_ = Sequential<S>(arch_.local);
        adv_ = Sequential<S>(arch_.advantage);
        val_ = Sequential<S>(arch_.value);
        for (auto* p : params()) {
            adam_m_.emplace_back(p->value.size(), S(0));
            adam_v_.emplace_back(p->value.size(), S(0));
        }
    }

    const ArchSpec& arch() const { return arch_; }
    std::int64_t adam_steps() const { return adam_t_; }

    // He-uniform weights, zero biases.
    void init(std::uint64_t seed) {
        Rng rng(seed);
        for (auto* p : params()) {
            if (p->shape.size() == 1) {
                std::fill(p->value.begin(), p->value.end(), S(0));
                continue;
            }
            const double limit = std::sqrt(6.0 / p->fan_in);
            for (auto& v : p->value) v = static_cast<S>(uniform(rng, -limit, limit));
        }
        touch_params();
    }

    // Call after writing parameter values directly.
    void touch_params() {
        for (auto* p : params()) p->touch();
    }

    std::vector<Param<S>*> params() {
        std::vector<Param<S>*> out;
        auto add = [&](Sequential<S>& seq, const char* prefix) {
            const auto idx = seq.param_layer_index();
            auto ps = seq.params();
            for (std::size_t k = 0; k < ps.size(); ++k) {
                const std::string base = ps[k]->name.substr(ps[k]->name.rfind('.') + 1);
                ps[k]->name = std::string(prefix) + "." + std::to_string(idx[k]) + "." + base;
                out.push_back(ps[k]);
            }
        };
        add(global_, "global");
        add(local_, "local");
        add(adv_, "advantage");
        add(val_, "value");
        return out;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for (auto* p : params()) n += p->value.size();
        return n;
    }

    // Returns n x 8 Q-values, row-major.
    const Buffer<S>& forward(const InputBatch<S>& in) {
        const int n = in.n;
        check_inputs(in);
        boxed_ = in.boxed && !global_.empty();
        if (boxed_) return forward_boxed(in);
        const Tensor<S>* g = global_.empty() ? nullptr : &global_.forward(in.global);
        const Tensor<S>* l = local_.empty() ? nullptr : &local_.forward(in.local);
        const int f = arch_.feature_count();
        feats_.resize(n, Shape{f, 1, 1});
        for (int s = 0; s < n; ++s) {
            S* dst = feats_.sample(s);
            if (g) dst = std::copy_n(g->sample(s), g->stride(), dst);
            if (l) dst = std::copy_n(l->sample(s), l->stride(), dst);
            if (arch_.scalar_features) std::copy_n(in.scalars.sample(s), arch_.scalar_features, dst);
        }
        const Tensor<S>& a = adv_.forward(feats_);
        const Tensor<S>& v = val_.forward(feats_);
        return combine(n, a, v);
    }

    // Accumulates gradients of sum(dq * Q) into every parameter.
    void backward(std::span<const S> dq) {
        if (batch_ < 0) throw StateError("backward called before forward");
        const int n = batch_;
        if (dq.size() != static_cast<std::size_t>(n) * kNumActions)
            throw ArchitectureError("backward: dLoss/dQ has wrong length");
        Tensor<S> da, dv;
        da.resize(n, Shape{kNumActions, 1, 1});
        dv.resize(n, Shape{1, 1, 1});
        for (int s = 0; s < n; ++s) {
            const S* row = dq.data() + static_cast<std::size_t>(s) * kNumActions;
            S total = 0;
            for (int a = 0; a < kNumActions; ++a) total += row[a];
            dv.data[s] = total;
            const S mean = total / S(kNumActions);
            for (int a = 0; a < kNumActions; ++a) da.sample(s)[a] = row[a] - mean;
        }
        if (boxed_) return backward_boxed(da, dv);
        Tensor<S> dfeat = adv_.backward(da, true);
        const Tensor<S>& dfv = val_.backward(dv, true);
        for (std::size_t i = 0; i < dfeat.data.size(); ++i) dfeat.data[i] += dfv.data[i];

        const int f = arch_.feature_count();
        std::size_t offset = 0;
        auto split = [&](Sequential<S>& seq) {
            if (seq.empty()) return;
            const Shape out = arch_shape_out(seq);
            Tensor<S> part;
            part.resize(n, out);
            for (int s = 0; s < n; ++s)
                std::copy_n(dfeat.data.data() + static_cast<std::size_t>(s) * f + offset, out.size(),
                            part.sample(s));
            offset += out.size();
            seq.backward(part, false);
        };
        split(global_);
        split(local_);
    }

    void zero_grad() {
        for (auto* p : params()) p->zero_grad();
    }

    double grad_norm() {
        double sq = 0;
        for (auto* p : params()) {
            Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> g(p->grad.data(),
                                                                   static_cast<Eigen::Index>(p->grad.size()));
            sq += static_cast<double>(g.square().sum());
        }
        return std::sqrt(sq);
    }

    // Scales gradients so their global L2 norm is at most max_norm.
    double clip_grad_norm(double max_norm) {
        const double norm = grad_norm();
        if (norm > max_norm && norm > 0) {
            const S scale = static_cast<S>(max_norm / norm);
            for (auto* p : params())
                Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>(p->grad.data(), static_cast<Eigen::Index>(p->grad.size())) *=
                    scale;
        }
        return norm;
    }

    void adam_step(double lr) {
        ++adam_t_;
        const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(adam_t_));
        const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(adam_t_));
        // w -= lr * (m / c1) / (sqrt(v / c2) + eps), rearranged to one scale.
        const S step = static_cast<S>(lr * std::sqrt(c2) / c1);
        const S eps = static_cast<S>(kEps * std::sqrt(c2));
        const S b1 = static_cast<S>(kBeta1), b2 = static_cast<S>(kBeta2);
        auto ps = params();
        for (std::size_t k = 0; k < ps.size(); ++k) {
            const auto len = static_cast<Eigen::Index>(ps[k]->value.size());
            Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> m(adam_m_[k].data(), len);
            Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> v(adam_v_[k].data(), len);
            Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> w(ps[k]->value.data(), len);
            Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> g(ps[k]->grad.data(), len);
            m = b1 * m + (S(1) - b1) * g;
            v = b2 * v + (S(1) - b2) * g.square();
            w -= step * m / (v.sqrt() + eps);
            ps[k]->touch();
        }
    }

    // Hard copy of parameters from another network of the same architecture.
    void copy_params_from(QNetwork& other) {
        if (!(other.arch_ == arch_)) throw CompatibilityError("copy_params_from: architecture mismatch");
        auto dst = params();
        auto src = other.params();
        for (std::size_t k = 0; k < dst.size(); ++k) {
            dst[k]->value = src[k]->value;
            dst[k]->touch();
        }
    }

    template <typename T>
    QNetwork<T> cast() {
        QNetwork<T> out(arch_);
        auto src = params();
        auto dst = out.params();
        for (std::size_t k = 0; k < src.size(); ++k)
            for (std::size_t i = 0; i < src[k]->value.size(); ++i)
                dst[k]->value[i] = static_cast<T>(src[k]->value[i]);
        out.touch_params();
        return out;
    }

    // Layer output shapes recorded at construction, for tests.
    std::vector<Shape> global_trace() const { return trace(arch_.global); }
    std::vector<Shape> local_trace() const { return trace(arch_.local); }

private:
    const Buffer<S>& combine(int n, const Tensor<S>& a, const Tensor<S>& v) {
        q_.assign(static_cast<std::size_t>(n) * kNumActions, S(0));
        for (int s = 0; s < n; ++s) {
            const auto q = dueling_combine<S>(v.data[s], std::span<const S, kNumActions>(a.sample(s), kNumActions));
            std::copy(q.begin(), q.end(), q_.begin() + static_cast<std::ptrdiff_t>(s) * kNumActions);
        }
        batch_ = n;
        return q_;
    }

    // Ordinary features after the global block: local channel then scalars.
    void build_suffix(int n, const InputBatch<S>& in) {
        const Tensor<S>* l = local_.empty() ? nullptr : &local_.forward(in.local);
        const int ls = (l ? static_cast<int>(l->stride()) : 0) + arch_.scalar_features;
        suffix_.resize(n, Shape{ls, 1, 1});
        for (int s = 0; s < n; ++s) {
            S* dst = suffix_.sample(s);
            if (l) dst = std::copy_n(l->sample(s), l->stride(), dst);
            if (arch_.scalar_features) std::copy_n(in.scalars.sample(s), arch_.scalar_features, dst);
        }
    }

    const Buffer<S>& forward_boxed(const InputBatch<S>& in) {
        const int n = in.n;
        const BoxedTensor<S>& g = gbox_.forward(global_, in.global_boxed);
        build_suffix(n, in);
        const Tensor<S>* suf = suffix_.stride() ? &suffix_ : nullptr;
        adv_front_.forward(std::get<Dense<S>>(adv_.layer(0)), g, suf, hidden_a_);
        val_front_.forward(std::get<Dense<S>>(val_.layer(0)), g, suf, hidden_v_);
        const Tensor<S>& a = adv_.forward(hidden_a_, 1);
        const Tensor<S>& v = val_.forward(hidden_v_, 1);
        return combine(n, a, v);
    }

    void backward_boxed(const Tensor<S>& da, const Tensor<S>& dv) {
        const bool has_suffix = suffix_.stride() > 0;
        const Tensor<S> dha = adv_.backward(da, true, 1);
        const Tensor<S>& dhv = val_.backward(dv, true, 1);
        BoxedTensor<S> dg, dg2;
        Tensor<S> ds, ds2;
        adv_front_.backward(std::get<Dense<S>>(adv_.layer(0)), dha, &dg, has_suffix ? &ds : nullptr);
        val_front_.backward(std::get<Dense<S>>(val_.layer(0)), dhv, &dg2, has_suffix ? &ds2 : nullptr);
        dg.add(dg2);
        gbox_.backward(global_, dg);
        if (!local_.empty()) {
            for (std::size_t i = 0; i < ds.data.size(); ++i) ds.data[i] += ds2.data[i];
            const Shape out = arch_.local.back().out;
            Tensor<S> part;
            part.resize(ds.n, out);
            for (int s = 0; s < ds.n; ++s) std::copy_n(ds.sample(s), out.size(), part.sample(s));
            local_.backward(part, false);
        }
    }

    static std::vector<Shape> trace(const std::vector<LayerSpec>& ls) {
        std::vector<Shape> out;
        if (!ls.empty()) out.push_back(ls.front().in);
        for (const auto& l : ls) out.push_back(l.out);
        return out;
    }

    Shape arch_shape_out(const Sequential<S>& seq) const {
        return &seq == &global_ ? arch_.global.back().out : arch_.local.back().out;
    }

    void validate() const {
        int f = arch_.scalar_features;
        if (!arch_.global.empty()) f += static_cast<int>(arch_.global.back().out.size());
        if (!arch_.local.empty()) f += static_cast<int>(arch_.local.back().out.size());
        if (f != arch_.feature_count())
            throw ArchitectureError("concat width " + std::to_string(arch_.feature_count()) +
                                    " != channel outputs " + std::to_string(f));
        if (arch_.advantage.empty() || arch_.value.empty())
            throw ArchitectureError("dueling head needs both branches");
        if (arch_.advantage.back().out.c != kNumActions || arch_.value.back().out.c != 1)
            throw ArchitectureError("advantage branch must emit 8 values and value branch 1");
        if (arch_.advantage.front().in.size() != static_cast<std::size_t>(f) ||
            arch_.value.front().in.size() != static_cast<std::size_t>(f))
            throw ArchitectureError("branch input width does not match concat width");
    }

    void check_inputs(const InputBatch<S>& in) const {
        if (!arch_.global.empty() && in.boxed) {
            const BoxedTensor<S>& g = in.global_boxed;
            if (g.n != in.n || !(g.shape == arch_.global_input()) || g.boxes.size() != static_cast<std::size_t>(in.n))
                throw ArchitectureError("global input must be " + nn::to_string(arch_.global_input()));
        } else if (!arch_.global.empty() &&
            (in.global.n != in.n || !(in.global.shape == arch_.global_input())))
            throw ArchitectureError("global input must be " + nn::to_string(arch_.global_input()));
        if (!arch_.local.empty() && (in.local.n != in.n || !(in.local.shape == arch_.local_input())))
            throw ArchitectureError("local input must be " + nn::to_string(arch_.local_input()));
        if (arch_.scalar_features &&
            (in.scalars.n != in.n || in.scalars.stride() != static_cast<std::size_t>(arch_.scalar_features)))
            throw ArchitectureError("scalar input must have " + std::to_string(arch_.scalar_features) +
                                    " features");
    }

    ArchSpec arch_;
    Sequential<S> global_;
    Sequential<S> local_;
    Sequential<S> adv_;
    Sequential<S> val_;
    Tensor<S> feats_;
    Buffer<S> q_;
    bool boxed_ = false;
    BoxedChannel<S> gbox_;
    BoxedDense<S> adv_front_;
    BoxedDense<S> val_front_;
    Tensor<S> suffix_, hidden_a_, hidden_v_;
    int batch_ = -1;
    std::vector<Buffer<S>> adam_m_;
    std::vector<Buffer<S>> adam_v_;
    std::int64_t adam_t_ = 0;
};

// Checks the full-size LOPA shape chain; throws ArchitectureError on mismatch.
inline void assert_lopa_trace(const ArchSpec& a) {
    auto expect = [](bool ok, const char* what) {
        if (!ok) throw ArchitectureError(std::string("LOPA shape trace: ") + what);
    };
    expect(a.global.size() == 6 && a.local.size() == 5, "layer counts");
    expect(a.global[0].out == Shape{8, 98, 98}, "global conv1 -> 98x98x8");
    expect(a.global[2].out == Shape{8, 33, 33}, "global pool -> 33x33x8");
    expect(a.global[3].out == Shape{16, 31, 31}, "global conv2 -> 31x31x16");
    expect(a.global[5].out.c == 15376, "global flatten -> 15376");
    expect(a.local[0].out == Shape{4, 18, 18}, "local conv1 -> 18x18x4");
    expect(a.local[2].out == Shape{10, 16, 16}, "local conv2 -> 16x16x10");
    expect(a.local[4].out.c == 2560, "local flatten -> 2560");
    expect(a.concat.out.c == 17936, "concat -> 17936");
    expect(a.dueling.out.c == kNumActions, "output 8");
}

template <typename S = float>
QNetwork<S> build_lopa_arch() {
    ArchSpec a = lopa_arch();
    assert_lopa_trace(a);
    return QNetwork<S>(std::move(a));
}

template <typename S = float>
QNetwork<S> build_ldqn_arch() {
    return QNetwork<S>(ldqn_arch());
}

}  // namespace ridgeplan::nn
