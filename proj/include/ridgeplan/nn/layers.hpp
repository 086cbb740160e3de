#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "ridgeplan/common.hpp"

namespace ridgeplan::nn {

struct Shape {
    int c = 1;
    int h = 1;
    int w = 1;

    std::size_t size() const { return static_cast<std::size_t>(c) * h * w; }
    friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
    return std::to_string(s.h) + "x" + std::to_string(s.w) + "x" + std::to_string(s.c);
}

enum class LayerKind { conv, maxpool, relu, dense, flatten, concat, dueling_head };

NLOHMANN_JSON_SERIALIZE_ENUM(LayerKind, {{LayerKind::conv, "conv"},
                                         {LayerKind::maxpool, "maxpool"},
                                         {LayerKind::relu, "relu"},
                                         {LayerKind::dense, "dense"},
                                         {LayerKind::flatten, "flatten"},
                                         {LayerKind::concat, "concat"},
                                         {LayerKind::dueling_head, "dueling_head"}})

// One layer of an architecture. Convolutions are stride 1 without padding;
// `kernel`/`stride` give the conv kernel side or the pool window and step.
// Dense layers use in.size() inputs and out.c outputs.
struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    Shape in;
    Shape out;
    int kernel = 0;
    int stride = 0;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline nlohmann::json to_json_value(const Shape& s) { return nlohmann::json::array({s.h, s.w, s.c}); }

inline Shape shape_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 3) throw FormatError("shape must be [h, w, c]");
    return Shape{j[2].get<int>(), j[0].get<int>(), j[1].get<int>()};
}

inline nlohmann::json to_json_value(const LayerSpec& l) {
    nlohmann::json j{{"kind", l.kind}, {"in", to_json_value(l.in)}, {"out", to_json_value(l.out)}};
    if (l.kernel) j["kernel"] = l.kernel;
    if (l.stride) j["stride"] = l.stride;
    return j;
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
    LayerSpec l;
    l.kind = j.at("kind").get<LayerKind>();
    l.in = shape_from_json(j.at("in"));
    l.out = shape_from_json(j.at("out"));
    l.kernel = j.value("kernel", 0);
    l.stride = j.value("stride", 0);
    return l;
}

// Eigen picks its SIMD head/tail split from the buffer address, and the
// split changes rounding, so every buffer Eigen touches is allocated aligned.
template <typename S>
using Buffer = std::vector<S, Eigen::aligned_allocator<S>>;

// Batch of n samples, each stored channel-major (c, h, w).
template <typename S>
struct Tensor {
    int n = 0;
    Shape shape;
    Buffer<S> data;

    void resize(int batch, Shape s) {
        n = batch;
        shape = s;
        data.assign(static_cast<std::size_t>(batch) * s.size(), S(0));
    }
    std::size_t stride() const { return shape.size(); }
    S* sample(int i) { return data.data() + static_cast<std::size_t>(i) * stride(); }
    const S* sample(int i) const { return data.data() + static_cast<std::size_t>(i) * stride(); }
};

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Named parameter buffer and its gradient.
template <typename S>
struct Param {
    std::string name;
    std::vector<int> shape;
    Buffer<S> value;
    Buffer<S> grad;
    int fan_in = 1;
    std::uint64_t version = 0;  // bumped whenever `value` changes; keys derived caches

    void zero_grad() { std::fill(grad.begin(), grad.end(), S(0)); }
    void touch() { ++version; }
};

template <typename S>
class Conv2d {
public:
    Conv2d(Shape in, int out_c, int kernel)
        : in_(in), k_(kernel),
          out_{out_c, in.h - kernel + 1, in.w - kernel + 1} {
        if (out_.h < 1 || out_.w < 1)
            throw ArchitectureError("conv: kernel " + std::to_string(kernel) +
                                    " larger than input " + nn::to_string(in));
        const int fan_in = in.c * kernel * kernel;
        weight_ = {"weight", {out_c, in.c, kernel, kernel},
                   Buffer<S>(static_cast<std::size_t>(out_c) * fan_in), {}, fan_in};
        bias_ = {"bias", {out_c}, Buffer<S>(out_c), {}, fan_in};
        weight_.grad.assign(weight_.value.size(), S(0));
        bias_.grad.assign(bias_.value.size(), S(0));
        for (int r = 0; r < out_.h; ++r) rows_.push_back(r);
        for (int c = 0; c < out_.w; ++c) cols_.push_back(c);
    }

    Shape in_shape() const { return in_; }
    Shape out_shape() const { return out_; }
    int kernel() const { return k_; }

    // Restricts computation to the listed output rows/columns; the rest of
    // the output stays zero. Used when a strided pool never reads them.
    void restrict_outputs(std::vector<int> rows, std::vector<int> cols) {
        rows_ = std::move(rows);
        cols_ = std::move(cols);
    }
    std::size_t computed_positions() const { return rows_.size() * cols_.size(); }
    const std::vector<int>& out_rows() const { return rows_; }
    const std::vector<int>& out_cols() const { return cols_; }

    void forward(const Tensor<S>& in, Tensor<S>& out) {
        const int n = in.n;
        const int kdim = in_.c * k_ * k_;
        const int nr = static_cast<int>(rows_.size());
        const int nc = static_cast<int>(cols_.size());
        const std::size_t p = static_cast<std::size_t>(nr) * nc;
        const std::size_t np = p * n;
        cols_buf_.resize(static_cast<std::size_t>(kdim) * np);
        batch_ = n;

        for (int s = 0; s < n; ++s) {
            const S* src = in.sample(s);
            for (int ci = 0; ci < in_.c; ++ci)
                for (int di = 0; di < k_; ++di)
                    for (int dj = 0; dj < k_; ++dj) {
                        const std::size_t krow = (static_cast<std::size_t>(ci) * k_ + di) * k_ + dj;
                        S* dst = cols_buf_.data() + krow * np + s * p;
                        for (int ri = 0; ri < nr; ++ri) {
                            const S* line =
                                src + (static_cast<std::size_t>(ci) * in_.h + rows_[ri] + di) * in_.w + dj;
                            for (int cj = 0; cj < nc; ++cj) dst[ri * nc + cj] = line[cols_[cj]];
                        }
                    }
        }

        Eigen::Map<const RowMat<S>> w(weight_.value.data(), out_.c, kdim);
        Eigen::Map<const RowMat<S>> x(cols_buf_.data(), kdim, np);
        y_buf_.resize(out_.c, static_cast<Eigen::Index>(np));
        y_buf_.noalias() = w * x;
        const RowMat<S>& y = y_buf_;

        out.resize(n, out_);
        for (int s = 0; s < n; ++s) {
            S* dst = out.sample(s);
            for (int co = 0; co < out_.c; ++co) {
                const S b = bias_.value[co];
                const S* row = y.data() + static_cast<std::size_t>(co) * np + s * p;
                for (int ri = 0; ri < nr; ++ri) {
                    S* line = dst + (static_cast<std::size_t>(co) * out_.h + rows_[ri]) * out_.w;
                    for (int cj = 0; cj < nc; ++cj) line[cols_[cj]] = row[ri * nc + cj] + b;
                }
            }
        }
    }

    // Accumulates parameter gradients; fills `din` when non-null.
    void backward(const Tensor<S>& dout, Tensor<S>* din) {
        const int n = dout.n;
        if (n != batch_) throw StateError("conv: backward batch differs from forward batch");
        const int kdim = in_.c * k_ * k_;
        const int nr = static_cast<int>(rows_.size());
        const int nc = static_cast<int>(cols_.size());
        const std::size_t p = static_cast<std::size_t>(nr) * nc;
        const std::size_t np = p * n;

        dy_buf_.resize(out_.c, static_cast<Eigen::Index>(np));
        RowMat<S>& dy = dy_buf_;
        for (int s = 0; s < n; ++s) {
            const S* src = dout.sample(s);
            for (int co = 0; co < out_.c; ++co) {
                S* row = dy.data() + static_cast<std::size_t>(co) * np + s * p;
                for (int ri = 0; ri < nr; ++ri) {
                    const S* line = src + (static_cast<std::size_t>(co) * out_.h + rows_[ri]) * out_.w;
                    for (int cj = 0; cj < nc; ++cj) row[ri * nc + cj] = line[cols_[cj]];
                }
            }
        }

        Eigen::Map<const RowMat<S>> x(cols_buf_.data(), kdim, np);
        Eigen::Map<RowMat<S>> dw(weight_.grad.data(), out_.c, kdim);
        dw.noalias() += dy * x.transpose();
        for (int co = 0; co < out_.c; ++co) bias_.grad[co] += dy.row(co).sum();

        if (!din) return;
        Eigen::Map<const RowMat<S>> w(weight_.value.data(), out_.c, kdim);
        dx_buf_.resize(kdim, static_cast<Eigen::Index>(np));
        dx_buf_.noalias() = w.transpose() * dy;
        const RowMat<S>& dx = dx_buf_;
        din->resize(n, in_);
        for (int s = 0; s < n; ++s) {
            S* dst = din->sample(s);
            for (int ci = 0; ci < in_.c; ++ci)
                for (int di = 0; di < k_; ++di)
                    for (int dj = 0; dj < k_; ++dj) {
                        const std::size_t krow = (static_cast<std::size_t>(ci) * k_ + di) * k_ + dj;
                        const S* row = dx.data() + krow * np + s * p;
                        for (int ri = 0; ri < nr; ++ri) {
                            S* line = dst + (static_cast<std::size_t>(ci) * in_.h + rows_[ri] + di) * in_.w + dj;
                            for (int cj = 0; cj < nc; ++cj) line[cols_[cj]] += row[ri * nc + cj];
                        }
                    }
        }
    }

    std::vector<Param<S>*> params() { return {&weight_, &bias_}; }
    std::vector<const Param<S>*> params() const { return {&weight_, &bias_}; }

private:
    Shape in_;
    int k_;
    Shape out_;
    Param<S> weight_;
    Param<S> bias_;
    std::vector<int> rows_;
    std::vector<int> cols_;
    Buffer<S> cols_buf_;
    RowMat<S> y_buf_;
    RowMat<S> dy_buf_;
    RowMat<S> dx_buf_;
    int batch_ = -1;
};

template <typename S>
class MaxPool {
public:
    MaxPool(Shape in, int size, int stride)
        : in_(in), size_(size), stride_(stride),
          out_{in.c, (in.h - size) / stride + 1, (in.w - size) / stride + 1} {
        if (size < 1 || stride < 1 || in.h < size || in.w < size)
            throw ArchitectureError("maxpool: window " + std::to_string(size) +
                                    " does not fit input " + nn::to_string(in));
    }

    Shape in_shape() const { return in_; }
    Shape out_shape() const { return out_; }
    int size() const { return size_; }
    int stride() const { return stride_; }

    void forward(const Tensor<S>& in, Tensor<S>& out) {
        out.resize(in.n, out_);
        argmax_.resize(static_cast<std::size_t>(in.n) * out_.size());
        std::size_t k = 0;
        for (int s = 0; s < in.n; ++s) {
            const S* src = in.sample(s);
            S* dst = out.sample(s);
            for (int c = 0; c < out_.c; ++c)
                for (int i = 0; i < out_.h; ++i)
                    for (int j = 0; j < out_.w; ++j, ++k) {
                        std::size_t best = 0;
                        S best_v = -std::numeric_limits<S>::infinity();
                        for (int di = 0; di < size_; ++di)
                            for (int dj = 0; dj < size_; ++dj) {
                                const std::size_t idx =
                                    (static_cast<std::size_t>(c) * in_.h + i * stride_ + di) * in_.w +
                                    j * stride_ + dj;
                                if (src[idx] > best_v) {
                                    best_v = src[idx];
                                    best = idx;
                                }
                            }
                        dst[(static_cast<std::size_t>(c) * out_.h + i) * out_.w + j] = best_v;
                        argmax_[k] = best;
                    }
        }
    }

    void backward(const Tensor<S>& dout, Tensor<S>* din) {
        if (!din) return;
        din->resize(dout.n, in_);
        std::size_t k = 0;
        for (int s = 0; s < dout.n; ++s) {
            const S* src = dout.sample(s);
            S* dst = din->sample(s);
            for (std::size_t o = 0; o < out_.size(); ++o, ++k) dst[argmax_[k]] += src[o];
        }
    }

    // Output rows (or columns) that some pooling window reads.
    static std::vector<int> read_positions(int extent, int size, int stride) {
        std::vector<int> used;
        const int outs = (extent - size) / stride + 1;
        for (int o = 0; o < outs; ++o)
            for (int d = 0; d < size; ++d) used.push_back(o * stride + d);
        std::sort(used.begin(), used.end());
        used.erase(std::unique(used.begin(), used.end()), used.end());
        return used;
    }

private:
    Shape in_;
    int size_;
    int stride_;
    Shape out_;
    std::vector<std::size_t> argmax_;
};

template <typename S>
class Relu {
public:
    explicit Relu(Shape s) : shape_(s) {}
    Shape in_shape() const { return shape_; }
    Shape out_shape() const { return shape_; }

    void forward(const Tensor<S>& in, Tensor<S>& out) {
        out.n = in.n;
        out.shape = shape_;
        out.data.resize(in.data.size());
        for (std::size_t i = 0; i < in.data.size(); ++i)
            out.data[i] = in.data[i] > S(0) ? in.data[i] : S(0);
    }

    // Needs the forward output; positive outputs pass gradient.
    void backward(const Tensor<S>& out, const Tensor<S>& dout, Tensor<S>* din) {
        if (!din) return;
        din->n = dout.n;
        din->shape = shape_;
        din->data.resize(dout.data.size());
        for (std::size_t i = 0; i < dout.data.size(); ++i)
            din->data[i] = out.data[i] > S(0) ? dout.data[i] : S(0);
    }

private:
    Shape shape_;
};

template <typename S>
class Flatten {
public:
    explicit Flatten(Shape in) : in_(in) {}
    Shape in_shape() const { return in_; }
    Shape out_shape() const { return Shape{static_cast<int>(in_.size()), 1, 1}; }

    void forward(const Tensor<S>& in, Tensor<S>& out) {
        out.n = in.n;
        out.shape = out_shape();
        out.data = in.data;
    }
    void backward(const Tensor<S>& dout, Tensor<S>* din) {
        if (!din) return;
        din->n = dout.n;
        din->shape = in_;
        din->data = dout.data;
    }

private:
    Shape in_;
};

template <typename S>
class Dense {
public:
    Dense(int in_features, int out_features) : in_(in_features), out_(out_features) {
        weight_ = {"weight", {out_features, in_features},
                   Buffer<S>(static_cast<std::size_t>(out_features) * in_features), {}, in_features};
        bias_ = {"bias", {out_features}, Buffer<S>(out_features), {}, in_features};
        weight_.grad.assign(weight_.value.size(), S(0));
        bias_.grad.assign(bias_.value.size(), S(0));
    }

    Shape in_shape() const { return Shape{in_, 1, 1}; }
    Shape out_shape() const { return Shape{out_, 1, 1}; }

    void forward(const Tensor<S>& in, Tensor<S>& out) {
        if (in.stride() != static_cast<std::size_t>(in_))
            throw ArchitectureError("dense: expected " + std::to_string(in_) + " inputs, got " +
                                    std::to_string(in.stride()));
        out.resize(in.n, out_shape());
        Eigen::Map<const RowMat<S>> x(in.data.data(), in.n, in_);
        Eigen::Map<const RowMat<S>> w(weight_.value.data(), out_, in_);
        Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> b(bias_.value.data(), out_);
        Eigen::Map<RowMat<S>> y(out.data.data(), in.n, out_);
        y.noalias() = x * w.transpose();
        y.rowwise() += b;
    }

    // `in` must be the tensor passed to the matching forward.
    void backward(const Tensor<S>& in, const Tensor<S>& dout, Tensor<S>* din) {
        Eigen::Map<const RowMat<S>> x(in.data.data(), in.n, in_);
        Eigen::Map<const RowMat<S>> dy(dout.data.data(), dout.n, out_);
        Eigen::Map<RowMat<S>> dw(weight_.grad.data(), out_, in_);
        dw.noalias() += dy.transpose() * x;
        for (int o = 0; o < out_; ++o) bias_.grad[o] += dy.col(o).sum();
        if (!din) return;
        din->resize(dout.n, in_shape());
        Eigen::Map<const RowMat<S>> w(weight_.value.data(), out_, in_);
        Eigen::Map<RowMat<S>> dx(din->data.data(), dout.n, in_);
        dx.noalias() = dy * w;
    }

    std::vector<Param<S>*> params() { return {&weight_, &bias_}; }
    std::vector<const Param<S>*> params() const { return {&weight_, &bias_}; }

private:
    int in_;
    int out_;
    Param<S> weight_;
    Param<S> bias_;
};

// Chain of layers with cached activations.
template <typename S>
class Sequential {
public:
    using Layer = std::variant<Conv2d<S>, MaxPool<S>, Relu<S>, Flatten<S>, Dense<S>>;

    Sequential() = default;

    explicit Sequential(const std::vector<LayerSpec>& specs) {
        for (std::size_t i = 0; i < specs.size(); ++i) {
            const LayerSpec& l = specs[i];
            if (i > 0 && !(specs[i - 1].out == l.in))
                throw ArchitectureError("layer " + std::to_string(i) + " input " +
                                        nn::to_string(l.in) + " does not match previous output " +
                                        nn::to_string(specs[i - 1].out));
            switch (l.kind) {
                case LayerKind::conv: layers_.emplace_back(Conv2d<S>(l.in, l.out.c, l.kernel)); break;
                case LayerKind::maxpool: layers_.emplace_back(MaxPool<S>(l.in, l.kernel, l.stride)); break;
                case LayerKind::relu: layers_.emplace_back(Relu<S>(l.in)); break;
                case LayerKind::flatten: layers_.emplace_back(Flatten<S>(l.in)); break;
                case LayerKind::dense: layers_.emplace_back(Dense<S>(static_cast<int>(l.in.size()), l.out.c)); break;
                default: throw ArchitectureError("sequential: unsupported layer kind");
            }
            const Shape got = std::visit([](const auto& x) { return x.out_shape(); }, layers_.back());
            if (!(got == l.out))
                throw ArchitectureError("layer " + std::to_string(i) + " produces " +
                                        nn::to_string(got) + ", spec says " + nn::to_string(l.out));
        }
        skip_unread_conv_outputs();
        acts_.resize(layers_.size() + 1);
        grads_.resize(layers_.size() + 1);
    }

    bool empty() const { return layers_.empty(); }
    std::size_t size() const { return layers_.size(); }

    // Runs layers [start, end); `input` is what layer `start` consumes.
    const Tensor<S>& forward(const Tensor<S>& input, std::size_t start = 0) {
        acts_[start] = input;
        for (std::size_t i = start; i < layers_.size(); ++i) {
            std::visit([&](auto& l) { l.forward(acts_[i], acts_[i + 1]); }, layers_[i]);
        }
        forwarded_ = true;
        return acts_.back();
    }

    // Returns the gradient w.r.t. the input of layer `start` if
    // `need_input_grad`, else an empty tensor.
    const Tensor<S>& backward(const Tensor<S>& dout, bool need_input_grad, std::size_t start = 0) {
        if (!forwarded_) throw StateError("backward called before forward");
        grads_.back() = dout;
        for (std::size_t i = layers_.size(); i-- > start;) {
            Tensor<S>* din = (i > start || need_input_grad) ? &grads_[i] : nullptr;
            if (!din) grads_[i] = Tensor<S>{};
            std::visit(
                [&](auto& l) {
                    using L = std::decay_t<decltype(l)>;
                    if constexpr (std::is_same_v<L, Relu<S>>)
                        l.backward(acts_[i + 1], grads_[i + 1], din);
                    else if constexpr (std::is_same_v<L, Dense<S>>)
                        l.backward(acts_[i], grads_[i + 1], din);
                    else
                        l.backward(grads_[i + 1], din);
                },
                layers_[i]);
        }
        return grads_[start];
    }

    std::vector<Param<S>*> params() {
        std::vector<Param<S>*> out;
        for (auto& l : layers_)
            std::visit(
                [&](auto& x) {
                    if constexpr (requires { x.params(); })
                        for (auto* p : x.params()) out.push_back(p);
                },
                l);
        return out;
    }

    // Index of the layer owning each entry of params().
    std::vector<std::size_t> param_layer_index() {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < layers_.size(); ++i)
            std::visit(
                [&](auto& x) {
                    if constexpr (requires { x.params(); })
                        for (std::size_t k = 0; k < x.params().size(); ++k) out.push_back(i);
                },
                layers_[i]);
        return out;
    }

    const Layer& layer(std::size_t i) const { return layers_[i]; }
    Layer& layer(std::size_t i) { return layers_[i]; }

private:
    // conv -> relu -> maxpool with stride > window leaves some conv outputs
    // unread; skip computing them.
    void skip_unread_conv_outputs() {
        for (std::size_t i = 0; i + 2 < layers_.size(); ++i) {
            auto* conv = std::get_if<Conv2d<S>>(&layers_[i]);
            auto* relu = std::get_if<Relu<S>>(&layers_[i + 1]);
            auto* pool = std::get_if<MaxPool<S>>(&layers_[i + 2]);
            if (!conv || !relu || !pool || pool->stride() <= pool->size()) continue;
            const Shape o = conv->out_shape();
            conv->restrict_outputs(MaxPool<S>::read_positions(o.h, pool->size(), pool->stride()),
                                   MaxPool<S>::read_positions(o.w, pool->size(), pool->stride()));
        }
    }

    std::vector<Layer> layers_;
    std::vector<Tensor<S>> acts_;
    std::vector<Tensor<S>> grads_;
    bool forwarded_ = false;
};

}  // namespace ridgeplan::nn
