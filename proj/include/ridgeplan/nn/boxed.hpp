#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "ridgeplan/nn/layers.hpp"

// Sparse route for the global channel. Outside the painted rectangle the
// canvas is zero, so every later feature map is a per-channel constant
// outside some box. A BoxedTensor stores only the box interior plus those
// constants. As a gradient, `outside` holds the sum of the gradient over all
// positions outside the box, which is all the layers upstream ever need.

namespace ridgeplan::nn {

struct Box {
    int r0 = 0, r1 = 0, c0 = 0, c1 = 0;  // half-open rows [r0,r1), cols [c0,c1)

    int h() const { return std::max(0, r1 - r0); }
    int w() const { return std::max(0, c1 - c0); }
    bool empty() const { return r1 <= r0 || c1 <= c0; }
    bool contains(int r, int c) const { return r >= r0 && r < r1 && c >= c0 && c < c1; }
    friend bool operator==(const Box&, const Box&) = default;
};

template <typename S>
struct BoxedTensor {
    int n = 0;
    Shape shape;
    std::vector<Box> boxes;
    std::vector<std::size_t> offsets;
    Buffer<S> data;
    Buffer<S> outside;  // n x c

    void allocate(int batch, Shape s, std::vector<Box> b) {
        n = batch;
        shape = s;
        boxes = std::move(b);
        offsets.assign(static_cast<std::size_t>(n) + 1, 0);
        for (int i = 0; i < n; ++i)
            offsets[i + 1] = offsets[i] + static_cast<std::size_t>(s.c) * boxes[i].h() * boxes[i].w();
        data.assign(offsets[n], S(0));
        outside.assign(static_cast<std::size_t>(n) * s.c, S(0));
    }

    S* block(int i) { return data.data() + offsets[i]; }
    const S* block(int i) const { return data.data() + offsets[i]; }
    S& out(int i, int c) { return outside[static_cast<std::size_t>(i) * shape.c + c]; }
    S out(int i, int c) const { return outside[static_cast<std::size_t>(i) * shape.c + c]; }

    // Block index of (c, r, col); caller checks the box.
    std::size_t local(int i, int c, int r, int col) const {
        const Box& b = boxes[i];
        return (static_cast<std::size_t>(c) * b.h() + (r - b.r0)) * b.w() + (col - b.c0);
    }
    S get(int i, int c, int r, int col) const {
        return boxes[i].contains(r, col) ? block(i)[local(i, c, r, col)] : out(i, c);
    }

    void add(const BoxedTensor& o) {
        if (o.data.size() != data.size() || o.outside.size() != outside.size() || !(o.boxes == boxes))
            throw ArchitectureError("boxed add: layout mismatch");
        for (std::size_t k = 0; k < data.size(); ++k) data[k] += o.data[k];
        for (std::size_t k = 0; k < outside.size(); ++k) outside[k] += o.outside[k];
    }
};

// Dense expansion, for checks against the dense route.
template <typename S>
Tensor<S> to_dense(const BoxedTensor<S>& b) {
    Tensor<S> t;
    t.resize(b.n, b.shape);
    for (int i = 0; i < b.n; ++i) {
        S* dst = t.sample(i);
        for (int c = 0; c < b.shape.c; ++c)
            for (int r = 0; r < b.shape.h; ++r)
                for (int col = 0; col < b.shape.w; ++col)
                    dst[(static_cast<std::size_t>(c) * b.shape.h + r) * b.shape.w + col] = b.get(i, c, r, col);
    }
    return t;
}

// Boxed view of a dense tensor that is zero outside each sample's box.
template <typename S>
BoxedTensor<S> from_dense(const Tensor<S>& t, const std::vector<Box>& boxes) {
    BoxedTensor<S> b;
    b.allocate(t.n, t.shape, boxes);
    for (int i = 0; i < t.n; ++i) {
        const Box& bx = b.boxes[i];
        for (int c = 0; c < t.shape.c; ++c)
            for (int r = bx.r0; r < bx.r1; ++r)
                for (int col = bx.c0; col < bx.c1; ++col)
                    b.block(i)[b.local(i, c, r, col)] =
                        t.sample(i)[(static_cast<std::size_t>(c) * t.shape.h + r) * t.shape.w + col];
    }
    return b;
}

namespace detail {

inline int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

// Output positions of a window op (size k, step s) whose window meets `in`.
inline Box window_box(const Box& in, int k, int s, int out_h, int out_w) {
    if (in.empty()) return {};
    Box o{std::max(0, floor_div(in.r0 - k, s) + 1), std::min(out_h, floor_div(in.r1 - 1, s) + 1),
          std::max(0, floor_div(in.c0 - k, s) + 1), std::min(out_w, floor_div(in.c1 - 1, s) + 1)};
    if (o.empty()) return {};
    return o;
}

}  // namespace detail

// Runs a Sequential of conv/relu/pool/flatten layers on boxed inputs, using
// the layers' own parameters. Keeps its own activation caches.
template <typename S>
class BoxedChannel {
public:
    const BoxedTensor<S>& forward(Sequential<S>& seq, const BoxedTensor<S>& input) {
        const std::size_t L = seq.size();
        acts_.resize(L + 1);
        grads_.resize(L + 1);
        caches_.resize(L);
        acts_[0] = input;
        for (std::size_t i = 0; i < L; ++i) {
            std::visit(
                [&](auto& l) {
                    using T = std::decay_t<decltype(l)>;
                    if constexpr (std::is_same_v<T, Conv2d<S>>)
                        conv_forward(l, acts_[i], acts_[i + 1], caches_[i]);
                    else if constexpr (std::is_same_v<T, Relu<S>>)
                        relu_forward(acts_[i], acts_[i + 1]);
                    else if constexpr (std::is_same_v<T, MaxPool<S>>)
                        pool_forward(l, acts_[i], acts_[i + 1], caches_[i]);
                    else if constexpr (std::is_same_v<T, Flatten<S>>)
                        acts_[i + 1] = acts_[i];
                    else
                        throw ArchitectureError("boxed route: dense layer inside a channel");
                },
                seq.layer(i));
        }
        forwarded_ = true;
        return acts_.back();
    }

    // Accumulates parameter gradients; the input gradient is not formed.
    void backward(Sequential<S>& seq, const BoxedTensor<S>& dout) {
        if (!forwarded_) throw StateError("backward called before forward");
        const std::size_t L = seq.size();
        grads_[L] = dout;
        for (std::size_t i = L; i-- > 0;) {
            BoxedTensor<S>* din = i > 0 ? &grads_[i] : nullptr;
            std::visit(
                [&](auto& l) {
                    using T = std::decay_t<decltype(l)>;
                    if constexpr (std::is_same_v<T, Conv2d<S>>)
                        conv_backward(l, acts_[i], grads_[i + 1], din, caches_[i]);
                    else if constexpr (std::is_same_v<T, Relu<S>>) {
                        if (din) relu_backward(acts_[i + 1], grads_[i + 1], *din);
                    } else if constexpr (std::is_same_v<T, MaxPool<S>>) {
                        if (din) pool_backward(acts_[i], grads_[i + 1], *din, caches_[i]);
                    } else if constexpr (std::is_same_v<T, Flatten<S>>) {
                        if (din) *din = grads_[i + 1];
                    }
                },
                seq.layer(i));
        }
    }

private:
    struct Pos {
        int s, r, c;
    };
    struct Cache {
        std::vector<Pos> pos;
        Buffer<S> cols;
        RowMat<S> y, dy, dx;
        std::vector<std::int64_t> argmax;  // block index, or -1 for the outside constant
    };

    static void conv_forward(Conv2d<S>& conv, const BoxedTensor<S>& in, BoxedTensor<S>& out, Cache& cc) {
        const Shape is = conv.in_shape(), os = conv.out_shape();
        const int k = conv.kernel();
        const int kdim = is.c * k * k;
        auto ps = conv.params();
        const Buffer<S>& W = ps[0]->value;
        const Buffer<S>& b = ps[1]->value;

        std::vector<char> row_ok(os.h, 0), col_ok(os.w, 0);
        for (int r : conv.out_rows()) row_ok[r] = 1;
        for (int c : conv.out_cols()) col_ok[c] = 1;

        std::vector<Box> boxes(in.n);
        for (int s = 0; s < in.n; ++s) boxes[s] = detail::window_box(in.boxes[s], k, 1, os.h, os.w);
        out.allocate(in.n, os, boxes);

        Buffer<S> wsum(static_cast<std::size_t>(os.c) * is.c, S(0));
        for (int co = 0; co < os.c; ++co)
            for (int ci = 0; ci < is.c; ++ci)
                for (int t = 0; t < k * k; ++t)
                    wsum[co * is.c + ci] += W[(static_cast<std::size_t>(co) * is.c + ci) * k * k + t];
        for (int s = 0; s < in.n; ++s)
            for (int co = 0; co < os.c; ++co) {
                S v = b[co];
                for (int ci = 0; ci < is.c; ++ci) v += in.out(s, ci) * wsum[co * is.c + ci];
                out.out(s, co) = v;
                const std::size_t area = static_cast<std::size_t>(boxes[s].h()) * boxes[s].w();
                std::fill_n(out.block(s) + co * area, area, v);
            }

        cc.pos.clear();
        for (int s = 0; s < in.n; ++s)
            for (int r = boxes[s].r0; r < boxes[s].r1; ++r)
                if (row_ok[r])
                    for (int c = boxes[s].c0; c < boxes[s].c1; ++c)
                        if (col_ok[c]) cc.pos.push_back({s, r, c});
        const std::size_t np = cc.pos.size();
        cc.cols.resize(static_cast<std::size_t>(kdim) * np);
        for (std::size_t p = 0; p < np; ++p) {
            const Pos& q = cc.pos[p];
            const Box& ib = in.boxes[q.s];
            const S* blk = in.block(q.s);
            if (ib.contains(q.r, q.c) && ib.contains(q.r + k - 1, q.c + k - 1)) {
                const int bh = ib.h(), bw = ib.w();
                for (int ci = 0; ci < is.c; ++ci)
                    for (int di = 0; di < k; ++di) {
                        const S* line = blk + (static_cast<std::size_t>(ci) * bh + (q.r + di - ib.r0)) * bw + (q.c - ib.c0);
                        for (int dj = 0; dj < k; ++dj)
                            cc.cols[((static_cast<std::size_t>(ci) * k + di) * k + dj) * np + p] = line[dj];
                    }
                continue;
            }
            for (int ci = 0; ci < is.c; ++ci) {
                const S o = in.out(q.s, ci);
                for (int di = 0; di < k; ++di) {
                    const int rr = q.r + di;
                    for (int dj = 0; dj < k; ++dj) {
                        const int cc2 = q.c + dj;
                        const std::size_t krow = (static_cast<std::size_t>(ci) * k + di) * k + dj;
                        cc.cols[krow * np + p] = ib.contains(rr, cc2) ? blk[in.local(q.s, ci, rr, cc2)] : o;
                    }
                }
            }
        }
        if (np == 0) return;
        Eigen::Map<const RowMat<S>> w(W.data(), os.c, kdim);
        Eigen::Map<const RowMat<S>> x(cc.cols.data(), kdim, static_cast<Eigen::Index>(np));
        cc.y.resize(os.c, static_cast<Eigen::Index>(np));
        cc.y.noalias() = w * x;
        for (std::size_t p = 0; p < np; ++p) {
            const Pos& q = cc.pos[p];
            S* blk = out.block(q.s);
            for (int co = 0; co < os.c; ++co)
                blk[out.local(q.s, co, q.r, q.c)] = cc.y(co, static_cast<Eigen::Index>(p)) + b[co];
        }
    }

    static void conv_backward(Conv2d<S>& conv, const BoxedTensor<S>& in, const BoxedTensor<S>& dout,
                              BoxedTensor<S>* din, Cache& cc) {
        const Shape is = conv.in_shape(), os = conv.out_shape();
        const int k = conv.kernel();
        const int kdim = is.c * k * k;
        auto ps = conv.params();
        const Buffer<S>& W = ps[0]->value;
        Buffer<S>& dW = ps[0]->grad;
        Buffer<S>& db = ps[1]->grad;
        const std::size_t np = cc.pos.size();

        // Outputs outside the box only ever saw the input constants.
        Buffer<S> wsum(static_cast<std::size_t>(os.c) * is.c, S(0));
        for (int co = 0; co < os.c; ++co)
            for (int ci = 0; ci < is.c; ++ci)
                for (int t = 0; t < k * k; ++t)
                    wsum[co * is.c + ci] += W[(static_cast<std::size_t>(co) * is.c + ci) * k * k + t];
        for (int s = 0; s < dout.n; ++s)
            for (int co = 0; co < os.c; ++co) {
                const S g = dout.out(s, co);
                if (g == S(0)) continue;
                db[co] += g;
                for (int ci = 0; ci < is.c; ++ci) {
                    const S gi = g * in.out(s, ci);
                    S* row = dW.data() + (static_cast<std::size_t>(co) * is.c + ci) * k * k;
                    for (int t = 0; t < k * k; ++t) row[t] += gi;
                }
            }

        if (din) {
            din->allocate(in.n, is, in.boxes);
            for (int s = 0; s < dout.n; ++s)
                for (int ci = 0; ci < is.c; ++ci) {
                    S v = 0;
                    for (int co = 0; co < os.c; ++co) v += dout.out(s, co) * wsum[co * is.c + ci];
                    din->out(s, ci) = v;
                }
        }
        if (np == 0) return;

        cc.dy.resize(os.c, static_cast<Eigen::Index>(np));
        for (std::size_t p = 0; p < np; ++p) {
            const Pos& q = cc.pos[p];
            const S* blk = dout.block(q.s);
            for (int co = 0; co < os.c; ++co)
                cc.dy(co, static_cast<Eigen::Index>(p)) = blk[dout.local(q.s, co, q.r, q.c)];
        }
        Eigen::Map<const RowMat<S>> x(cc.cols.data(), kdim, static_cast<Eigen::Index>(np));
        Eigen::Map<RowMat<S>> dw(dW.data(), os.c, kdim);
        dw.noalias() += cc.dy * x.transpose();
        for (int co = 0; co < os.c; ++co) db[co] += cc.dy.row(co).sum();

        if (!din) return;
        Eigen::Map<const RowMat<S>> w(W.data(), os.c, kdim);
        cc.dx.resize(kdim, static_cast<Eigen::Index>(np));
        cc.dx.noalias() = w.transpose() * cc.dy;
        for (std::size_t p = 0; p < np; ++p) {
            const Pos& q = cc.pos[p];
            const Box& ib = in.boxes[q.s];
            S* blk = din->block(q.s);
            for (int ci = 0; ci < is.c; ++ci)
                for (int di = 0; di < k; ++di)
                    for (int dj = 0; dj < k; ++dj) {
                        const S g = cc.dx((ci * k + di) * k + dj, static_cast<Eigen::Index>(p));
                        const int rr = q.r + di, c2 = q.c + dj;
                        if (ib.contains(rr, c2))
                            blk[din->local(q.s, ci, rr, c2)] += g;
                        else
                            din->out(q.s, ci) += g;
                    }
        }
    }

    static void relu_forward(const BoxedTensor<S>& in, BoxedTensor<S>& out) {
        out = in;
        for (S& v : out.data) v = v > S(0) ? v : S(0);
        for (S& v : out.outside) v = v > S(0) ? v : S(0);
    }

    static void relu_backward(const BoxedTensor<S>& out, const BoxedTensor<S>& dout, BoxedTensor<S>& din) {
        din = dout;
        for (std::size_t k = 0; k < din.data.size(); ++k)
            if (!(out.data[k] > S(0))) din.data[k] = S(0);
        for (std::size_t k = 0; k < din.outside.size(); ++k)
            if (!(out.outside[k] > S(0))) din.outside[k] = S(0);
    }

    static void pool_forward(MaxPool<S>& pool, const BoxedTensor<S>& in, BoxedTensor<S>& out, Cache& cc) {
        const Shape os = pool.out_shape();
        const int size = pool.size(), stride = pool.stride();
        std::vector<Box> boxes(in.n);
        for (int s = 0; s < in.n; ++s) boxes[s] = detail::window_box(in.boxes[s], size, stride, os.h, os.w);
        out.allocate(in.n, os, boxes);
        out.outside = in.outside;
        cc.argmax.assign(out.data.size(), -1);
        for (int s = 0; s < in.n; ++s) {
            const Box& ob = boxes[s];
            const Box& ib = in.boxes[s];
            S* dst = out.block(s);
            for (int c = 0; c < os.c; ++c)
                for (int i = ob.r0; i < ob.r1; ++i)
                    for (int j = ob.c0; j < ob.c1; ++j) {
                        S best = -std::numeric_limits<S>::infinity();
                        std::int64_t arg = -1;
                        for (int di = 0; di < size; ++di)
                            for (int dj = 0; dj < size; ++dj) {
                                const int r = i * stride + di, col = j * stride + dj;
                                const bool inside = ib.contains(r, col);
                                const S v = inside ? in.block(s)[in.local(s, c, r, col)] : in.out(s, c);
                                if (v > best) {
                                    best = v;
                                    arg = inside ? static_cast<std::int64_t>(in.local(s, c, r, col)) : -1;
                                }
                            }
                        const std::size_t o = out.local(s, c, i, j);
                        dst[o] = best;
                        cc.argmax[out.offsets[s] + o] = arg;
                    }
        }
    }

    static void pool_backward(const BoxedTensor<S>& in, const BoxedTensor<S>& dout, BoxedTensor<S>& din,
                              const Cache& cc) {
        din.allocate(in.n, in.shape, in.boxes);
        din.outside = dout.outside;
        for (int s = 0; s < dout.n; ++s) {
            const std::size_t area = static_cast<std::size_t>(dout.boxes[s].h()) * dout.boxes[s].w();
            const S* src = dout.block(s);
            S* dst = din.block(s);
            for (int c = 0; c < dout.shape.c; ++c)
                for (std::size_t a = 0; a < area; ++a) {
                    const std::size_t o = c * area + a;
                    const std::int64_t arg = cc.argmax[dout.offsets[s] + o];
                    if (arg >= 0)
                        dst[arg] += src[o];
                    else
                        din.out(s, c) += src[o];
                }
        }
    }

    std::vector<BoxedTensor<S>> acts_;
    std::vector<BoxedTensor<S>> grads_;
    std::vector<Cache> caches_;
    bool forwarded_ = false;
};

// Dense layer whose input is a boxed spatial prefix followed by ordinary
// features. The prefix constants go through per-channel column sums of the
// weight, cached until the weight changes.
template <typename S>
class BoxedDense {
public:
    void forward(Dense<S>& dense, const BoxedTensor<S>& prefix, const Tensor<S>* suffix, Tensor<S>& out) {
        const int n = prefix.n;
        const Shape ps = prefix.shape;
        const int lp = static_cast<int>(ps.size());
        const int ls = suffix ? static_cast<int>(suffix->stride()) : 0;
        const int fin = static_cast<int>(dense.in_shape().c);
        const int fout = static_cast<int>(dense.out_shape().c);
        if (lp + ls != fin) throw ArchitectureError("boxed dense: input width mismatch");
        auto prm = dense.params();
        const Param<S>& W = *prm[0];
        const Param<S>& b = *prm[1];
        refresh_sums(W, ps, fout);

        Box u{std::numeric_limits<int>::max(), std::numeric_limits<int>::min(),
              std::numeric_limits<int>::max(), std::numeric_limits<int>::min()};
        for (const Box& bx : prefix.boxes) {
            if (bx.empty()) continue;
            u = {std::min(u.r0, bx.r0), std::max(u.r1, bx.r1), std::min(u.c0, bx.c0), std::max(u.c1, bx.c1)};
        }
        if (u.empty()) u = {};
        union_ = u;
        // One weight segment per (channel, row) of the union box.
        seg_start_.clear();
        for (int c = 0; c < ps.c; ++c)
            for (int r = u.r0; r < u.r1; ++r) seg_start_.push_back((c * ps.h + r) * ps.w + u.c0);
        n_prefix_idx_ = seg_start_.size() * static_cast<std::size_t>(u.w());
        ls_ = ls;
        const auto m = static_cast<Eigen::Index>(n_prefix_idx_);

        x_.resize(n, m);
        const int per_c = u.h() * u.w();
        for (int s = 0; s < n; ++s)
            for (std::size_t k = 0; k < n_prefix_idx_; ++k) {
                const int c = static_cast<int>(k) / std::max(per_c, 1);
                const int rem = static_cast<int>(k) - c * per_c;
                const int r = u.r0 + rem / u.w(), col = u.c0 + rem % u.w();
                x_(s, static_cast<Eigen::Index>(k)) = prefix.get(s, c, r, col) - prefix.out(s, c);
            }
        k_.resize(n, ps.c);
        for (int s = 0; s < n; ++s)
            for (int c = 0; c < ps.c; ++c) k_(s, c) = prefix.out(s, c);

        out.resize(n, Shape{fout, 1, 1});
        Eigen::Map<RowMat<S>> y(out.data.data(), n, fout);
        y.noalias() = k_ * sums_.transpose();
        const int uw = u.w();
        for (std::size_t j = 0; j < seg_start_.size(); ++j)
            y.noalias() += x_.middleCols(static_cast<Eigen::Index>(j) * uw, uw) *
                           Strided(W.value.data() + seg_start_[j], fout, uw, Eigen::OuterStride<>(fin)).transpose();
        if (ls) {
            suffix_ = suffix->data;
            Eigen::Map<const RowMat<S>> xs(suffix_.data(), n, ls);
            y.noalias() += xs * w_suffix(W.value.data(), fin, fout, lp, ls).transpose();
        }
        Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> bias(b.value.data(), fout);
        y.rowwise() += bias;
        prefix_boxes_ = prefix.boxes;
        prefix_shape_ = ps;
        n_ = n;
    }

    void backward(Dense<S>& dense, const Tensor<S>& dout, BoxedTensor<S>* dprefix, Tensor<S>* dsuffix) {
        if (dout.n != n_) throw StateError("boxed dense: backward batch differs from forward batch");
        const Shape ps = prefix_shape_;
        const int hw = ps.h * ps.w;
        const int fin = static_cast<int>(dense.in_shape().c);
        const int fout = static_cast<int>(dense.out_shape().c);
        auto prm = dense.params();
        Param<S>& W = *prm[0];
        Param<S>& b = *prm[1];
        Eigen::Map<const RowMat<S>> dy(dout.data.data(), n_, fout);

        const RowMat<S> g = dy.transpose() * k_;  // fout x C
        for (int o = 0; o < fout; ++o) {
            S* row = W.grad.data() + static_cast<std::size_t>(o) * fin;
            for (int c = 0; c < ps.c; ++c) {
                const S v = g(o, c);
                if (v == S(0)) continue;
                S* seg = row + static_cast<std::size_t>(c) * hw;
                for (int p = 0; p < hw; ++p) seg[p] += v;
            }
        }
        const int uw = union_.w();
        for (std::size_t j = 0; j < seg_start_.size(); ++j)
            StridedMut(W.grad.data() + seg_start_[j], fout, uw, Eigen::OuterStride<>(fin)).noalias() +=
                dy.transpose() * x_.middleCols(static_cast<Eigen::Index>(j) * uw, uw);
        for (int o = 0; o < fout; ++o) b.grad[o] += dy.col(o).sum();

        if (ls_) {
            Eigen::Map<const RowMat<S>> xs(suffix_.data(), n_, ls_);
            auto gs = w_suffix_mut(W.grad.data(), fin, fout, static_cast<int>(ps.size()), ls_);
            gs.noalias() += dy.transpose() * xs;
        }

        if (!dprefix && !dsuffix) return;
        if (dprefix) {
            RowMat<S> dx(n_, static_cast<Eigen::Index>(n_prefix_idx_));
            for (std::size_t j = 0; j < seg_start_.size(); ++j)
                dx.middleCols(static_cast<Eigen::Index>(j) * uw, uw).noalias() =
                    dy * Strided(W.value.data() + seg_start_[j], fout, uw, Eigen::OuterStride<>(fin));
            dprefix->allocate(n_, ps, prefix_boxes_);
            const RowMat<S> ds = dy * sums_;  // n x C
            const Box& u = union_;
            const int per_c = u.h() * u.w();
            for (int s = 0; s < n_; ++s) {
                const Box& bx = prefix_boxes_[s];
                for (int c = 0; c < ps.c; ++c) dprefix->out(s, c) = ds(s, c);
                for (std::size_t k = 0; k < n_prefix_idx_; ++k) {
                    const int c = static_cast<int>(k) / std::max(per_c, 1);
                    const int rem = static_cast<int>(k) - c * per_c;
                    const int r = u.r0 + rem / u.w(), col = u.c0 + rem % u.w();
                    if (!bx.contains(r, col)) continue;
                    const S v = dx(s, static_cast<Eigen::Index>(k));
                    dprefix->block(s)[dprefix->local(s, c, r, col)] = v;
                    dprefix->out(s, c) -= v;
                }
            }
        }
        if (dsuffix) {
            dsuffix->resize(n_, Shape{ls_, 1, 1});
            if (ls_) {
                Eigen::Map<RowMat<S>> dxs(dsuffix->data.data(), n_, ls_);
                dxs.noalias() = dy * w_suffix(W.value.data(), fin, fout, static_cast<int>(ps.size()), ls_);
            }
        }
    }

private:
    using Strided = Eigen::Map<const RowMat<S>, 0, Eigen::OuterStride<>>;
    using StridedMut = Eigen::Map<RowMat<S>, 0, Eigen::OuterStride<>>;
    // Columns [lp, lp + ls) of the fout x fin weight, without copying.
    static Strided w_suffix(const S* w, int fin, int fout, int lp, int ls) {
        return Strided(w + lp, fout, ls, Eigen::OuterStride<>(fin));
    }
    static StridedMut w_suffix_mut(S* w, int fin, int fout, int lp, int ls) {
        return StridedMut(w + lp, fout, ls, Eigen::OuterStride<>(fin));
    }

    void refresh_sums(const Param<S>& W, Shape ps, int fout) {
        if (sums_ready_ && sums_version_ == W.version && sums_.rows() == fout && sums_.cols() == ps.c) return;
        const int hw = ps.h * ps.w;
        const std::size_t fin = W.value.size() / static_cast<std::size_t>(fout);
        sums_.resize(fout, ps.c);
        for (int o = 0; o < fout; ++o)
            for (int c = 0; c < ps.c; ++c) {
                const S* seg = W.value.data() + o * fin + static_cast<std::size_t>(c) * hw;
                S acc = 0;
                for (int p = 0; p < hw; ++p) acc += seg[p];
                sums_(o, c) = acc;
            }
        sums_version_ = W.version;
        sums_ready_ = true;
    }

    RowMat<S> sums_;  // fout x C
    std::uint64_t sums_version_ = 0;
    bool sums_ready_ = false;
    Box union_;
    std::vector<std::size_t> seg_start_;
    std::size_t n_prefix_idx_ = 0;
    int ls_ = 0;
    Buffer<S> suffix_;
    RowMat<S> x_, k_;
    std::vector<Box> prefix_boxes_;
    Shape prefix_shape_;
    int n_ = -1;
};

}  // namespace ridgeplan::nn
