#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "offroad/interp.hpp"
#include "offroad/nn/tensor.hpp"
#include "offroad/rng.hpp"

// Layers with explicit forward/backward. Each layer caches what its backward
// pass needs from the most recent forward call, so a layer instance serves a
// single forward/backward stream at a time.

namespace offroad::nn {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

enum class PadMode { zeros, replicate };

/// Kaiming-uniform weights for ReLU networks.
template <class T>
void init_kaiming_uniform(Param<T>& p, int fan_in, RngStream& rng) {
    const double bound = std::sqrt(6.0 / fan_in);
    for (auto& v : p.value) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <class T>
void init_normal(Param<T>& p, double stddev, RngStream& rng) {
    for (auto& v : p.value) v = static_cast<T>(stddev * rng.normal());
}

/// 2-D convolution, square kernel, implemented as im2col + GEMM.
template <class T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(const std::string& name, int in_ch, int out_ch, int kernel, int stride, PadMode pad_mode,
           bool bias)
        : in_(in_ch), out_(out_ch), k_(kernel), stride_(stride), pad_(kernel / 2), mode_(pad_mode),
          weight_(name + ".weight", {out_ch, in_ch, kernel, kernel}) {
        if (bias) bias_.emplace(name + ".bias", std::vector<int>{out_ch});
    }

    int in_channels() const { return in_; }
    int out_channels() const { return out_; }

    void init(RngStream& rng) {
        init_kaiming_uniform(weight_, in_ * k_ * k_, rng);
        if (bias_) std::fill(bias_->value.begin(), bias_->value.end(), T(0));
    }
    void init_normal_weights(double stddev, RngStream& rng) {
        init_normal(weight_, stddev, rng);
        if (bias_) std::fill(bias_->value.begin(), bias_->value.end(), T(0));
    }

    template <class F>
    void visit(F&& f) {
        f(weight_);
        if (bias_) f(*bias_);
    }

    int out_size(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

    Tensor<T> forward(const Tensor<T>& x) {
        if (x.c != in_)
            throw ShapeError(weight_.name + ": expected " + std::to_string(in_) + " input channels, got " +
                             std::to_string(x.c));
        input_ = x;
        const int ho = out_size(x.h), wo = out_size(x.w);
        Tensor<T> y(x.n, out_, ho, wo);
        const int K = in_ * k_ * k_;
        const int P = ho * wo;
        col_.resize(static_cast<std::size_t>(K) * P);
        ConstMatMap<T> W(weight_.value.data(), out_, K);
        for (int ni = 0; ni < x.n; ++ni) {
            im2col(x.image(ni), x.h, x.w, ho, wo);
            MatMap<T> Y(y.image(ni), out_, P);
            Y.noalias() = W * ConstMatMap<T>(col_.data(), K, P);
            if (bias_)
                for (int o = 0; o < out_; ++o) Y.row(o).array() += bias_->value[static_cast<std::size_t>(o)];
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const Tensor<T>& x = input_;
        const int ho = out_size(x.h), wo = out_size(x.w);
        if (dy.n != x.n || dy.c != out_ || dy.h != ho || dy.w != wo)
            throw ShapeError(weight_.name + ": gradient shape mismatch " + dy.shape_string());
        Tensor<T> dx(x.n, x.c, x.h, x.w);
        const int K = in_ * k_ * k_;
        const int P = ho * wo;
        col_.resize(static_cast<std::size_t>(K) * P);
        dcol_.resize(static_cast<std::size_t>(K) * P);
        ConstMatMap<T> W(weight_.value.data(), out_, K);
        MatMap<T> dW(weight_.grad.data(), out_, K);
        for (int ni = 0; ni < x.n; ++ni) {
            im2col(x.image(ni), x.h, x.w, ho, wo);
            ConstMatMap<T> dY(dy.image(ni), out_, P);
            dW.noalias() += dY * ConstMatMap<T>(col_.data(), K, P).transpose();
            if (bias_)
                for (int o = 0; o < out_; ++o) bias_->grad[static_cast<std::size_t>(o)] += dY.row(o).sum();
            MatMap<T>(dcol_.data(), K, P).noalias() = W.transpose() * dY;
            col2im(dx.image(ni), x.h, x.w, ho, wo);
        }
        return dx;
    }

private:
    // Source coordinate for a padded position, or -1 for a zero pad.
    int source(int v, int extent) const {
        if (v >= 0 && v < extent) return v;
        return mode_ == PadMode::replicate ? std::clamp(v, 0, extent - 1) : -1;
    }

    void im2col(const T* img, int h, int w, int ho, int wo) {
        T* dst = col_.data();
        for (int ci = 0; ci < in_; ++ci) {
            const T* plane = img + static_cast<std::size_t>(ci) * h * w;
            for (int ky = 0; ky < k_; ++ky)
                for (int kx = 0; kx < k_; ++kx)
                    for (int oy = 0; oy < ho; ++oy) {
                        const int sy = source(oy * stride_ - pad_ + ky, h);
                        for (int ox = 0; ox < wo; ++ox) {
                            const int sx = source(ox * stride_ - pad_ + kx, w);
                            *dst++ = (sy < 0 || sx < 0) ? T(0) : plane[static_cast<std::size_t>(sy) * w + sx];
                        }
                    }
        }
    }

    void col2im(T* img, int h, int w, int ho, int wo) const {
        const T* src = dcol_.data();
        for (int ci = 0; ci < in_; ++ci) {
            T* plane = img + static_cast<std::size_t>(ci) * h * w;
            for (int ky = 0; ky < k_; ++ky)
                for (int kx = 0; kx < k_; ++kx)
                    for (int oy = 0; oy < ho; ++oy) {
                        const int sy = source(oy * stride_ - pad_ + ky, h);
                        for (int ox = 0; ox < wo; ++ox, ++src) {
                            const int sx = source(ox * stride_ - pad_ + kx, w);
                            if (sy >= 0 && sx >= 0) plane[static_cast<std::size_t>(sy) * w + sx] += *src;
                        }
                    }
        }
    }

    int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
    PadMode mode_ = PadMode::zeros;
    Param<T> weight_;
    std::optional<Param<T>> bias_;
    Tensor<T> input_;
    std::vector<T> col_, dcol_;
};

/// Group normalization with per-channel affine parameters.
template <class T>
class GroupNorm {
public:
    GroupNorm() = default;
    GroupNorm(const std::string& name, int channels, int groups, double eps = 1e-5)
        : channels_(channels), groups_(groups), eps_(eps),
          gamma_(name + ".weight", {channels}), beta_(name + ".bias", {channels}) {
        if (groups <= 0 || channels % groups != 0)
            throw ShapeError(name + ": " + std::to_string(channels) + " channels not divisible into " +
                             std::to_string(groups) + " groups");
        std::fill(gamma_.value.begin(), gamma_.value.end(), T(1));
    }

    template <class F>
    void visit(F&& f) {
        f(gamma_);
        f(beta_);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        if (x.c != channels_) throw ShapeError(gamma_.name + ": channel mismatch");
        const int cpg = channels_ / groups_;
        const std::size_t m = static_cast<std::size_t>(cpg) * x.plane();
        xhat_ = Tensor<T>(x.n, x.c, x.h, x.w);
        inv_std_.assign(static_cast<std::size_t>(x.n) * groups_, T(0));
        Tensor<T> y(x.n, x.c, x.h, x.w);
        for (int ni = 0; ni < x.n; ++ni)
            for (int g = 0; g < groups_; ++g) {
                const std::size_t off = static_cast<std::size_t>(ni) * x.image_size() + g * m;
                const T* src = x.data.data() + off;
                double mean = 0.0;
                for (std::size_t i = 0; i < m; ++i) mean += src[i];
                mean /= static_cast<double>(m);
                double var = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    const double d = src[i] - mean;
                    var += d * d;
                }
                var /= static_cast<double>(m);
                const double inv = 1.0 / std::sqrt(var + eps_);
                inv_std_[static_cast<std::size_t>(ni) * groups_ + g] = static_cast<T>(inv);
                T* xh = xhat_.data.data() + off;
                T* dst = y.data.data() + off;
                for (int cc = 0; cc < cpg; ++cc) {
                    const int ch = g * cpg + cc;
                    const T ga = gamma_.value[static_cast<std::size_t>(ch)];
                    const T be = beta_.value[static_cast<std::size_t>(ch)];
                    for (std::size_t p = 0; p < x.plane(); ++p) {
                        const std::size_t i = cc * x.plane() + p;
                        xh[i] = static_cast<T>((src[i] - mean) * inv);
                        dst[i] = ga * xh[i] + be;
                    }
                }
            }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        require_same_shape(dy, xhat_, "GroupNorm backward");
        const int cpg = channels_ / groups_;
        const std::size_t plane = dy.plane();
        const std::size_t m = static_cast<std::size_t>(cpg) * plane;
        Tensor<T> dx(dy.n, dy.c, dy.h, dy.w);
        for (int ni = 0; ni < dy.n; ++ni)
            for (int g = 0; g < groups_; ++g) {
                const std::size_t off = static_cast<std::size_t>(ni) * dy.image_size() + g * m;
                const T* d = dy.data.data() + off;
                const T* xh = xhat_.data.data() + off;
                double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                for (int cc = 0; cc < cpg; ++cc) {
                    const std::size_t ch = static_cast<std::size_t>(g * cpg + cc);
                    const double ga = gamma_.value[ch];
                    double gsum = 0.0, bsum = 0.0;
                    for (std::size_t p = 0; p < plane; ++p) {
                        const std::size_t i = cc * plane + p;
                        gsum += static_cast<double>(d[i]) * xh[i];
                        bsum += d[i];
                        const double dxh = d[i] * ga;
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[i];
                    }
                    gamma_.grad[ch] += static_cast<T>(gsum);
                    beta_.grad[ch] += static_cast<T>(bsum);
                }
                const double inv = inv_std_[static_cast<std::size_t>(ni) * groups_ + g];
                const double mm = static_cast<double>(m);
                T* out = dx.data.data() + off;
                for (int cc = 0; cc < cpg; ++cc) {
                    const double ga = gamma_.value[static_cast<std::size_t>(g * cpg + cc)];
                    for (std::size_t p = 0; p < plane; ++p) {
                        const std::size_t i = cc * plane + p;
                        const double dxh = d[i] * ga;
                        out[i] = static_cast<T>(inv / mm * (mm * dxh - sum_dxh - xh[i] * sum_dxh_xh));
                    }
                }
            }
        return dx;
    }

private:
    int channels_ = 0, groups_ = 1;
    double eps_ = 1e-5;
    Param<T> gamma_, beta_;
    Tensor<T> xhat_;
    std::vector<T> inv_std_;
};

template <class T>
class Relu {
public:
    Tensor<T> forward(const Tensor<T>& x) {
        Tensor<T> y = x;
        mask_.assign(x.size(), 0);
        for (std::size_t i = 0; i < y.size(); ++i) {
            if (y.data[i] > T(0))
                mask_[i] = 1;
            else
                y.data[i] = T(0);
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dx = dy;
        for (std::size_t i = 0; i < dx.size(); ++i)
            if (!mask_[i]) dx.data[i] = T(0);
        return dx;
    }

private:
    std::vector<unsigned char> mask_;
};

enum class NormKind { group, none };

/// Convolution followed by optional group norm and ReLU. The convolution
/// carries a bias only when no normalization follows it.
template <class T>
class ConvNormAct {
public:
    ConvNormAct() = default;
    ConvNormAct(const std::string& name, int in_ch, int out_ch, int kernel, int stride, PadMode pad,
                NormKind norm, int groups, bool relu = true)
        : conv_(name + ".conv", in_ch, out_ch, kernel, stride, pad, norm == NormKind::none),
          relu_enabled_(relu) {
        if (norm == NormKind::group) norm_.emplace(name + ".gn", out_ch, std::min(groups, out_ch));
    }

    void init(RngStream& rng) { conv_.init(rng); }

    template <class F>
    void visit(F&& f) {
        conv_.visit(f);
        if (norm_) norm_->visit(f);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        Tensor<T> y = conv_.forward(x);
        if (norm_) y = norm_->forward(y);
        if (relu_enabled_) y = relu_.forward(y);
        return y;
    }

    Tensor<T> backward(Tensor<T> dy) {
        if (relu_enabled_) dy = relu_.backward(dy);
        if (norm_) dy = norm_->backward(dy);
        return conv_.backward(dy);
    }

    int out_size(int in) const { return conv_.out_size(in); }

private:
    Conv2d<T> conv_;
    std::optional<GroupNorm<T>> norm_;
    Relu<T> relu_;
    bool relu_enabled_ = true;
};

/// Bilinear resize of every channel (half-pixel centers, no corner alignment).
template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& x, int h, int w) {
    if (x.h == h && x.w == w) return x;
    const auto ty = linear_taps(x.h, h);
    const auto tx = linear_taps(x.w, w);
    Tensor<T> y(x.n, x.c, h, w);
    for (int ni = 0; ni < x.n; ++ni)
        for (int ci = 0; ci < x.c; ++ci)
            for (int oy = 0; oy < h; ++oy) {
                const auto& a = ty[static_cast<std::size_t>(oy)];
                const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
                for (int ox = 0; ox < w; ++ox) {
                    const auto& b = tx[static_cast<std::size_t>(ox)];
                    const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
                    y.at(ni, ci, oy, ox) = wy0 * (wx0 * x.at(ni, ci, a.i0, b.i0) + wx1 * x.at(ni, ci, a.i0, b.i1)) +
                                           wy1 * (wx0 * x.at(ni, ci, a.i1, b.i0) + wx1 * x.at(ni, ci, a.i1, b.i1));
                }
            }
    return y;
}

/// Adjoint of resize_bilinear: scatter `dy` back onto an (in_h, in_w) grid.
template <class T>
Tensor<T> resize_bilinear_backward(const Tensor<T>& dy, int in_h, int in_w) {
    if (dy.h == in_h && dy.w == in_w) return dy;
    const auto ty = linear_taps(in_h, dy.h);
    const auto tx = linear_taps(in_w, dy.w);
    Tensor<T> dx(dy.n, dy.c, in_h, in_w);
    for (int ni = 0; ni < dy.n; ++ni)
        for (int ci = 0; ci < dy.c; ++ci)
            for (int oy = 0; oy < dy.h; ++oy) {
                const auto& a = ty[static_cast<std::size_t>(oy)];
                const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
                for (int ox = 0; ox < dy.w; ++ox) {
                    const auto& b = tx[static_cast<std::size_t>(ox)];
                    const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
                    const T g = dy.at(ni, ci, oy, ox);
                    dx.at(ni, ci, a.i0, b.i0) += wy0 * wx0 * g;
                    dx.at(ni, ci, a.i0, b.i1) += wy0 * wx1 * g;
                    dx.at(ni, ci, a.i1, b.i0) += wy1 * wx0 * g;
                    dx.at(ni, ci, a.i1, b.i1) += wy1 * wx1 * g;
                }
            }
    return dx;
}

namespace detail {
// Bin b of `bins` over an extent covers [floor(b*n/bins), ceil((b+1)*n/bins)).
inline int bin_start(int b, int n, int bins) { return (b * n) / bins; }
inline int bin_end(int b, int n, int bins) { return ((b + 1) * n + bins - 1) / bins; }
}  // namespace detail

/// Average pooling onto a bins x bins grid.
template <class T>
Tensor<T> adaptive_avg_pool(const Tensor<T>& x, int bins) {
    Tensor<T> y(x.n, x.c, bins, bins);
    for (int ni = 0; ni < x.n; ++ni)
        for (int ci = 0; ci < x.c; ++ci)
            for (int by = 0; by < bins; ++by) {
                const int y0 = detail::bin_start(by, x.h, bins), y1 = detail::bin_end(by, x.h, bins);
                for (int bx = 0; bx < bins; ++bx) {
                    const int x0 = detail::bin_start(bx, x.w, bins), x1 = detail::bin_end(bx, x.w, bins);
                    double s = 0.0;
                    for (int yy = y0; yy < y1; ++yy)
                        for (int xx = x0; xx < x1; ++xx) s += x.at(ni, ci, yy, xx);
                    y.at(ni, ci, by, bx) = static_cast<T>(s / ((y1 - y0) * (x1 - x0)));
                }
            }
    return y;
}

template <class T>
Tensor<T> adaptive_avg_pool_backward(const Tensor<T>& dy, int in_h, int in_w) {
    const int bins = dy.h;
    Tensor<T> dx(dy.n, dy.c, in_h, in_w);
    for (int ni = 0; ni < dy.n; ++ni)
        for (int ci = 0; ci < dy.c; ++ci)
            for (int by = 0; by < bins; ++by) {
                const int y0 = detail::bin_start(by, in_h, bins), y1 = detail::bin_end(by, in_h, bins);
                for (int bx = 0; bx < bins; ++bx) {
                    const int x0 = detail::bin_start(bx, in_w, bins), x1 = detail::bin_end(bx, in_w, bins);
                    const T g = dy.at(ni, ci, by, bx) / static_cast<T>((y1 - y0) * (x1 - x0));
                    for (int yy = y0; yy < y1; ++yy)
                        for (int xx = x0; xx < x1; ++xx) dx.at(ni, ci, yy, xx) += g;
                }
            }
    return dx;
}

/// Concatenate along the channel axis; all parts share N, H, W.
template <class T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
    if (parts.empty()) throw ShapeError("concat of nothing");
    const Tensor<T>& f = *parts.front();
    int c = 0;
    for (const auto* p : parts) {
        if (p->n != f.n || p->h != f.h || p->w != f.w) throw ShapeError("concat spatial mismatch");
        c += p->c;
    }
    Tensor<T> y(f.n, c, f.h, f.w);
    for (int ni = 0; ni < f.n; ++ni) {
        T* dst = y.image(ni);
        for (const auto* p : parts) dst = std::copy(p->image(ni), p->image(ni) + p->image_size(), dst);
    }
    return y;
}

/// Split a channel-concatenated gradient back into parts of the given widths.
template <class T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& dy, const std::vector<int>& widths) {
    std::vector<Tensor<T>> out;
    out.reserve(widths.size());
    for (int wdt : widths) out.emplace_back(dy.n, wdt, dy.h, dy.w);
    for (int ni = 0; ni < dy.n; ++ni) {
        const T* src = dy.image(ni);
        for (auto& t : out) {
            std::copy(src, src + t.image_size(), t.image(ni));
            src += t.image_size();
        }
    }
    return out;
}

template <class T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "add");
    for (std::size_t i = 0; i < a.size(); ++i) a.data[i] += b.data[i];
}

}  // namespace offroad::nn
