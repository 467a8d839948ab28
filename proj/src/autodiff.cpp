#include "pseudoseg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace pseudoseg::ad {

NodePtr Tape::leaf(Tensor value) {
    auto n = std::make_shared<Node>();
    n->grad = Tensor(value.shape);
    n->value = std::move(value);
    n->requires_grad = true;
    nodes_.push_back(n);
    return n;
}

NodePtr Tape::constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    nodes_.push_back(n);
    return n;
}

NodePtr Tape::make(Tensor value, std::vector<NodePtr> parents, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad;
    n->requires_grad = any;
    if (any) n->grad = Tensor(value.shape);
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->backward_fn = std::move(bw);
    nodes_.push_back(n);
    return n;
}

void Tape::backward(const NodePtr& root) {
    if (root->value.numel() != 1) throw std::logic_error("backward: root must be scalar");
    if (!root->requires_grad) return;
    root->grad.data[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& n = **it;
        if (n.requires_grad && n.backward_fn) n.backward_fn(n);
    }
}

namespace kernels {

Tensor conv2d_fwd(const Tensor& x, const Tensor& w, const Tensor& b) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int OC = w.dim(0), K = w.dim(2);
    if (w.dim(1) != C || w.dim(3) != K || b.dim(0) != OC || K % 2 == 0)
        throw std::invalid_argument("conv2d: bad weight shape");
    const int P = K / 2;
    Tensor y({B, OC, H, W});
    const size_t xs = static_cast<size_t>(H) * W;
    for (int n = 0; n < B; ++n)
        for (int oc = 0; oc < OC; ++oc) {
            double* yo = &y.data[(static_cast<size_t>(n) * OC + oc) * xs];
            for (size_t i = 0; i < xs; ++i) yo[i] = b.data[oc];
            for (int c = 0; c < C; ++c) {
                const double* xi = &x.data[(static_cast<size_t>(n) * C + c) * xs];
                const double* wk = &w.data[((static_cast<size_t>(oc) * C + c) * K) * K];
                for (int ky = 0; ky < K; ++ky)
                    for (int kx = 0; kx < K; ++kx) {
                        const double wv = wk[ky * K + kx];
                        if (wv == 0.0) continue;
                        const int dy = ky - P, dx = kx - P;
                        const int r0 = std::max(0, -dy), r1 = std::min(H, H - dy);
                        const int c0 = std::max(0, -dx), c1 = std::min(W, W - dx);
                        for (int r = r0; r < r1; ++r) {
                            double* yr = yo + static_cast<size_t>(r) * W;
                            const double* xr = xi + static_cast<size_t>(r + dy) * W + dx;
                            for (int cc = c0; cc < c1; ++cc) yr[cc] += wv * xr[cc];
                        }
                    }
            }
        }
    return y;
}

Tensor group_norm_fwd(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups,
                      double eps) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (C % groups != 0 || gamma.dim(0) != C || beta.dim(0) != C)
        throw std::invalid_argument("group_norm: bad shapes");
    const int cpg = C / groups;
    const size_t hw = static_cast<size_t>(H) * W;
    const size_t gsz = static_cast<size_t>(cpg) * hw;
    Tensor y(x.shape);
    for (int n = 0; n < B; ++n)
        for (int g = 0; g < groups; ++g) {
            const double* xg = &x.data[(static_cast<size_t>(n) * C + g * cpg) * hw];
            double* yg = &y.data[(static_cast<size_t>(n) * C + g * cpg) * hw];
            double mean = 0.0;
            for (size_t i = 0; i < gsz; ++i) mean += xg[i];
            mean /= static_cast<double>(gsz);
            double var = 0.0;
            for (size_t i = 0; i < gsz; ++i) {
                double d = xg[i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(gsz);
            double inv = 1.0 / std::sqrt(var + eps);
            for (int c = 0; c < cpg; ++c) {
                double ga = gamma.data[g * cpg + c], be = beta.data[g * cpg + c];
                for (size_t i = 0; i < hw; ++i)
                    yg[c * hw + i] = ga * (xg[c * hw + i] - mean) * inv + be;
            }
        }
    return y;
}

Tensor relu_fwd(const Tensor& x) {
    Tensor y(x.shape);
    for (size_t i = 0; i < x.numel(); ++i) y.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
    return y;
}

Tensor sigmoid_fwd(const Tensor& x) {
    Tensor y(x.shape);
    for (size_t i = 0; i < x.numel(); ++i) y.data[i] = 1.0 / (1.0 + std::exp(-x.data[i]));
    return y;
}

Tensor avg_pool2_fwd(const Tensor& x) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 || W % 2) throw std::invalid_argument("avg_pool2: dims must be even");
    Tensor y({B, C, H / 2, W / 2});
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c) {
            const double* xi = &x.data[(static_cast<size_t>(n) * C + c) * H * W];
            double* yo = &y.data[(static_cast<size_t>(n) * C + c) * (H / 2) * (W / 2)];
            for (int r = 0; r < H / 2; ++r)
                for (int cc = 0; cc < W / 2; ++cc)
                    yo[r * (W / 2) + cc] = 0.25 * (xi[(2 * r) * W + 2 * cc] +
                                                   xi[(2 * r) * W + 2 * cc + 1] +
                                                   xi[(2 * r + 1) * W + 2 * cc] +
                                                   xi[(2 * r + 1) * W + 2 * cc + 1]);
        }
    return y;
}

Tensor upsample2_fwd(const Tensor& x) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor y({B, C, H * 2, W * 2});
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c) {
            const double* xi = &x.data[(static_cast<size_t>(n) * C + c) * H * W];
            double* yo = &y.data[(static_cast<size_t>(n) * C + c) * 4 * H * W];
            for (int r = 0; r < 2 * H; ++r)
                for (int cc = 0; cc < 2 * W; ++cc)
                    yo[r * 2 * W + cc] = xi[(r / 2) * W + cc / 2];
        }
    return y;
}

Tensor concat_channels_fwd(const Tensor& a, const Tensor& b) {
    const int B = a.dim(0), Ca = a.dim(1), H = a.dim(2), W = a.dim(3);
    const int Cb = b.dim(1);
    if (b.dim(0) != B || b.dim(2) != H || b.dim(3) != W)
        throw std::invalid_argument("concat_channels: shape mismatch");
    Tensor y({B, Ca + Cb, H, W});
    const size_t hw = static_cast<size_t>(H) * W;
    for (int n = 0; n < B; ++n) {
        std::memcpy(&y.data[static_cast<size_t>(n) * (Ca + Cb) * hw],
                    &a.data[static_cast<size_t>(n) * Ca * hw], Ca * hw * sizeof(double));
        std::memcpy(&y.data[(static_cast<size_t>(n) * (Ca + Cb) + Ca) * hw],
                    &b.data[static_cast<size_t>(n) * Cb * hw], Cb * hw * sizeof(double));
    }
    return y;
}

}  // namespace kernels

NodePtr conv2d(Tape& t, const NodePtr& x, const NodePtr& w, const NodePtr& b) {
    Tensor y = kernels::conv2d_fwd(x->value, w->value, b->value);
    return t.make(std::move(y), {x, w, b}, [x, w, b](Node& n) {
        const Tensor& xv = x->value;
        const Tensor& wv = w->value;
        const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
        const int OC = wv.dim(0), K = wv.dim(2), P = K / 2;
        const size_t hw = static_cast<size_t>(H) * W;
        for (int nb = 0; nb < B; ++nb)
            for (int oc = 0; oc < OC; ++oc) {
                const double* go = &n.grad.data[(static_cast<size_t>(nb) * OC + oc) * hw];
                if (b->requires_grad) {
                    double s = 0.0;
                    for (size_t i = 0; i < hw; ++i) s += go[i];
                    b->grad.data[oc] += s;
                }
                for (int c = 0; c < C; ++c) {
                    const double* xi = &xv.data[(static_cast<size_t>(nb) * C + c) * hw];
                    double* gx = x->requires_grad
                                     ? &x->grad.data[(static_cast<size_t>(nb) * C + c) * hw]
                                     : nullptr;
                    const double* wk = &wv.data[((static_cast<size_t>(oc) * C + c) * K) * K];
                    double* gw = w->requires_grad
                                     ? &w->grad.data[((static_cast<size_t>(oc) * C + c) * K) * K]
                                     : nullptr;
                    for (int ky = 0; ky < K; ++ky)
                        for (int kx = 0; kx < K; ++kx) {
                            const int dy = ky - P, dx = kx - P;
                            const int r0 = std::max(0, -dy), r1 = std::min(H, H - dy);
                            const int c0 = std::max(0, -dx), c1 = std::min(W, W - dx);
                            double wsum = 0.0;
                            const double wvv = wk[ky * K + kx];
                            for (int r = r0; r < r1; ++r) {
                                const double* gr = go + static_cast<size_t>(r) * W;
                                const double* xr = xi + static_cast<size_t>(r + dy) * W + dx;
                                if (gx) {
                                    double* gxr = gx + static_cast<size_t>(r + dy) * W + dx;
                                    for (int cc = c0; cc < c1; ++cc) {
                                        wsum += gr[cc] * xr[cc];
                                        gxr[cc] += gr[cc] * wvv;
                                    }
                                } else {
                                    for (int cc = c0; cc < c1; ++cc) wsum += gr[cc] * xr[cc];
                                }
                            }
                            if (gw) gw[ky * K + kx] += wsum;
                        }
                }
            }
    });
}

NodePtr group_norm(Tape& t, const NodePtr& x, const NodePtr& gamma, const NodePtr& beta, int groups,
                   double eps) {
    Tensor y = kernels::group_norm_fwd(x->value, gamma->value, beta->value, groups, eps);
    return t.make(std::move(y), {x, gamma, beta}, [x, gamma, beta, groups, eps](Node& n) {
        const Tensor& xv = x->value;
        const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
        const int cpg = C / groups;
        const size_t hw = static_cast<size_t>(H) * W;
        const size_t gsz = static_cast<size_t>(cpg) * hw;
        for (int nb = 0; nb < B; ++nb)
            for (int g = 0; g < groups; ++g) {
                const size_t base = (static_cast<size_t>(nb) * C + g * cpg) * hw;
                const double* xg = &xv.data[base];
                const double* gy = &n.grad.data[base];
                double mean = 0.0;
                for (size_t i = 0; i < gsz; ++i) mean += xg[i];
                mean /= static_cast<double>(gsz);
                double var = 0.0;
                for (size_t i = 0; i < gsz; ++i) {
                    double d = xg[i] - mean;
                    var += d * d;
                }
                var /= static_cast<double>(gsz);
                const double inv = 1.0 / std::sqrt(var + eps);

                // dL/dxhat, plus its group means needed for dL/dx
                double m1 = 0.0, m2 = 0.0;
                for (int c = 0; c < cpg; ++c) {
                    const double ga = gamma->value.data[g * cpg + c];
                    for (size_t i = 0; i < hw; ++i) {
                        const double xhat = (xg[c * hw + i] - mean) * inv;
                        const double dxh = gy[c * hw + i] * ga;
                        m1 += dxh;
                        m2 += dxh * xhat;
                    }
                }
                m1 /= static_cast<double>(gsz);
                m2 /= static_cast<double>(gsz);
                for (int c = 0; c < cpg; ++c) {
                    const double ga = gamma->value.data[g * cpg + c];
                    double dga = 0.0, dbe = 0.0;
                    for (size_t i = 0; i < hw; ++i) {
                        const double xhat = (xg[c * hw + i] - mean) * inv;
                        const double gyv = gy[c * hw + i];
                        dga += gyv * xhat;
                        dbe += gyv;
                        if (x->requires_grad)
                            x->grad.data[base + c * hw + i] +=
                                inv * (gyv * ga - m1 - xhat * m2);
                    }
                    if (gamma->requires_grad) gamma->grad.data[g * cpg + c] += dga;
                    if (beta->requires_grad) beta->grad.data[g * cpg + c] += dbe;
                }
            }
    });
}

NodePtr relu(Tape& t, const NodePtr& x) {
    Tensor y = kernels::relu_fwd(x->value);
    return t.make(std::move(y), {x}, [x](Node& n) {
        if (!x->requires_grad) return;
        for (size_t i = 0; i < n.value.numel(); ++i)
            if (x->value.data[i] > 0.0) x->grad.data[i] += n.grad.data[i];
    });
}

NodePtr sigmoid(Tape& t, const NodePtr& x) {
    Tensor y = kernels::sigmoid_fwd(x->value);
    return t.make(std::move(y), {x}, [x](Node& n) {
        if (!x->requires_grad) return;
        for (size_t i = 0; i < n.value.numel(); ++i) {
            const double s = n.value.data[i];
            x->grad.data[i] += n.grad.data[i] * s * (1.0 - s);
        }
    });
}

NodePtr avg_pool2(Tape& t, const NodePtr& x) {
    Tensor y = kernels::avg_pool2_fwd(x->value);
    return t.make(std::move(y), {x}, [x](Node& n) {
        if (!x->requires_grad) return;
        const int B = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2),
                  W = x->value.dim(3);
        for (int nb = 0; nb < B; ++nb)
            for (int c = 0; c < C; ++c) {
                double* gx = &x->grad.data[(static_cast<size_t>(nb) * C + c) * H * W];
                const double* gy =
                    &n.grad.data[(static_cast<size_t>(nb) * C + c) * (H / 2) * (W / 2)];
                for (int r = 0; r < H / 2; ++r)
                    for (int cc = 0; cc < W / 2; ++cc) {
                        const double g = 0.25 * gy[r * (W / 2) + cc];
                        gx[(2 * r) * W + 2 * cc] += g;
                        gx[(2 * r) * W + 2 * cc + 1] += g;
                        gx[(2 * r + 1) * W + 2 * cc] += g;
                        gx[(2 * r + 1) * W + 2 * cc + 1] += g;
                    }
            }
    });
}

NodePtr upsample2(Tape& t, const NodePtr& x) {
    Tensor y = kernels::upsample2_fwd(x->value);
    return t.make(std::move(y), {x}, [x](Node& n) {
        if (!x->requires_grad) return;
        const int B = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2),
                  W = x->value.dim(3);
        for (int nb = 0; nb < B; ++nb)
            for (int c = 0; c < C; ++c) {
                double* gx = &x->grad.data[(static_cast<size_t>(nb) * C + c) * H * W];
                const double* gy = &n.grad.data[(static_cast<size_t>(nb) * C + c) * 4 * H * W];
                for (int r = 0; r < 2 * H; ++r)
                    for (int cc = 0; cc < 2 * W; ++cc)
                        gx[(r / 2) * W + cc / 2] += gy[r * 2 * W + cc];
            }
    });
}

NodePtr concat_channels(Tape& t, const NodePtr& a, const NodePtr& b) {
    Tensor y = kernels::concat_channels_fwd(a->value, b->value);
    return t.make(std::move(y), {a, b}, [a, b](Node& n) {
        const int B = a->value.dim(0), Ca = a->value.dim(1), H = a->value.dim(2),
                  W = a->value.dim(3);
        const int Cb = b->value.dim(1);
        const size_t hw = static_cast<size_t>(H) * W;
        for (int nb = 0; nb < B; ++nb) {
            if (a->requires_grad)
                for (size_t i = 0; i < Ca * hw; ++i)
                    a->grad.data[static_cast<size_t>(nb) * Ca * hw + i] +=
                        n.grad.data[static_cast<size_t>(nb) * (Ca + Cb) * hw + i];
            if (b->requires_grad)
                for (size_t i = 0; i < Cb * hw; ++i)
                    b->grad.data[static_cast<size_t>(nb) * Cb * hw + i] +=
                        n.grad.data[(static_cast<size_t>(nb) * (Ca + Cb) + Ca) * hw + i];
        }
    });
}

NodePtr select_sample(Tape& t, const NodePtr& x, int bidx) {
    const int B = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
    if (bidx < 0 || bidx >= B) throw std::out_of_range("select_sample: index out of range");
    const size_t chw = static_cast<size_t>(C) * H * W;
    Tensor y({C, H, W});
    std::memcpy(y.data.data(), &x->value.data[bidx * chw], chw * sizeof(double));
    return t.make(std::move(y), {x}, [x, bidx, chw](Node& n) {
        if (!x->requires_grad) return;
        for (size_t i = 0; i < chw; ++i) x->grad.data[bidx * chw + i] += n.grad.data[i];
    });
}

NodePtr add(Tape& t, const NodePtr& a, const NodePtr& b) {
    if (!a->value.same_shape(b->value)) throw std::invalid_argument("add: shape mismatch");
    Tensor y(a->value.shape);
    for (size_t i = 0; i < y.numel(); ++i) y.data[i] = a->value.data[i] + b->value.data[i];
    return t.make(std::move(y), {a, b}, [a, b](Node& n) {
        for (size_t i = 0; i < n.value.numel(); ++i) {
            if (a->requires_grad) a->grad.data[i] += n.grad.data[i];
            if (b->requires_grad) b->grad.data[i] += n.grad.data[i];
        }
    });
}

NodePtr scale(Tape& t, const NodePtr& a, double k) {
    Tensor y(a->value.shape);
    for (size_t i = 0; i < y.numel(); ++i) y.data[i] = k * a->value.data[i];
    return t.make(std::move(y), {a}, [a, k](Node& n) {
        if (!a->requires_grad) return;
        for (size_t i = 0; i < n.value.numel(); ++i) a->grad.data[i] += k * n.grad.data[i];
    });
}

}  // namespace pseudoseg::ad
