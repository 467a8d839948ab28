#include "pseudoseg/aurcl.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pseudoseg {

ProbMap confidence_map(const ProbMap& p) {
    ProbMap c = p;
    for (double& v : c.values) v = 1.0 - v;
    return c;
}

double adaptive_threshold(const ProbMap& c, double r, double tau_fix) {
    if (r <= 0.0 || r >= 1.0) throw std::invalid_argument("adaptive_threshold: r must be in (0,1)");
    const size_t n = c.values.size();
    size_t k = static_cast<size_t>(std::llround(r * static_cast<double>(n)));
    k = std::clamp<size_t>(k, 1, n);
    std::vector<double> tmp = c.values;
    std::nth_element(tmp.begin(), tmp.begin() + (k - 1), tmp.end(), std::greater<double>());
    return std::max(tmp[k - 1], tau_fix);
}

BinaryMask low_conf_mask(const ProbMap& c, double tau) {
    BinaryMask m = make_mask(c.height, c.width);
    for (size_t i = 0; i < c.values.size(); ++i) m.pixels[i] = c.values[i] >= tau ? 1 : 0;
    return m;
}

ProbMap reverse_probs(const ProbMap& p, const BinaryMask& m) {
    require_same_shape(p.height, p.width, m.height, m.width, "reverse_probs");
    ProbMap out = p;
    for (size_t i = 0; i < p.values.size(); ++i)
        if (m.pixels[i]) out.values[i] = 1.0 - p.values[i];
    return out;
}

namespace {

struct PatchGrid {
    int H, W, ps, bh, bw, pad_top, pad_left;

    PatchGrid(int h, int w, int patch_size) : H(h), W(w), ps(patch_size) {
        if (ps < 1) throw std::invalid_argument("patch_features: patch_size must be >= 1");
        bh = (H + ps - 1) / ps;
        bw = (W + ps - 1) / ps;
        pad_top = (bh * ps - H) / 2;
        pad_left = (bw * ps - W) / 2;
    }
    int n_patches() const { return bh * bw; }
    // clamped source pixel for slot (dr,dc) of patch (br,bc)
    size_t src(int br, int bc, int dr, int dc) const {
        int r = std::clamp(br * ps + dr - pad_top, 0, H - 1);
        int c = std::clamp(bc * ps + dc - pad_left, 0, W - 1);
        return static_cast<size_t>(r) * W + c;
    }
};

}  // namespace

PatchFeatureSet patch_features(const Tensor& feature_grid, const ProbMap& weights, int patch_size,
                               double eps, FeatureView view) {
    if (feature_grid.shape.size() != 3) throw std::invalid_argument("patch_features: need [D,H,W]");
    const int D = feature_grid.dim(0), H = feature_grid.dim(1), W = feature_grid.dim(2);
    require_same_shape(H, W, weights.height, weights.width, "patch_features");
    PatchGrid pg(H, W, patch_size);
    const size_t hw = static_cast<size_t>(H) * W;

    PatchFeatureSet out;
    out.view = view;
    out.features = Tensor({pg.n_patches(), D});
    for (int br = 0; br < pg.bh; ++br)
        for (int bc = 0; bc < pg.bw; ++bc) {
            const int j = br * pg.bw + bc;
            double wsum = 0.0;
            for (int dr = 0; dr < patch_size; ++dr)
                for (int dc = 0; dc < patch_size; ++dc) {
                    const size_t idx = pg.src(br, bc, dr, dc);
                    const double wv = weights.values[idx];
                    wsum += wv;
                    for (int d = 0; d < D; ++d)
                        out.features.data[static_cast<size_t>(j) * D + d] +=
                            feature_grid.data[d * hw + idx] * wv;
                }
            const double denom = wsum + eps;
            for (int d = 0; d < D; ++d) out.features.data[static_cast<size_t>(j) * D + d] /= denom;
        }
    return out;
}

namespace {

// cosine similarity matrix with a zero-norm floor
void cosine_matrix(const Tensor& f, const Tensor& g, double eps, std::vector<double>& sim,
                   std::vector<double>& nf, std::vector<double>& ng) {
    const int N = f.dim(0), D = f.dim(1);
    nf.resize(N);
    ng.resize(N);
    for (int j = 0; j < N; ++j) {
        double s = 0.0, s2 = 0.0;
        for (int d = 0; d < D; ++d) {
            s += f.data[static_cast<size_t>(j) * D + d] * f.data[static_cast<size_t>(j) * D + d];
            s2 += g.data[static_cast<size_t>(j) * D + d] * g.data[static_cast<size_t>(j) * D + d];
        }
        nf[j] = std::sqrt(s);
        ng[j] = std::sqrt(s2);
    }
    sim.assign(static_cast<size_t>(N) * N, 0.0);
    for (int j = 0; j < N; ++j)
        for (int k = 0; k < N; ++k) {
            if (nf[j] < eps || ng[k] < eps) continue;  // degenerate patch: neutral similarity
            double dot = 0.0;
            for (int d = 0; d < D; ++d)
                dot += f.data[static_cast<size_t>(j) * D + d] * g.data[static_cast<size_t>(k) * D + d];
            sim[static_cast<size_t>(j) * N + k] = dot / (nf[j] * ng[k]);
        }
}

double infonce_value(const Tensor& f, const Tensor& g, double temperature, double eps,
                     std::vector<double>* soft_out = nullptr) {
    if (f.shape != g.shape || f.shape.size() != 2)
        throw std::invalid_argument("infonce: paired [N,D] sets required");
    if (temperature <= 0.0) throw std::invalid_argument("infonce: temperature must be positive");
    const int N = f.dim(0);
    std::vector<double> sim, nf, ng;
    cosine_matrix(f, g, eps, sim, nf, ng);

    double loss = 0.0;
    if (soft_out) soft_out->assign(static_cast<size_t>(N) * N, 0.0);
    for (int j = 0; j < N; ++j) {
        double mx = -1e300;
        for (int k = 0; k < N; ++k) mx = std::max(mx, sim[static_cast<size_t>(j) * N + k]);
        double z = 0.0;
        for (int k = 0; k < N; ++k)
            z += std::exp((sim[static_cast<size_t>(j) * N + k] - mx) / temperature);
        const double lse = mx / temperature + std::log(z);
        loss -= sim[static_cast<size_t>(j) * N + j] / temperature - lse;
        if (soft_out)
            for (int k = 0; k < N; ++k)
                (*soft_out)[static_cast<size_t>(j) * N + k] =
                    std::exp((sim[static_cast<size_t>(j) * N + k] - mx) / temperature) / z;
    }
    return loss / static_cast<double>(N);
}

}  // namespace

double aurcl_loss(const PatchFeatureSet& orig, const PatchFeatureSet& rev, double temperature,
                  double eps) {
    return infonce_value(orig.features, rev.features, temperature, eps);
}

ad::NodePtr reverse_node(ad::Tape& t, const ad::NodePtr& p, const BinaryMask& m) {
    if (p->value.numel() != m.pixels.size())
        throw std::invalid_argument("reverse_node: shape mismatch");
    Tensor y(p->value.shape);
    for (size_t i = 0; i < y.numel(); ++i)
        y.data[i] = m.pixels[i] ? 1.0 - p->value.data[i] : p->value.data[i];
    BinaryMask mc = m;
    return t.make(std::move(y), {p}, [p, mc = std::move(mc)](ad::Node& n) {
        if (!p->requires_grad) return;
        for (size_t i = 0; i < n.value.numel(); ++i)
            p->grad.data[i] += mc.pixels[i] ? -n.grad.data[i] : n.grad.data[i];
    });
}

ad::NodePtr patch_features_node(ad::Tape& t, const ad::NodePtr& f, const ad::NodePtr& w,
                                int patch_size, double eps) {
    const int D = f->value.dim(0), H = f->value.dim(1), W = f->value.dim(2);
    if (w->value.numel() != static_cast<size_t>(H) * W)
        throw std::invalid_argument("patch_features_node: weight numel mismatch");
    PatchGrid pg(H, W, patch_size);
    const size_t hw = static_cast<size_t>(H) * W;
    const int N = pg.n_patches();

    Tensor y({N, D});
    std::vector<double> wsums(N, 0.0);
    for (int br = 0; br < pg.bh; ++br)
        for (int bc = 0; bc < pg.bw; ++bc) {
            const int j = br * pg.bw + bc;
            for (int dr = 0; dr < patch_size; ++dr)
                for (int dc = 0; dc < patch_size; ++dc) {
                    const size_t idx = pg.src(br, bc, dr, dc);
                    const double wv = w->value.data[idx];
                    wsums[j] += wv;
                    for (int d = 0; d < D; ++d)
                        y.data[static_cast<size_t>(j) * D + d] += f->value.data[d * hw + idx] * wv;
                }
            for (int d = 0; d < D; ++d) y.data[static_cast<size_t>(j) * D + d] /= wsums[j] + eps;
        }

    return t.make(std::move(y), {f, w},
                  [f, w, pg, hw, D, patch_size, eps, wsums = std::move(wsums)](ad::Node& n) {
                      for (int br = 0; br < pg.bh; ++br)
                          for (int bc = 0; bc < pg.bw; ++bc) {
                              const int j = br * pg.bw + bc;
                              const double denom = wsums[j] + eps;
                              const double* fj = &n.value.data[static_cast<size_t>(j) * D];
                              const double* gj = &n.grad.data[static_cast<size_t>(j) * D];
                              for (int dr = 0; dr < patch_size; ++dr)
                                  for (int dc = 0; dc < patch_size; ++dc) {
                                      const size_t idx = pg.src(br, bc, dr, dc);
                                      const double wv = w->value.data[idx];
                                      double gw = 0.0;
                                      for (int d = 0; d < D; ++d) {
                                          if (f->requires_grad)
                                              f->grad.data[d * hw + idx] += gj[d] * wv / denom;
                                          gw += gj[d] * (f->value.data[d * hw + idx] - fj[d]);
                                      }
                                      if (w->requires_grad) w->grad.data[idx] += gw / denom;
                                  }
                          }
                  });
}

ad::NodePtr infonce_node(ad::Tape& t, const ad::NodePtr& f, const ad::NodePtr& g,
                         double temperature, double eps) {
    std::vector<double> soft;
    Tensor y({1});
    y.data[0] = infonce_value(f->value, g->value, temperature, eps, &soft);
    return t.make(std::move(y), {f, g}, [f, g, temperature, eps, soft = std::move(soft)](ad::Node& n) {
        const int N = f->value.dim(0), D = f->value.dim(1);
        std::vector<double> sim, nf, ng;
        cosine_matrix(f->value, g->value, eps, sim, nf, ng);
        const double gscale = n.grad.data[0] / (static_cast<double>(N) * temperature);
        for (int j = 0; j < N; ++j)
            for (int k = 0; k < N; ++k) {
                double ds = gscale * (soft[static_cast<size_t>(j) * N + k] - (j == k ? 1.0 : 0.0));
                if (ds == 0.0 || nf[j] < eps || ng[k] < eps) continue;
                const double s = sim[static_cast<size_t>(j) * N + k];
                const double inv = 1.0 / (nf[j] * ng[k]);
                for (int d = 0; d < D; ++d) {
                    const double fv = f->value.data[static_cast<size_t>(j) * D + d];
                    const double gv = g->value.data[static_cast<size_t>(k) * D + d];
                    if (f->requires_grad)
                        f->grad.data[static_cast<size_t>(j) * D + d] +=
                            ds * (gv * inv - s * fv / (nf[j] * nf[j]));
                    if (g->requires_grad)
                        g->grad.data[static_cast<size_t>(k) * D + d] +=
                            ds * (fv * inv - s * gv / (ng[k] * ng[k]));
                }
            }
    });
}

}  // namespace pseudoseg
