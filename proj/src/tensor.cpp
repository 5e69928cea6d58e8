#include "sto/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace sto::ad {

Tensor::Tensor(std::vector<int64_t> s, double fill) : shape(std::move(s)) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw ShapeMismatch("tensor extent must be positive");
        n *= d;
    }
    data.assign(static_cast<size_t>(n), fill);
}

int64_t Tensor::numel() const { return static_cast<int64_t>(data.size()); }

Tensor Tensor::from_vector(const std::vector<double>& v) {
    Tensor t({static_cast<int64_t>(v.size())});
    t.data = v;
    return t;
}

Tensor Tensor::scalar(double v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
}

Var constant(Tensor value) { return std::make_shared<Node>(std::move(value)); }

Var parameter(Tensor value) {
    Var v = std::make_shared<Node>(std::move(value));
    v->requires_grad = true;
    return v;
}

namespace {

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
    Var v = std::make_shared<Node>(std::move(value));
    for (const Var& p : parents)
        if (p->requires_grad) v->requires_grad = true;
    v->parents = std::move(parents);
    if (v->requires_grad) v->backprop = std::move(backprop);
    return v;
}

}  // namespace

void gemm_nn(int64_t m, int64_t k, int64_t n, const double* a, const double* b, double* c) {
    for (int64_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (int64_t kk = 0; kk < k; ++kk) {
            const double aik = ai[kk];
            if (aik == 0.0) continue;
            const double* bk = b + kk * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
        }
    }
}

void gemm_nt(int64_t m, int64_t k, int64_t n, const double* a, const double* b, double* c) {
    for (int64_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (int64_t kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
            ci[j] += acc;
        }
    }
}

void gemm_tn(int64_t m, int64_t k, int64_t n, const double* a, const double* b, double* c) {
    for (int64_t kk = 0; kk < k; ++kk) {
        const double* ak = a + kk * m;
        const double* bk = b + kk * n;
        for (int64_t i = 0; i < m; ++i) {
            const double aki = ak[i];
            if (aki == 0.0) continue;
            double* ci = c + i * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += aki * bk[j];
        }
    }
}

Var add(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) throw ShapeMismatch("add: operand shapes differ");
    Tensor out = a->value;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        for (int side = 0; side < 2; ++side) {
            Node& p = *self.parents[static_cast<size_t>(side)];
            if (!p.requires_grad) continue;
            for (size_t i = 0; i < self.grad.data.size(); ++i) p.grad.data[i] += self.grad.data[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a->value;
    for (double& v : out.data) v *= s;
    return make_op(std::move(out), {a}, [s](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (size_t i = 0; i < self.grad.data.size(); ++i) p.grad.data[i] += s * self.grad.data[i];
    });
}

Var matmul(const Var& a, const Var& b) {
    if (a->value.shape.size() != 2 || b->value.shape.size() != 2 ||
        a->value.dim(1) != b->value.dim(0))
        throw ShapeMismatch("matmul: incompatible shapes");
    const int64_t m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
    Tensor out({m, n});
    gemm_nn(m, k, n, a->value.data.data(), b->value.data.data(), out.data.data());
    return make_op(std::move(out), {a, b}, [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad)  // dA(M,K) += dC(M,N) * B(K,N)^T
            gemm_nt(m, n, k, self.grad.data.data(), pb.value.data.data(), pa.grad.data.data());
        if (pb.requires_grad)  // dB(K,N) += A(M,K)^T * dC(M,N)
            gemm_tn(k, m, n, pa.value.data.data(), self.grad.data.data(), pb.grad.data.data());
    });
}

Var add_rowbias(const Var& x, const Var& bias) {
    if (x->value.shape.size() != 2 || bias->value.shape.size() != 1 ||
        x->value.dim(1) != bias->value.dim(0))
        throw ShapeMismatch("add_rowbias: incompatible shapes");
    const int64_t rows = x->value.dim(0), cols = x->value.dim(1);
    Tensor out = x->value;
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c)
            out.data[static_cast<size_t>(r * cols + c)] += bias->value.data[static_cast<size_t>(c)];
    return make_op(std::move(out), {x, bias}, [rows, cols](Node& self) {
        Node& px = *self.parents[0];
        Node& pb = *self.parents[1];
        if (px.requires_grad)
            for (size_t i = 0; i < self.grad.data.size(); ++i) px.grad.data[i] += self.grad.data[i];
        if (pb.requires_grad)
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t c = 0; c < cols; ++c)
                    pb.grad.data[static_cast<size_t>(c)] +=
                        self.grad.data[static_cast<size_t>(r * cols + c)];
    });
}

Var relu(const Var& x) {
    Tensor out = x->value;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return make_op(std::move(out), {x}, [](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (size_t i = 0; i < self.grad.data.size(); ++i)
            if (p.value.data[i] > 0.0) p.grad.data[i] += self.grad.data[i];
    });
}

Var sigmoid(const Var& x) {
    Tensor out = x->value;
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    return make_op(std::move(out), {x}, [](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (size_t i = 0; i < self.grad.data.size(); ++i) {
            const double s = self.value.data[i];
            p.grad.data[i] += self.grad.data[i] * s * (1.0 - s);
        }
    });
}

Var elementwise_mask(const Var& x, Tensor mask, double s) {
    if (!x->value.same_shape(mask)) throw ShapeMismatch("elementwise_mask: mask shape differs");
    Tensor out = x->value;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask.data[i] * s;
    auto shared_mask = std::make_shared<Tensor>(std::move(mask));
    return make_op(std::move(out), {x}, [shared_mask, s](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (size_t i = 0; i < self.grad.data.size(); ++i)
            p.grad.data[i] += self.grad.data[i] * shared_mask->data[i] * s;
    });
}

int64_t conv_out_extent(int64_t in, int64_t kernel, int64_t stride, int64_t pad) {
    int64_t span = in + 2 * pad - kernel;
    if (span < 0) throw ShapeMismatch("conv3d: kernel larger than padded input");
    return span / stride + 1;
}

namespace {

struct ConvDims {
    int64_t n, c, z, y, x;       // input
    int64_t oc, kz, ky, kx;      // weight
    int64_t zo, yo, xo;          // output spatial
    int64_t rows, cols;          // im2col: rows = c*kz*ky*kx, cols = zo*yo*xo
    Conv3dSpec spec;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Conv3dSpec& spec) {
    if (x.shape.size() != 5 || w.shape.size() != 5) throw ShapeMismatch("conv3d: rank must be 5");
    if (x.dim(1) != w.dim(1)) throw ShapeMismatch("conv3d: channel mismatch");
    if (w.dim(2) != spec.kz || w.dim(3) != spec.ky || w.dim(4) != spec.kx)
        throw ShapeMismatch("conv3d: weight extents disagree with spec");
    ConvDims d;
    d.n = x.dim(0); d.c = x.dim(1); d.z = x.dim(2); d.y = x.dim(3); d.x = x.dim(4);
    d.oc = w.dim(0); d.kz = spec.kz; d.ky = spec.ky; d.kx = spec.kx;
    d.zo = conv_out_extent(d.z, spec.kz, spec.sz, spec.pz);
    d.yo = conv_out_extent(d.y, spec.ky, spec.sy, spec.py);
    d.xo = conv_out_extent(d.x, spec.kx, spec.sx, spec.px);
    d.rows = d.c * d.kz * d.ky * d.kx;
    d.cols = d.zo * d.yo * d.xo;
    d.spec = spec;
    return d;
}

// Column r corresponds to (c, kz, ky, kx) in row-major order, matching the
// flattened weight layout; column p walks output voxels with x fastest.
void im2col(const double* xn, const ConvDims& d, double* col) {
    const int64_t plane = d.y * d.x;
    const int64_t volume = d.z * plane;
    int64_t r = 0;
    for (int64_t c = 0; c < d.c; ++c)
        for (int64_t kz = 0; kz < d.kz; ++kz)
            for (int64_t ky = 0; ky < d.ky; ++ky)
                for (int64_t kx = 0; kx < d.kx; ++kx, ++r) {
                    double* dst = col + r * d.cols;
                    const double* src = xn + c * volume;
                    int64_t p = 0;
                    for (int64_t zo = 0; zo < d.zo; ++zo) {
                        const int64_t z = zo * d.spec.sz - d.spec.pz + kz;
                        for (int64_t yo = 0; yo < d.yo; ++yo) {
                            const int64_t y = yo * d.spec.sy - d.spec.py + ky;
                            const bool zy_ok = z >= 0 && z < d.z && y >= 0 && y < d.y;
                            const double* line = src + z * plane + y * d.x;
                            for (int64_t xo = 0; xo < d.xo; ++xo, ++p) {
                                const int64_t x = xo * d.spec.sx - d.spec.px + kx;
                                dst[p] = (zy_ok && x >= 0 && x < d.x) ? line[x] : 0.0;
                            }
                        }
                    }
                }
}

void col2im_add(const double* col, const ConvDims& d, double* dxn) {
    const int64_t plane = d.y * d.x;
    const int64_t volume = d.z * plane;
    int64_t r = 0;
    for (int64_t c = 0; c < d.c; ++c)
        for (int64_t kz = 0; kz < d.kz; ++kz)
            for (int64_t ky = 0; ky < d.ky; ++ky)
                for (int64_t kx = 0; kx < d.kx; ++kx, ++r) {
                    const double* src = col + r * d.cols;
                    double* dst = dxn + c * volume;
                    int64_t p = 0;
                    for (int64_t zo = 0; zo < d.zo; ++zo) {
                        const int64_t z = zo * d.spec.sz - d.spec.pz + kz;
                        for (int64_t yo = 0; yo < d.yo; ++yo) {
                            const int64_t y = yo * d.spec.sy - d.spec.py + ky;
                            const bool zy_ok = z >= 0 && z < d.z && y >= 0 && y < d.y;
                            double* line = dst + z * plane + y * d.x;
                            for (int64_t xo = 0; xo < d.xo; ++xo, ++p) {
                                const int64_t x = xo * d.spec.sx - d.spec.px + kx;
                                if (zy_ok && x >= 0 && x < d.x) line[x] += src[p];
                            }
                        }
                    }
                }
}

}  // namespace

Var conv3d(const Var& x, const Var& w, const Var& bias, const Conv3dSpec& spec) {
    ConvDims d = conv_dims(x->value, w->value, spec);
    if (bias && (bias->value.shape.size() != 1 || bias->value.dim(0) != d.oc))
        throw ShapeMismatch("conv3d: bias extent must equal output channels");

    Tensor out({d.n, d.oc, d.zo, d.yo, d.xo});
    std::vector<double> col(static_cast<size_t>(d.rows * d.cols));
    const int64_t in_sample = d.c * d.z * d.y * d.x;
    const int64_t out_sample = d.oc * d.cols;
    for (int64_t n = 0; n < d.n; ++n) {
        im2col(x->value.data.data() + n * in_sample, d, col.data());
        double* on = out.data.data() + n * out_sample;
        gemm_nn(d.oc, d.rows, d.cols, w->value.data.data(), col.data(), on);
        if (bias)
            for (int64_t oc = 0; oc < d.oc; ++oc) {
                const double b = bias->value.data[static_cast<size_t>(oc)];
                double* row = on + oc * d.cols;
                for (int64_t p = 0; p < d.cols; ++p) row[p] += b;
            }
    }

    std::vector<Var> parents = {x, w};
    if (bias) parents.push_back(bias);
    // im2col is recomputed in the backward pass instead of being stored, so a
    // training step keeps only one column buffer alive at a time.
    return make_op(std::move(out), std::move(parents), [d, in_sample, out_sample](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        Node* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;

        if (pb && pb->requires_grad)
            for (int64_t n = 0; n < d.n; ++n)
                for (int64_t oc = 0; oc < d.oc; ++oc) {
                    const double* row = self.grad.data.data() + n * out_sample + oc * d.cols;
                    double acc = 0.0;
                    for (int64_t p = 0; p < d.cols; ++p) acc += row[p];
                    pb->grad.data[static_cast<size_t>(oc)] += acc;
                }

        std::vector<double> col(static_cast<size_t>(d.rows * d.cols));
        std::vector<double> dcol;
        if (px.requires_grad) dcol.resize(static_cast<size_t>(d.rows * d.cols));
        for (int64_t n = 0; n < d.n; ++n) {
            const double* dout_n = self.grad.data.data() + n * out_sample;
            if (pw.requires_grad) {
                im2col(px.value.data.data() + n * in_sample, d, col.data());
                gemm_nt(d.oc, d.cols, d.rows, dout_n, col.data(), pw.grad.data.data());
            }
            if (px.requires_grad) {
                std::fill(dcol.begin(), dcol.end(), 0.0);
                gemm_tn(d.rows, d.oc, d.cols, pw.value.data.data(), dout_n, dcol.data());
                col2im_add(dcol.data(), d, px.grad.data.data() + n * in_sample);
            }
        }
    });
}

Var batchnorm3d(const Var& x, const Var& gamma, const Var& beta, std::vector<double>& running_mean,
                std::vector<double>& running_var, bool training, double momentum, double eps) {
    if (x->value.shape.size() != 5) throw ShapeMismatch("batchnorm3d: rank must be 5");
    const int64_t n = x->value.dim(0), c = x->value.dim(1);
    const int64_t p = x->value.dim(2) * x->value.dim(3) * x->value.dim(4);
    if (gamma->value.numel() != c || beta->value.numel() != c ||
        static_cast<int64_t>(running_mean.size()) != c ||
        static_cast<int64_t>(running_var.size()) != c)
        throw ShapeMismatch("batchnorm3d: per-channel buffers must match channel count");

    auto mean = std::make_shared<std::vector<double>>(static_cast<size_t>(c), 0.0);
    auto invstd = std::make_shared<std::vector<double>>(static_cast<size_t>(c), 0.0);
    const double m = static_cast<double>(n * p);

    if (training) {
        for (int64_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (int64_t b = 0; b < n; ++b) {
                const double* row = x->value.data.data() + (b * c + ch) * p;
                for (int64_t i = 0; i < p; ++i) acc += row[i];
            }
            const double mu = acc / m;
            double var_acc = 0.0;
            for (int64_t b = 0; b < n; ++b) {
                const double* row = x->value.data.data() + (b * c + ch) * p;
                for (int64_t i = 0; i < p; ++i) {
                    const double dv = row[i] - mu;
                    var_acc += dv * dv;
                }
            }
            const double var = var_acc / m;
            (*mean)[static_cast<size_t>(ch)] = mu;
            (*invstd)[static_cast<size_t>(ch)] = 1.0 / std::sqrt(var + eps);
            running_mean[static_cast<size_t>(ch)] =
                (1.0 - momentum) * running_mean[static_cast<size_t>(ch)] + momentum * mu;
            running_var[static_cast<size_t>(ch)] =
                (1.0 - momentum) * running_var[static_cast<size_t>(ch)] + momentum * var;
        }
    } else {
        for (int64_t ch = 0; ch < c; ++ch) {
            (*mean)[static_cast<size_t>(ch)] = running_mean[static_cast<size_t>(ch)];
            (*invstd)[static_cast<size_t>(ch)] =
                1.0 / std::sqrt(running_var[static_cast<size_t>(ch)] + eps);
        }
    }

    Tensor out(x->value.shape);
    for (int64_t b = 0; b < n; ++b)
        for (int64_t ch = 0; ch < c; ++ch) {
            const double* row = x->value.data.data() + (b * c + ch) * p;
            double* orow = out.data.data() + (b * c + ch) * p;
            const double mu = (*mean)[static_cast<size_t>(ch)];
            const double is = (*invstd)[static_cast<size_t>(ch)];
            const double g = gamma->value.data[static_cast<size_t>(ch)];
            const double bt = beta->value.data[static_cast<size_t>(ch)];
            for (int64_t i = 0; i < p; ++i) orow[i] = g * (row[i] - mu) * is + bt;
        }

    return make_op(std::move(out), {x, gamma, beta},
                   [n, c, p, m, mean, invstd, training](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];

        // Per-channel reductions of dY and dY*xhat, accumulated batch-major.
        std::vector<double> sum_dy(static_cast<size_t>(c), 0.0);
        std::vector<double> sum_dy_xhat(static_cast<size_t>(c), 0.0);
        for (int64_t b = 0; b < n; ++b)
            for (int64_t ch = 0; ch < c; ++ch) {
                const double* xrow = px.value.data.data() + (b * c + ch) * p;
                const double* grow = self.grad.data.data() + (b * c + ch) * p;
                const double mu = (*mean)[static_cast<size_t>(ch)];
                const double is = (*invstd)[static_cast<size_t>(ch)];
                double a0 = 0.0, a1 = 0.0;
                for (int64_t i = 0; i < p; ++i) {
                    a0 += grow[i];
                    a1 += grow[i] * (xrow[i] - mu) * is;
                }
                sum_dy[static_cast<size_t>(ch)] += a0;
                sum_dy_xhat[static_cast<size_t>(ch)] += a1;
            }
        if (pg.requires_grad)
            for (int64_t ch = 0; ch < c; ++ch)
                pg.grad.data[static_cast<size_t>(ch)] += sum_dy_xhat[static_cast<size_t>(ch)];
        if (pb.requires_grad)
            for (int64_t ch = 0; ch < c; ++ch)
                pb.grad.data[static_cast<size_t>(ch)] += sum_dy[static_cast<size_t>(ch)];
        if (!px.requires_grad) return;

        for (int64_t b = 0; b < n; ++b)
            for (int64_t ch = 0; ch < c; ++ch) {
                const double* xrow = px.value.data.data() + (b * c + ch) * p;
                const double* grow = self.grad.data.data() + (b * c + ch) * p;
                double* drow = px.grad.data.data() + (b * c + ch) * p;
                const double mu = (*mean)[static_cast<size_t>(ch)];
                const double is = (*invstd)[static_cast<size_t>(ch)];
                const double g = pg.value.data[static_cast<size_t>(ch)];
                if (training) {
                    const double mean_dy = sum_dy[static_cast<size_t>(ch)] / m;
                    const double mean_dy_xhat = sum_dy_xhat[static_cast<size_t>(ch)] / m;
                    for (int64_t i = 0; i < p; ++i) {
                        const double xhat = (xrow[i] - mu) * is;
                        drow[i] += g * is * (grow[i] - mean_dy - xhat * mean_dy_xhat);
                    }
                } else {
                    for (int64_t i = 0; i < p; ++i) drow[i] += g * is * grow[i];
                }
            }
    });
}

Var global_avg_pool(const Var& x) {
    if (x->value.shape.size() != 5) throw ShapeMismatch("global_avg_pool: rank must be 5");
    const int64_t n = x->value.dim(0), c = x->value.dim(1);
    const int64_t p = x->value.dim(2) * x->value.dim(3) * x->value.dim(4);
    Tensor out({n, c});
    for (int64_t b = 0; b < n; ++b)
        for (int64_t ch = 0; ch < c; ++ch) {
            const double* row = x->value.data.data() + (b * c + ch) * p;
            double acc = 0.0;
            for (int64_t i = 0; i < p; ++i) acc += row[i];
            out.data[static_cast<size_t>(b * c + ch)] = acc / static_cast<double>(p);
        }
    return make_op(std::move(out), {x}, [n, c, p](Node& self) {
        Node& px = *self.parents[0];
        if (!px.requires_grad) return;
        const double inv = 1.0 / static_cast<double>(p);
        for (int64_t b = 0; b < n; ++b)
            for (int64_t ch = 0; ch < c; ++ch) {
                const double g = self.grad.data[static_cast<size_t>(b * c + ch)] * inv;
                double* drow = px.grad.data.data() + (b * c + ch) * p;
                for (int64_t i = 0; i < p; ++i) drow[i] += g;
            }
    });
}

Var concat_features(const Var& a, const Var& b) {
    if (a->value.shape.size() != 2 || b->value.shape.size() != 2 ||
        a->value.dim(0) != b->value.dim(0))
        throw ShapeMismatch("concat_features: row counts differ");
    const int64_t n = a->value.dim(0), fa = a->value.dim(1), fb = b->value.dim(1);
    Tensor out({n, fa + fb});
    for (int64_t r = 0; r < n; ++r) {
        std::copy_n(a->value.data.data() + r * fa, fa, out.data.data() + r * (fa + fb));
        std::copy_n(b->value.data.data() + r * fb, fb, out.data.data() + r * (fa + fb) + fa);
    }
    return make_op(std::move(out), {a, b}, [n, fa, fb](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        for (int64_t r = 0; r < n; ++r) {
            const double* g = self.grad.data.data() + r * (fa + fb);
            if (pa.requires_grad)
                for (int64_t i = 0; i < fa; ++i) pa.grad.data[static_cast<size_t>(r * fa + i)] += g[i];
            if (pb.requires_grad)
                for (int64_t i = 0; i < fb; ++i)
                    pb.grad.data[static_cast<size_t>(r * fb + i)] += g[fa + i];
        }
    });
}

namespace {
constexpr double kBceEps = 1e-7;
}

Var bce_loss(const Var& pred, const Tensor& targets) {
    if (!pred->value.same_shape(targets)) throw ShapeMismatch("bce_loss: target shape differs");
    const int64_t n = pred->value.numel();
    auto shared_t = std::make_shared<Tensor>(targets);
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double p = std::clamp(pred->value.data[static_cast<size_t>(i)], kBceEps, 1.0 - kBceEps);
        const double t = targets.data[static_cast<size_t>(i)];
        acc -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
    Tensor out = Tensor::scalar(acc / static_cast<double>(n));
    return make_op(std::move(out), {pred}, [n, shared_t](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        const double g = self.grad.data[0] / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) {
            const double raw = p.value.data[static_cast<size_t>(i)];
            if (raw <= kBceEps || raw >= 1.0 - kBceEps) continue;  // clamped: zero slope
            const double t = shared_t->data[static_cast<size_t>(i)];
            p.grad.data[static_cast<size_t>(i)] += g * (raw - t) / (raw * (1.0 - raw));
        }
    });
}

Var mse_loss(const Var& pred, const Tensor& targets) {
    if (!pred->value.same_shape(targets)) throw ShapeMismatch("mse_loss: target shape differs");
    const int64_t n = pred->value.numel();
    auto shared_t = std::make_shared<Tensor>(targets);
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = pred->value.data[static_cast<size_t>(i)] - targets.data[static_cast<size_t>(i)];
        acc += d * d;
    }
    Tensor out = Tensor::scalar(acc / static_cast<double>(n));
    return make_op(std::move(out), {pred}, [n, shared_t](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        const double g = 2.0 * self.grad.data[0] / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i)
            p.grad.data[static_cast<size_t>(i)] +=
                g * (p.value.data[static_cast<size_t>(i)] - shared_t->data[static_cast<size_t>(i)]);
    });
}

void backward(const Var& root) {
    if (root->value.numel() != 1) throw ShapeMismatch("backward: root must be scalar");

    // Iterative post-order DFS; the visit order is fixed by graph construction.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame {
        Node* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({root.get(), 0});
    visited.insert(root.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            Node* p = f.node->parents[f.next_parent++].get();
            if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    for (Node* n : order) n->grad = Tensor(n->value.shape);
    root->grad.data[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop(**it);
}

}  // namespace sto::ad
