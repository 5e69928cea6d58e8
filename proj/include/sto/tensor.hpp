#pragma once

// Reverse-mode automatic differentiation on dense double tensors.
//
// The graph is a tape of shared_ptr<Node>; every op builds a child node that
// keeps its parents alive and carries a closure accumulating gradients into
// them.  All reductions run in a fixed order (k-ascending per output element
// for matrix products, creation order for the tape walk), so repeated runs on
// identical inputs produce bit-identical values and gradients.

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "sto/common.hpp"

namespace sto::ad {

struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s, double fill = 0.0);

    int64_t numel() const;
    int64_t dim(size_t i) const { return shape.at(i); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    static Tensor from_vector(const std::vector<double>& v);
    static Tensor scalar(double v);
};

class Node;
using Var = std::shared_ptr<Node>;

class Node {
public:
    Tensor value;
    Tensor grad;  // allocated by backward(); same shape as value
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;  // adds into parents' grads

    explicit Node(Tensor v) : value(std::move(v)) {}
};

// Leaves.
Var constant(Tensor value);
Var parameter(Tensor value);  // requires_grad = true

// C(M,N) += A(M,K) * B(K,N); every C entry accumulates in ascending k.
void gemm_nn(int64_t m, int64_t k, int64_t n, const double* a, const double* b, double* c);
// C(M,N) += A(M,K) * B^T where B is stored (N,K).
void gemm_nt(int64_t m, int64_t k, int64_t n, const double* a, const double* b, double* c);
// C(M,N) += A^T * B where A is stored (K,M) and B is stored (K,N).
void gemm_tn(int64_t m, int64_t k, int64_t n, const double* a, const double* b, double* c);

// Elementwise and linear-algebra ops.
Var add(const Var& a, const Var& b);             // same shape
Var scale(const Var& a, double s);
Var matmul(const Var& a, const Var& b);          // (M,K) x (K,N) -> (M,N)
Var add_rowbias(const Var& x, const Var& bias);  // (N,F) + (F) broadcast over rows
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var elementwise_mask(const Var& x, Tensor mask, double s);  // dropout: x .* mask * s

struct Conv3dSpec {
    int64_t kz = 3, ky = 3, kx = 3;
    int64_t sz = 1, sy = 1, sx = 1;
    int64_t pz = 0, py = 0, px = 0;
};

// x: (N, C, Z, Y, X) with x fastest; w: (OC, C, KZ, KY, KX); bias: (OC) or null.
Var conv3d(const Var& x, const Var& w, const Var& bias, const Conv3dSpec& spec);

// Per-channel batch normalization over (N, Z, Y, X).  Training mode uses batch
// statistics (biased variance) and updates the caller-owned running buffers in
// place; eval mode normalizes with the running buffers as constants.
Var batchnorm3d(const Var& x, const Var& gamma, const Var& beta, std::vector<double>& running_mean,
                std::vector<double>& running_var, bool training, double momentum = 0.1,
                double eps = 1e-5);

Var global_avg_pool(const Var& x);               // (N,C,Z,Y,X) -> (N,C)
Var concat_features(const Var& a, const Var& b); // (N,F1) + (N,F2) -> (N,F1+F2)

// Losses: scalar outputs, mean over the batch.
Var bce_loss(const Var& pred, const Tensor& targets);  // pred in (0,1)
Var mse_loss(const Var& pred, const Tensor& targets);

// Runs the tape backward from a scalar root, filling .grad on every reachable
// node that requires gradients.
void backward(const Var& root);

// Output spatial extent of a convolution along one axis.
int64_t conv_out_extent(int64_t in, int64_t kernel, int64_t stride, int64_t pad);

}  // namespace sto::ad
