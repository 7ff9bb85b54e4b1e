#pragma once

#include <functional>
#include <string>
#include <vector>

#include "coin/errors.hpp"
#include "coin/matrix.hpp"

namespace coin {

// Rows whose Euclidean norm falls below this are treated as collapsed
// embeddings and rejected rather than clamped.
inline constexpr double kNormEpsilon = 1e-12;

inline Matrix linear_forward(const Matrix& x, const Matrix& weight, const std::vector<double>& bias) {
    if (x.cols() != weight.rows())
        throw DimensionError("linear_forward: input has " + std::to_string(x.cols()) +
                             " columns, weight expects " + std::to_string(weight.rows()));
    if (static_cast<int>(bias.size()) != weight.cols())
        throw DimensionError("linear_forward: bias length " + std::to_string(bias.size()) +
                             " != output width " + std::to_string(weight.cols()));
    Matrix out = matmul(x, weight);
    for (int i = 0; i < out.rows(); ++i) {
        double* oi = out.row(i);
        for (int j = 0; j < out.cols(); ++j) oi[j] += bias[j];
    }
    return out;
}

// Elementwise max(0, x). Subgradient at exactly 0 is defined as 0.
inline Matrix relu(const Matrix& x) {
    Matrix out = x;
    for (size_t i = 0; i < out.size(); ++i)
        if (out.data()[i] < 0.0) out.data()[i] = 0.0;
    return out;
}

inline Matrix l2_normalize_rows(const Matrix& x) {
    Matrix out = x;
    for (int i = 0; i < x.rows(); ++i) {
        double n = row_norm(x, i);
        if (n < kNormEpsilon)
            throw DegenerateError("l2_normalize_rows: row " + std::to_string(i) +
                                  " has norm below " + format_double(kNormEpsilon));
        double inv = 1.0 / n;
        double* p = out.row(i);
        for (int c = 0; c < x.cols(); ++c) p[c] *= inv;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Straight-line layer stacks with reverse-mode accumulation. The model is a
// fixed composition of these three ops, so no general tape is needed.
// ---------------------------------------------------------------------------

enum class LayerKind { Linear, Relu, NormalizeRows };

struct LinearLayer {
    Matrix weight;             // d_in x d_out
    std::vector<double> bias;  // d_out

    bool operator==(const LinearLayer& o) const { return weight == o.weight && bias == o.bias; }
};

struct Layer {
    LayerKind kind = LayerKind::Relu;
    LinearLayer linear;  // meaningful only for LayerKind::Linear

    static Layer make_linear(Matrix w, std::vector<double> b) {
        return Layer{LayerKind::Linear, LinearLayer{std::move(w), std::move(b)}};
    }
    static Layer make_relu() { return Layer{LayerKind::Relu, {}}; }
    static Layer make_normalize() { return Layer{LayerKind::NormalizeRows, {}}; }
};

using LayerStack = std::vector<Layer>;

// activations[0] is the stack input, activations[i+1] the output of layer i.
struct ForwardTrace {
    std::vector<Matrix> activations;
};

inline Matrix forward_stack(const LayerStack& stack, const Matrix& x, ForwardTrace* trace = nullptr) {
    Matrix cur = x;
    if (trace) {
        trace->activations.clear();
        trace->activations.push_back(cur);
    }
    for (const Layer& layer : stack) {
        switch (layer.kind) {
            case LayerKind::Linear:
                cur = linear_forward(cur, layer.linear.weight, layer.linear.bias);
                break;
            case LayerKind::Relu:
                cur = relu(cur);
                break;
            case LayerKind::NormalizeRows:
                cur = l2_normalize_rows(cur);
                break;
        }
        if (trace) trace->activations.push_back(cur);
    }
    return cur;
}

struct LinearGrad {
    Matrix weight;
    std::vector<double> bias;
};

// Gradients for every Linear layer (in stack order) plus the stack input.
struct StackGradients {
    std::vector<LinearGrad> linear;
    Matrix input;
};

// Reverse-mode chain over the recorded forward pass. upstream is dL/d(output);
// returns exact analytic gradients of the same scalar objective.
inline StackGradients backward_stack(const LayerStack& stack, const ForwardTrace& trace,
                                     const Matrix& upstream) {
    if (trace.activations.size() != stack.size() + 1)
        throw DimensionError("backward_stack: trace does not match stack");
    if (!upstream.same_shape(trace.activations.back()))
        throw DimensionError("backward_stack: upstream gradient shape mismatch");

    StackGradients grads;
    size_t n_linear = 0;
    for (const Layer& l : stack)
        if (l.kind == LayerKind::Linear) ++n_linear;
    grads.linear.resize(n_linear);

    Matrix delta = upstream;
    size_t li = n_linear;
    for (size_t i = stack.size(); i-- > 0;) {
        const Matrix& in = trace.activations[i];
        const Matrix& out = trace.activations[i + 1];
        switch (stack[i].kind) {
            case LayerKind::Linear: {
                const LinearLayer& lin = stack[i].linear;
                LinearGrad& g = grads.linear[--li];
                g.weight = Matrix(lin.weight.rows(), lin.weight.cols());
                g.bias.assign(lin.bias.size(), 0.0);
                for (int r = 0; r < in.rows(); ++r) {
                    const double* xi = in.row(r);
                    const double* di = delta.row(r);
                    for (int k = 0; k < in.cols(); ++k) {
                        const double xk = xi[k];
                        if (xk == 0.0) continue;
                        double* gw = g.weight.row(k);
                        for (int j = 0; j < delta.cols(); ++j) gw[j] += xk * di[j];
                    }
                    for (int j = 0; j < delta.cols(); ++j) g.bias[j] += di[j];
                }
                Matrix next(in.rows(), in.cols());
                for (int r = 0; r < in.rows(); ++r) {
                    const double* di = delta.row(r);
                    double* ni = next.row(r);
                    for (int k = 0; k < in.cols(); ++k) {
                        const double* wk = lin.weight.row(k);
                        double s = 0.0;
                        for (int j = 0; j < delta.cols(); ++j) s += di[j] * wk[j];
                        ni[k] = s;
                    }
                }
                delta = std::move(next);
                break;
            }
            case LayerKind::Relu: {
                Matrix next = delta;
                for (size_t e = 0; e < next.size(); ++e)
                    if (in.data()[e] <= 0.0) next.data()[e] = 0.0;
                delta = std::move(next);
                break;
            }
            case LayerKind::NormalizeRows: {
                // y = u/|u|; dL/du = (dL/dy - (dL/dy . y) y) / |u|
                Matrix next(in.rows(), in.cols());
                for (int r = 0; r < in.rows(); ++r) {
                    double n = row_norm(in, r);
                    double dot = row_dot(delta, r, out, r);
                    const double* dr = delta.row(r);
                    const double* yr = out.row(r);
                    double* nr = next.row(r);
                    for (int c = 0; c < in.cols(); ++c) nr[c] = (dr[c] - dot * yr[c]) / n;
                }
                delta = std::move(next);
                break;
            }
        }
    }
    grads.input = std::move(delta);
    return grads;
}

// Central finite differences, (f(x + e) - f(x - e)) / 2eps per entry.
// The gradient oracle: independent of every analytic backward path above.
inline Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f, Matrix x, double eps) {
    if (eps <= 0.0) throw ParameterError("finite_diff_grad: eps must be > 0");
    Matrix grad(x.rows(), x.cols());
    for (size_t i = 0; i < x.size(); ++i) {
        double orig = x.data()[i];
        x.data()[i] = orig + eps;
        double fp = f(x);
        x.data()[i] = orig - eps;
        double fm = f(x);
        x.data()[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw DegenerateError("finite_diff_grad: non-finite objective value");
        grad.data()[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

// Relative error with denominator max(|a|,|b|,1e-8).
inline double max_rel_error(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw DimensionError("max_rel_error: shape mismatch");
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double x = a.data()[i], y = b.data()[i];
        double denom = std::max({std::fabs(x), std::fabs(y), 1e-8});
        worst = std::max(worst, std::fabs(x - y) / denom);
    }
    return worst;
}

}  // namespace coin
