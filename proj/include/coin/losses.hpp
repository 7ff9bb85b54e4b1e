#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "coin/errors.hpp"
#include "coin/matrix.hpp"

namespace coin {

namespace detail {

// Ascending-order summation: the result depends only on the multiset of
// addends, which keeps permutation invariants bit-exact.
inline double sorted_sum(std::vector<double>& terms) {
    std::sort(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += t;
    return s;
}

}  // namespace detail

struct LossResult {
    double value = 0.0;
    Matrix grad;  // same shape as the differentiated input
};

inline Matrix softmax_rows(const Matrix& logits) {
    Matrix p = logits;
    for (int i = 0; i < p.rows(); ++i) {
        double* row = p.row(i);
        double m = row[0];
        for (int j = 1; j < p.cols(); ++j) m = std::max(m, row[j]);
        double sum = 0.0;
        for (int j = 0; j < p.cols(); ++j) {
            row[j] = std::exp(row[j] - m);
            sum += row[j];
        }
        for (int j = 0; j < p.cols(); ++j) row[j] /= sum;
    }
    return p;
}

// Supervised contrastive loss over projected features v (n x d_v, unit rows).
//
// For each anchor i the candidate set is every other row in the batch and the
// positive set is the same-class subset of it. Anchors with no positive
// contribute nothing and the outer average divides by the number of anchors
// that do have one (zero such anchors => loss 0). The returned gradient is
// with respect to v; callers chain through the normalization themselves.
inline LossResult sup_con_loss(const Matrix& v, std::span<const int> labels, double tau) {
    const int n = v.rows();
    if (tau <= 0.0) throw ParameterError("sup_con_loss: tau must be > 0");
    if (n < 2) throw ParameterError("sup_con_loss: batch needs at least 2 instances");
    if (static_cast<int>(labels.size()) != n)
        throw DimensionError("sup_con_loss: labels length != batch rows");

    // Pairwise similarities and row-wise softmax over A_i (diagonal excluded),
    // computed with max-subtraction.
    Matrix sim(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) sim(i, j) = (i == j) ? 0.0 : row_dot(v, i, v, j) / tau;

    Matrix prob(n, n);
    std::vector<double> log_denom(n);
    std::vector<double> exp_terms;
    for (int i = 0; i < n; ++i) {
        double m = -1e300;
        for (int j = 0; j < n; ++j)
            if (j != i) m = std::max(m, sim(i, j));
        exp_terms.clear();
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            prob(i, j) = std::exp(sim(i, j) - m);
            exp_terms.push_back(prob(i, j));
        }
        double sum = detail::sorted_sum(exp_terms);
        for (int j = 0; j < n; ++j)
            if (j != i) prob(i, j) /= sum;
        log_denom[i] = m + std::log(sum);
    }

    std::vector<int> pos_count(n, 0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (j != i && labels[j] == labels[i]) ++pos_count[i];
    int anchors = 0;
    for (int i = 0; i < n; ++i)
        if (pos_count[i] > 0) ++anchors;

    LossResult out;
    out.grad = Matrix(n, v.cols());
    if (anchors == 0) return out;

    // dL/dsim(i,k) = (p_ik - [k in P_i]/|P_i|) / anchors for anchor rows
    std::vector<double> anchor_terms, pos_terms;
    Matrix sim_grad(n, n);
    for (int i = 0; i < n; ++i) {
        if (pos_count[i] == 0) continue;
        pos_terms.clear();
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            sim_grad(i, j) = prob(i, j) / anchors;
            if (labels[j] == labels[i]) {
                pos_terms.push_back(sim(i, j) - log_denom[i]);
                sim_grad(i, j) -= 1.0 / (static_cast<double>(pos_count[i]) * anchors);
            }
        }
        anchor_terms.push_back(detail::sorted_sum(pos_terms) / pos_count[i]);
    }
    out.value = -detail::sorted_sum(anchor_terms) / anchors;

    // sim(i,k) = v_i . v_k / tau feeds both v_i and v_k
    for (int i = 0; i < n; ++i) {
        double* gi = out.grad.row(i);
        for (int k = 0; k < n; ++k) {
            if (k == i) continue;
            double coeff = (sim_grad(i, k) + sim_grad(k, i)) / tau;
            if (coeff == 0.0) continue;
            const double* vk = v.row(k);
            for (int c = 0; c < v.cols(); ++c) gi[c] += coeff * vk[c];
        }
    }
    return out;
}

// Mean over instances of -log softmax(logits)[label]; gradient w.r.t. logits
// is (softmax - onehot)/n.
inline LossResult cross_entropy(const Matrix& logits, std::span<const int> labels) {
    const int n = logits.rows();
    const int k = logits.cols();
    if (k < 2) throw ParameterError("cross_entropy: need at least 2 classes");
    if (static_cast<int>(labels.size()) != n)
        throw DimensionError("cross_entropy: labels length != logits rows");
    for (int i = 0; i < n; ++i)
        if (labels[i] < 0 || labels[i] >= k)
            throw ParameterError("cross_entropy: label " + std::to_string(labels[i]) +
                                 " out of range [0, " + std::to_string(k) + ") at row " +
                                 std::to_string(i));

    LossResult out;
    out.grad = softmax_rows(logits);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        double m = logits(i, 0);
        for (int j = 1; j < k; ++j) m = std::max(m, logits(i, j));
        double sum = 0.0;
        for (int j = 0; j < k; ++j) sum += std::exp(logits(i, j) - m);
        loss += std::log(sum) - (logits(i, labels[i]) - m);
    }
    out.value = loss / n;
    for (int i = 0; i < n; ++i) {
        out.grad(i, labels[i]) -= 1.0;
        for (int j = 0; j < k; ++j) out.grad(i, j) /= n;
    }
    return out;
}

// L = L_ce + lambda * L_con_sup, gradients reported separately for the logits
// and for v. lambda == 0 short-circuits to plain cross-entropy (the
// contrastive term contributes neither value nor gradient).
struct CombinedLossResult {
    double value = 0.0;
    double ce_value = 0.0;
    double con_value = 0.0;
    Matrix grad_logits;
    Matrix grad_v;
};

inline CombinedLossResult combined_loss(const Matrix& v, const Matrix& logits,
                                        std::span<const int> labels, double tau, double lambda) {
    if (lambda < 0.0) throw ParameterError("combined_loss: lambda must be >= 0");
    CombinedLossResult out;
    LossResult ce = cross_entropy(logits, labels);
    out.ce_value = ce.value;
    out.grad_logits = std::move(ce.grad);
    if (lambda == 0.0) {
        out.value = out.ce_value;
        out.grad_v = Matrix(v.rows(), v.cols());
        return out;
    }
    LossResult con = sup_con_loss(v, labels, tau);
    out.con_value = con.value;
    out.value = out.ce_value + lambda * out.con_value;
    out.grad_v = lambda * con.grad;
    return out;
}

}  // namespace coin
