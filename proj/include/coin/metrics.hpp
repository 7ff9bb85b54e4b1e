#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "coin/errors.hpp"
#include "coin/matrix.hpp"

namespace coin {

// Cluster validity score; lower = richer semantic structure.
struct SDbwResult {
    double scat = 0.0;     // average intra-cluster scattering
    double dens_bw = 0.0;  // inter-cluster density at center midpoints
    double score = 0.0;    // scat + dens_bw
};

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

// Result depends only on the multiset of addends; keeps the permutation
// invariant bit-exact under row reordering.
inline double sorted_accumulate(std::vector<double>& terms) {
    std::sort(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += t;
    return s;
}

}  // namespace detail

// S_Dbw = Scat + Dens_bw over clusters given by the label ids.
//
//   Scat    = (1/c) sum_i |sigma(C_i)| / |sigma(S)|, sigma = per-dimension
//             population variance vector, |.| Euclidean.
//   stdev   = (1/c) sqrt(sum_i |sigma(C_i)|)
//   Dens_bw = (1/(c(c-1))) sum_{i != j} density(u_ij) / max(density(c_i), density(c_j))
//             over points of C_i u C_j, u_ij the midpoint of the two centers,
//             density(u) = points within Euclidean distance stdev of u,
//             boundary inclusive.
//
// Conventions: stdev == 0 makes Dens_bw 0 (separated point-clusters are
// clean); a pair whose both center densities are 0 contributes 0.
inline SDbwResult s_dbw(const Matrix& features, std::span<const int> labels) {
    const int n = features.rows();
    const int d = features.cols();
    if (static_cast<int>(labels.size()) != n)
        throw DimensionError("s_dbw: labels length != feature rows");
    if (n < 1 || d < 1) throw ParameterError("s_dbw: empty feature batch");

    std::vector<int> class_ids;
    for (int i = 0; i < n; ++i)
        if (std::find(class_ids.begin(), class_ids.end(), labels[i]) == class_ids.end())
            class_ids.push_back(labels[i]);
    std::sort(class_ids.begin(), class_ids.end());
    const int c = static_cast<int>(class_ids.size());
    if (c < 2) throw ParameterError("s_dbw: needs at least 2 distinct labels");

    std::vector<std::vector<int>> members(c);
    for (int i = 0; i < n; ++i) {
        int k = static_cast<int>(std::find(class_ids.begin(), class_ids.end(), labels[i]) -
                                 class_ids.begin());
        members[k].push_back(i);
    }

    auto variance_norm = [&](const std::vector<int>& rows, std::vector<double>* center_out) {
        std::vector<double> mean(d, 0.0);
        std::vector<double> terms;
        terms.reserve(rows.size());
        for (int j = 0; j < d; ++j) {
            terms.clear();
            for (int r : rows) terms.push_back(features(r, j));
            mean[j] = detail::sorted_accumulate(terms) / rows.size();
        }
        double nsq = 0.0;
        for (int j = 0; j < d; ++j) {
            terms.clear();
            for (int r : rows) {
                double dv = features(r, j) - mean[j];
                terms.push_back(dv * dv);
            }
            double var = detail::sorted_accumulate(terms) / rows.size();
            nsq += var * var;
        }
        if (center_out) *center_out = std::move(mean);
        return std::sqrt(nsq);
    };

    std::vector<int> all(n);
    for (int i = 0; i < n; ++i) all[i] = i;
    double sigma_all = variance_norm(all, nullptr);
    if (sigma_all == 0.0)
        throw DegenerateError("s_dbw: all points identical, |sigma(S)| = 0");

    std::vector<std::vector<double>> centers(c);
    double sigma_sum = 0.0;
    for (int k = 0; k < c; ++k) sigma_sum += variance_norm(members[k], &centers[k]);

    SDbwResult out;
    out.scat = sigma_sum / (c * sigma_all);

    double stdev = std::sqrt(sigma_sum) / c;
    if (stdev > 0.0) {
        const double r2 = stdev * stdev;
        auto density = [&](std::span<const double> u, int ki, int kj) {
            int count = 0;
            for (int k : {ki, kj})
                for (int r : members[k]) {
                    std::span<const double> row(features.row(r), static_cast<size_t>(d));
                    if (detail::sq_dist(row, u) <= r2) ++count;
                }
            return count;
        };
        double total = 0.0;
        std::vector<double> mid(d);
        for (int i = 0; i < c; ++i)
            for (int j = 0; j < c; ++j) {
                if (i == j) continue;
                for (int t = 0; t < d; ++t) mid[t] = 0.5 * (centers[i][t] + centers[j][t]);
                int di = density(centers[i], i, j);
                int dj = density(centers[j], i, j);
                int dmax = std::max(di, dj);
                if (dmax == 0) continue;
                total += static_cast<double>(density(mid, i, j)) / dmax;
            }
        out.dens_bw = total / (static_cast<double>(c) * (c - 1));
    }
    out.score = out.scat + out.dens_bw;
    return out;
}

// Fraction of rows whose argmax equals the label; ties break to the lowest
// class index.
inline double top1_accuracy(const Matrix& logits, std::span<const int> labels) {
    const int n = logits.rows();
    if (n < 1) throw ParameterError("top1_accuracy: empty batch");
    if (static_cast<int>(labels.size()) != n)
        throw DimensionError("top1_accuracy: labels length != logits rows");
    int hits = 0;
    for (int i = 0; i < n; ++i) {
        int best = 0;
        for (int j = 1; j < logits.cols(); ++j)
            if (logits(i, j) > logits(i, best)) best = j;
        if (best == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / n;
}

}  // namespace coin
