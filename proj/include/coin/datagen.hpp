#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "coin/errors.hpp"
#include "coin/matrix.hpp"
#include "coin/rng.hpp"

namespace coin {

struct Dataset {
    Matrix features;         // n x d
    std::vector<int> labels; // class ids in [0, num_classes)
    int num_classes = 0;

    int size() const { return features.rows(); }
    int dim() const { return features.cols(); }
};

struct AugmentConfig {
    double noise_sigma = 0.1;
    double scale_lo = 0.8;
    double scale_hi = 1.2;
    double dropout_p = 0.1;

    void validate() const {
        if (noise_sigma < 0.0) throw ValidationError("augment.noise_sigma: must be >= 0");
        if (!(scale_lo > 0.0) || scale_lo > scale_hi)
            throw ValidationError("augment.scale range: need 0 < lo <= hi");
        if (dropout_p < 0.0 || dropout_p >= 1.0)
            throw ValidationError("augment.dropout_p: must be in [0, 1)");
    }
};

// Gaussian blobs: class centers uniform in [-center_scale, center_scale]^d,
// points Gaussian(center, spread^2 I). Draw order: all centers row-major,
// then points class by class, row by row. Labels come out sorted by class.
inline Dataset make_blobs(int num_classes, int dim, int per_class, double center_scale,
                          double spread, Rng& rng) {
    if (num_classes < 2) throw ParameterError("make_blobs: num_classes must be >= 2");
    if (per_class < 1) throw ParameterError("make_blobs: per_class must be >= 1");
    if (dim < 1) throw ParameterError("make_blobs: dim must be >= 1");
    if (spread <= 0.0) throw ParameterError("make_blobs: spread must be > 0");

    Matrix centers(num_classes, dim);
    for (size_t e = 0; e < centers.size(); ++e)
        centers.data()[e] = rng.uniform(-center_scale, center_scale);

    Dataset ds;
    ds.num_classes = num_classes;
    ds.features = Matrix(num_classes * per_class, dim);
    ds.labels.reserve(static_cast<size_t>(num_classes) * per_class);
    int r = 0;
    for (int k = 0; k < num_classes; ++k)
        for (int i = 0; i < per_class; ++i, ++r) {
            double* row = ds.features.row(r);
            for (int j = 0; j < dim; ++j) row[j] = centers(k, j) + spread * rng.normal();
            ds.labels.push_back(k);
        }
    return ds;
}

// One augmented view of a feature row: x' = mask * (s*x + eps). Draw order is
// fixed: one uniform for the scale s, then d normals for the noise, then d
// uniforms for the Bernoulli keep-mask.
inline std::vector<double> augment(std::span<const double> x, const AugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    const size_t d = x.size();
    std::vector<double> out(d);
    double s = rng.uniform(cfg.scale_lo, cfg.scale_hi);
    for (size_t j = 0; j < d; ++j) out[j] = s * x[j] + cfg.noise_sigma * rng.normal();
    for (size_t j = 0; j < d; ++j)
        if (rng.uniform() < cfg.dropout_p) out[j] = 0.0;
    return out;
}

namespace detail {

// Largest-remainder stratified test counts: total round(fraction*n), per-class
// floor(fraction*size) plus remainder-ordered extras. Keeps every count within
// +-1 of fraction*size and both sides non-empty for every class.
inline std::vector<int> stratified_test_counts(const std::vector<int>& class_sizes,
                                               double test_fraction) {
    const int c = static_cast<int>(class_sizes.size());
    int n = 0;
    for (int s : class_sizes) n += s;
    for (int k = 0; k < c; ++k)
        if (class_sizes[k] < 2)
            throw ParameterError("train_test_split: class " + std::to_string(k) +
                                 " has fewer than 2 instances, cannot appear in both splits");

    long long total = std::llround(test_fraction * n);
    total = std::clamp<long long>(total, c, n - c);

    std::vector<int> counts(c);
    std::vector<std::pair<double, int>> remainders;  // (-frac, class) for stable ordering
    long long assigned = 0;
    for (int k = 0; k < c; ++k) {
        double quota = test_fraction * class_sizes[k];
        counts[k] = static_cast<int>(quota);
        assigned += counts[k];
        remainders.push_back({-(quota - counts[k]), k});
    }
    std::sort(remainders.begin(), remainders.end());
    for (auto& [negfrac, k] : remainders) {
        if (assigned >= total) break;
        if (counts[k] < class_sizes[k] - 1) {
            ++counts[k];
            ++assigned;
        }
    }
    for (int k = 0; k < c; ++k)
        if (counts[k] == 0) counts[k] = 1;
    return counts;
}

}  // namespace detail

// Index-level split, exposed for the partition/stratification properties.
// Draw order: one shuffle of each class's indices, ascending class id.
inline std::pair<std::vector<int>, std::vector<int>> split_indices(std::span<const int> labels,
                                                                   int num_classes,
                                                                   double test_fraction, Rng& rng) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw ParameterError("train_test_split: test_fraction must be in (0, 1)");
    std::vector<std::vector<int>> by_class(num_classes);
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw ParameterError("train_test_split: label out of range");
        by_class[labels[i]].push_back(static_cast<int>(i));
    }
    std::vector<int> sizes;
    for (auto& v : by_class) sizes.push_back(static_cast<int>(v.size()));
    std::vector<int> test_counts = detail::stratified_test_counts(sizes, test_fraction);

    std::vector<int> train_idx, test_idx;
    for (int k = 0; k < num_classes; ++k) {
        rng.shuffle(by_class[k]);
        for (size_t i = 0; i < by_class[k].size(); ++i)
            (static_cast<int>(i) < test_counts[k] ? test_idx : train_idx).push_back(by_class[k][i]);
    }
    return {std::move(train_idx), std::move(test_idx)};
}

inline Dataset take_rows(const Dataset& ds, std::span<const int> idx) {
    Dataset out;
    out.num_classes = ds.num_classes;
    out.features = Matrix(static_cast<int>(idx.size()), ds.dim());
    out.labels.reserve(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) {
        const double* src = ds.features.row(idx[i]);
        std::copy(src, src + ds.dim(), out.features.row(static_cast<int>(i)));
        out.labels.push_back(ds.labels[idx[i]]);
    }
    return out;
}

inline std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double test_fraction,
                                                    Rng& rng) {
    auto [train_idx, test_idx] = split_indices(ds.labels, ds.num_classes, test_fraction, rng);
    return {take_rows(ds, train_idx), take_rows(ds, test_idx)};
}

// CSV: header f0..f{d-1},label then one row per instance, 17 significant
// digits per float.
inline void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("write_dataset_csv: cannot open " + path.string());
    for (int j = 0; j < ds.dim(); ++j) os << 'f' << j << ',';
    os << "label\n";
    for (int i = 0; i < ds.size(); ++i) {
        for (int j = 0; j < ds.dim(); ++j) os << format_double(ds.features(i, j)) << ',';
        os << ds.labels[i] << '\n';
    }
    if (!os) throw IoError("write_dataset_csv: write failed for " + path.string());
}

inline Dataset read_dataset_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("read_dataset_csv: cannot open " + path.string());
    std::string header;
    if (!std::getline(is, header)) throw ParseError("dataset csv: missing header");

    int d = 0;
    {
        size_t pos = 0;
        while (true) {
            size_t comma = header.find(',', pos);
            std::string col = header.substr(pos, comma - pos);
            if (col == "label") break;
            if (col.size() < 2 || col[0] != 'f')
                throw ParseError("dataset csv: unexpected column '" + col + "'");
            ++d;
            if (comma == std::string::npos)
                throw ParseError("dataset csv: header missing label column");
            pos = comma + 1;
        }
    }
    if (d == 0) throw ParseError("dataset csv: no feature columns");

    std::vector<double> values;
    std::vector<int> labels;
    std::string line;
    int row = 0;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        const char* p = line.c_str();
        char* q = nullptr;
        for (int j = 0; j < d; ++j) {
            double v = std::strtod(p, &q);
            if (q == p || *q != ',')
                throw ParseError("dataset csv: row " + std::to_string(row) + ": bad field " +
                                 std::to_string(j));
            values.push_back(v);
            p = q + 1;
        }
        long lab = std::strtol(p, &q, 10);
        if (q == p) throw ParseError("dataset csv: row " + std::to_string(row) + ": bad label");
        labels.push_back(static_cast<int>(lab));
        ++row;
    }
    Dataset ds;
    ds.features = Matrix(row, d);
    std::copy(values.begin(), values.end(), ds.features.data());
    ds.labels = std::move(labels);
    ds.num_classes = ds.labels.empty() ? 0 : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
    return ds;
}

}  // namespace coin
