#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "coin/diffcore.hpp"
#include "coin/errors.hpp"
#include "coin/matrix.hpp"
#include "coin/rng.hpp"

namespace coin {

// Desk-scale stand-in for encoder + projector + linear classifier.
struct StackConfig {
    int d_in = 32;
    std::vector<int> encoder_dims = {64, 64};
    int d_z = 32;
    std::vector<int> projector_dims = {32};
    int d_v = 16;
    int num_classes = 8;

    void validate() const {
        if (d_in < 1) throw ValidationError("stack.d_in: must be >= 1");
        if (d_z < 1) throw ValidationError("stack.d_z: must be >= 1");
        if (d_v < 1) throw ValidationError("stack.d_v: must be >= 1");
        if (num_classes < 2) throw ValidationError("stack.num_classes: must be >= 2");
        for (int w : encoder_dims)
            if (w < 1) throw ValidationError("stack.encoder_dims: widths must be >= 1");
        for (int w : projector_dims)
            if (w < 1) throw ValidationError("stack.projector_dims: widths must be >= 1");
    }

    bool operator==(const StackConfig&) const = default;
};

// The three trainable parameter groups: encoder f, projector g, classifier h.
// The contrastive losses consume the projector output; the classifier
// consumes the encoder output directly.
struct ModelParams {
    LayerStack encoder;
    LayerStack projector;  // ends with a row-normalization op
    LinearLayer classifier;
};

namespace detail {

// Alternating linear/ReLU over the width chain; no ReLU after the last layer.
inline LayerStack build_mlp(const std::vector<int>& widths, Rng& rng) {
    LayerStack stack;
    for (size_t i = 0; i + 1 < widths.size(); ++i) {
        bool last = i + 2 == widths.size();
        int fan_in = widths[i], fan_out = widths[i + 1];
        // sqrt(2/fan_in) ahead of a ReLU, sqrt(1/fan_in) for the head layer
        double stddev = std::sqrt((last ? 1.0 : 2.0) / fan_in);
        Matrix w(fan_in, fan_out);
        for (size_t e = 0; e < w.size(); ++e) w.data()[e] = stddev * rng.normal();
        stack.push_back(Layer::make_linear(std::move(w), std::vector<double>(fan_out, 0.0)));
        if (!last) stack.push_back(Layer::make_relu());
    }
    return stack;
}

inline std::vector<int> chain(int first, const std::vector<int>& mid, int last) {
    std::vector<int> widths{first};
    widths.insert(widths.end(), mid.begin(), mid.end());
    widths.push_back(last);
    return widths;
}

}  // namespace detail

// Weights drawn encoder-first, then projector, then classifier; each weight
// matrix row-major. Biases are zero. Deterministic given the generator state.
inline ModelParams init_params(const StackConfig& config, Rng& rng) {
    config.validate();
    ModelParams params;
    params.encoder = detail::build_mlp(detail::chain(config.d_in, config.encoder_dims, config.d_z), rng);
    params.projector = detail::build_mlp(detail::chain(config.d_z, config.projector_dims, config.d_v), rng);
    params.projector.push_back(Layer::make_normalize());
    double stddev = std::sqrt(1.0 / config.d_z);
    Matrix w(config.d_z, config.num_classes);
    for (size_t e = 0; e < w.size(); ++e) w.data()[e] = stddev * rng.normal();
    params.classifier = LinearLayer{std::move(w), std::vector<double>(config.num_classes, 0.0)};
    return params;
}

inline Matrix encode(const ModelParams& params, const Matrix& x, ForwardTrace* trace = nullptr) {
    return forward_stack(params.encoder, x, trace);
}

// v = normalize(g(z)); every output row has unit norm.
inline Matrix project(const ModelParams& params, const Matrix& z, ForwardTrace* trace = nullptr) {
    return forward_stack(params.projector, z, trace);
}

inline Matrix classify(const ModelParams& params, const Matrix& z) {
    return linear_forward(z, params.classifier.weight, params.classifier.bias);
}

// ---------------------------------------------------------------------------
// Checkpoints: self-describing text, one `.coin-ckpt` file. Header of config
// key/values, then `tensor <name> <rows> <cols>` blocks with one row per line,
// floats at 17 significant digits (bitwise round-trippable), then `end`.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_tensor(std::ostream& os, const std::string& name, const Matrix& m) {
    os << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (int r = 0; r < m.rows(); ++r) {
        for (int c = 0; c < m.cols(); ++c) {
            if (c) os << ' ';
            os << format_double(m(r, c));
        }
        os << '\n';
    }
}

inline Matrix row_vector(const std::vector<double>& v) {
    Matrix m(1, static_cast<int>(v.size()));
    for (size_t i = 0; i < v.size(); ++i) m.data()[i] = v[i];
    return m;
}

struct NamedTensor {
    std::string name;
    bool is_bias;  // bias tensors are 1 x d and stored back as vectors
};

// Expected tensor sequence for a config; loaders demand exactly this order.
inline std::vector<NamedTensor> tensor_layout(const StackConfig& cfg) {
    std::vector<NamedTensor> layout;
    auto add_stack = [&](const std::string& prefix, size_t n_linear) {
        for (size_t i = 0; i < n_linear; ++i) {
            layout.push_back({prefix + "." + std::to_string(i) + ".weight", false});
            layout.push_back({prefix + "." + std::to_string(i) + ".bias", true});
        }
    };
    add_stack("encoder", cfg.encoder_dims.size() + 1);
    add_stack("projector", cfg.projector_dims.size() + 1);
    layout.push_back({"classifier.weight", false});
    layout.push_back({"classifier.bias", true});
    return layout;
}

inline std::vector<const LinearLayer*> linear_layers(const LayerStack& stack) {
    std::vector<const LinearLayer*> out;
    for (const Layer& l : stack)
        if (l.kind == LayerKind::Linear) out.push_back(&l.linear);
    return out;
}

inline std::vector<LinearLayer*> linear_layers(LayerStack& stack) {
    std::vector<LinearLayer*> out;
    for (Layer& l : stack)
        if (l.kind == LayerKind::Linear) out.push_back(&l.linear);
    return out;
}

}  // namespace detail

inline void save_checkpoint(const ModelParams& params, const StackConfig& config,
                            const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("save_checkpoint: cannot open " + path.string());
    os << "coin-ckpt 1\n";
    os << "d_in " << config.d_in << '\n';
    os << "encoder_dims";
    for (int w : config.encoder_dims) os << ' ' << w;
    os << '\n';
    os << "d_z " << config.d_z << '\n';
    os << "projector_dims";
    for (int w : config.projector_dims) os << ' ' << w;
    os << '\n';
    os << "d_v " << config.d_v << '\n';
    os << "num_classes " << config.num_classes << '\n';

    auto enc = detail::linear_layers(params.encoder);
    auto proj = detail::linear_layers(params.projector);
    for (size_t i = 0; i < enc.size(); ++i) {
        detail::write_tensor(os, "encoder." + std::to_string(i) + ".weight", enc[i]->weight);
        detail::write_tensor(os, "encoder." + std::to_string(i) + ".bias", detail::row_vector(enc[i]->bias));
    }
    for (size_t i = 0; i < proj.size(); ++i) {
        detail::write_tensor(os, "projector." + std::to_string(i) + ".weight", proj[i]->weight);
        detail::write_tensor(os, "projector." + std::to_string(i) + ".bias", detail::row_vector(proj[i]->bias));
    }
    detail::write_tensor(os, "classifier.weight", params.classifier.weight);
    detail::write_tensor(os, "classifier.bias", detail::row_vector(params.classifier.bias));
    os << "end\n";
    if (!os) throw IoError("save_checkpoint: write failed for " + path.string());
}

namespace detail {

inline std::string next_line(std::istream& is, const std::string& context) {
    std::string line;
    if (!std::getline(is, line))
        throw ParseError("checkpoint: unexpected end of file, expected " + context);
    return line;
}

inline std::vector<std::string> split_ws(const std::string& line) {
    std::istringstream ss(line);
    std::vector<std::string> tokens;
    std::string t;
    while (ss >> t) tokens.push_back(t);
    return tokens;
}

inline int parse_int_field(const std::string& token, const std::string& field) {
    try {
        size_t pos = 0;
        int v = std::stoi(token, &pos);
        if (pos != token.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ParseError("checkpoint: field " + field + ": not an integer: '" + token + "'");
    }
}

inline std::vector<int> parse_dims_line(std::istream& is, const std::string& key) {
    auto tokens = split_ws(next_line(is, key));
    if (tokens.empty() || tokens[0] != key)
        throw ParseError("checkpoint: expected field " + key);
    std::vector<int> dims;
    for (size_t i = 1; i < tokens.size(); ++i) dims.push_back(parse_int_field(tokens[i], key));
    return dims;
}

inline int parse_scalar_line(std::istream& is, const std::string& key) {
    auto dims = parse_dims_line(is, key);
    if (dims.size() != 1) throw ParseError("checkpoint: field " + key + ": expected one value");
    return dims[0];
}

inline Matrix parse_tensor(std::istream& is, const NamedTensor& expected) {
    auto header = split_ws(next_line(is, "tensor " + expected.name));
    if (header.size() != 4 || header[0] != "tensor")
        throw ParseError("checkpoint: expected tensor header for " + expected.name);
    if (header[1] != expected.name)
        throw ParseError("checkpoint: expected tensor " + expected.name + ", found " + header[1]);
    int rows = parse_int_field(header[2], expected.name);
    int cols = parse_int_field(header[3], expected.name);
    if (rows < 1 || cols < 1)
        throw ParseError("checkpoint: tensor " + expected.name + ": bad shape");
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        std::string line = next_line(is, "row " + std::to_string(r) + " of " + expected.name);
        const char* p = line.c_str();
        char* q = nullptr;
        for (int c = 0; c < cols; ++c) {
            double v = std::strtod(p, &q);
            if (q == p)
                throw ParseError("checkpoint: tensor " + expected.name + ": row " +
                                 std::to_string(r) + " has fewer than " + std::to_string(cols) +
                                 " values");
            m(r, c) = v;
            p = q;
        }
        while (*p == ' ') ++p;
        if (*p != '\0' && *p != '\r')
            throw ParseError("checkpoint: tensor " + expected.name + ": row " +
                             std::to_string(r) + " has trailing data");
    }
    return m;
}

}  // namespace detail

// Parses the whole file before returning: a truncated or malformed file
// throws and yields no partial params.
inline std::pair<ModelParams, StackConfig> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("load_checkpoint: cannot open " + path.string());

    std::string magic = detail::next_line(is, "magic");
    if (magic != "coin-ckpt 1")
        throw ParseError("checkpoint: bad magic line '" + magic + "'");

    StackConfig cfg;
    cfg.d_in = detail::parse_scalar_line(is, "d_in");
    cfg.encoder_dims = detail::parse_dims_line(is, "encoder_dims");
    cfg.d_z = detail::parse_scalar_line(is, "d_z");
    cfg.projector_dims = detail::parse_dims_line(is, "projector_dims");
    cfg.d_v = detail::parse_scalar_line(is, "d_v");
    cfg.num_classes = detail::parse_scalar_line(is, "num_classes");
    cfg.validate();

    auto layout = detail::tensor_layout(cfg);
    std::vector<Matrix> tensors;
    tensors.reserve(layout.size());
    for (const auto& expected : layout)
        tensors.push_back(detail::parse_tensor(is, expected));
    std::string tail = detail::next_line(is, "end marker");
    if (tail != "end") throw ParseError("checkpoint: missing end marker");

    // Rebuild the stacks structurally, then fill from the parsed tensors.
    Rng dummy(0);
    ModelParams params = init_params(cfg, dummy);
    auto enc = detail::linear_layers(params.encoder);
    auto proj = detail::linear_layers(params.projector);
    std::vector<LinearLayer*> order;
    order.insert(order.end(), enc.begin(), enc.end());
    order.insert(order.end(), proj.begin(), proj.end());
    order.push_back(&params.classifier);

    size_t t = 0;
    for (LinearLayer* lin : order) {
        const Matrix& w = tensors[t];
        if (w.rows() != lin->weight.rows() || w.cols() != lin->weight.cols())
            throw ParseError("checkpoint: tensor " + layout[t].name + ": shape " +
                             std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                             " does not match config");
        lin->weight = w;
        ++t;
        const Matrix& b = tensors[t];
        if (b.rows() != 1 || b.cols() != static_cast<int>(lin->bias.size()))
            throw ParseError("checkpoint: tensor " + layout[t].name + ": shape does not match config");
        lin->bias.assign(b.data(), b.data() + b.cols());
        ++t;
    }
    return {std::move(params), std::move(cfg)};
}

}  // namespace coin
