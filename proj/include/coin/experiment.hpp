#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "coin/datagen.hpp"
#include "coin/errors.hpp"
#include "coin/model.hpp"
#include "coin/pipeline.hpp"

namespace coin {

struct DatasetSpec {
    int classes = 8;
    int dim = 32;
    int per_class = 500;
    double center_scale = 1.0;
    double spread = 0.5;
    double test_fraction = 0.25;

    void validate() const {
        if (classes < 2) throw ValidationError("dataset.classes: must be >= 2");
        if (dim < 1) throw ValidationError("dataset.dim: must be >= 1");
        if (per_class < 2) throw ValidationError("dataset.per_class: must be >= 2");
        if (!(spread > 0.0)) throw ValidationError("dataset.spread: must be > 0");
        if (!(center_scale > 0.0)) throw ValidationError("dataset.center_scale: must be > 0");
        if (!(test_fraction > 0.0 && test_fraction < 1.0))
            throw ValidationError("dataset.test_fraction: must be in (0, 1)");
    }
};

// One experiment: dataset recipe, model stack, pretraining, one or more
// training configurations, seed list.
struct ExperimentSpec {
    DatasetSpec dataset;
    StackConfig stack;
    PretrainConfig pretrain;
    std::vector<TrainConfig> trains;
    std::vector<std::uint64_t> seeds = {1};
    std::string out_dir = "out";
    FeatureLayer sdbw_layer = FeatureLayer::Z;

    void validate() const {
        dataset.validate();
        stack.validate();
        pretrain.validate();
        if (trains.empty()) throw ValidationError("spec: needs at least one [train] section");
        for (const TrainConfig& t : trains) t.validate();
        if (seeds.empty()) throw ValidationError("run.seeds: must be non-empty");
        if (stack.d_in != dataset.dim)
            throw ValidationError("stack.d_in: must equal dataset.dim");
        if (stack.num_classes != dataset.classes)
            throw ValidationError("stack.num_classes: must equal dataset.classes");
    }
};

// ---------------------------------------------------------------------------
// Spec files: line-oriented key/value-with-sections text.
//
//   # comment
//   [section]
//   key = value [value ...]
//
// Sections: dataset, stack, pretrain, train (repeatable; one per method
// configuration), run. Unknown sections or keys are rejected with the
// offending name. See specs/example.spec for the canonical file.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& tok, const std::string& field) {
    const char* p = tok.c_str();
    char* q = nullptr;
    double v = std::strtod(p, &q);
    if (q == p || *q != '\0')
        throw ParseError(field + ": not a number: '" + tok + "'");
    return v;
}

inline int parse_int(const std::string& tok, const std::string& field) {
    double v = parse_double(tok, field);
    int i = static_cast<int>(v);
    if (static_cast<double>(i) != v)
        throw ParseError(field + ": not an integer: '" + tok + "'");
    return i;
}

inline std::uint64_t parse_u64(const std::string& tok, const std::string& field) {
    const char* p = tok.c_str();
    char* q = nullptr;
    unsigned long long v = std::strtoull(p, &q, 10);
    if (q == p || *q != '\0')
        throw ParseError(field + ": not a non-negative integer: '" + tok + "'");
    return v;
}

inline FeatureLayer parse_layer(const std::string& tok, const std::string& field) {
    if (tok == "z") return FeatureLayer::Z;
    if (tok == "v") return FeatureLayer::V;
    throw ValidationError(field + ": expected 'z' or 'v', got '" + tok + "'");
}

}  // namespace detail

inline ExperimentSpec parse_spec_text(const std::string& text) {
    ExperimentSpec spec;
    spec.trains.clear();
    bool noise_sigma_set = false;

    std::istringstream is(text);
    std::string raw, section;
    int lineno = 0;
    while (std::getline(is, raw)) {
        ++lineno;
        if (size_t hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
        std::string line = detail::trim(raw);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ParseError("spec line " + std::to_string(lineno) + ": unterminated section");
            section = line.substr(1, line.size() - 2);
            if (section != "dataset" && section != "stack" && section != "pretrain" &&
                section != "train" && section != "run")
                throw ValidationError("spec: unknown section [" + section + "]");
            if (section == "train") spec.trains.emplace_back();
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("spec line " + std::to_string(lineno) + ": expected key = value");
        std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        if (section.empty())
            throw ParseError("spec line " + std::to_string(lineno) + ": key outside any section");
        std::vector<std::string> tokens;
        {
            std::istringstream vs(value);
            std::string t;
            while (vs >> t) tokens.push_back(t);
        }
        std::string field = section + "." + key;
        auto one = [&]() -> const std::string& {
            if (tokens.size() != 1) throw ParseError(field + ": expected exactly one value");
            return tokens[0];
        };

        if (section == "dataset") {
            if (key == "classes") spec.dataset.classes = detail::parse_int(one(), field);
            else if (key == "dim") spec.dataset.dim = detail::parse_int(one(), field);
            else if (key == "per_class") spec.dataset.per_class = detail::parse_int(one(), field);
            else if (key == "center_scale") spec.dataset.center_scale = detail::parse_double(one(), field);
            else if (key == "spread") spec.dataset.spread = detail::parse_double(one(), field);
            else if (key == "test_fraction") spec.dataset.test_fraction = detail::parse_double(one(), field);
            else throw ValidationError("spec: unknown key " + field);
        } else if (section == "stack") {
            if (key == "encoder_dims") {
                spec.stack.encoder_dims.clear();
                for (const auto& t : tokens) spec.stack.encoder_dims.push_back(detail::parse_int(t, field));
            } else if (key == "projector_dims") {
                spec.stack.projector_dims.clear();
                for (const auto& t : tokens) spec.stack.projector_dims.push_back(detail::parse_int(t, field));
            } else if (key == "d_z") spec.stack.d_z = detail::parse_int(one(), field);
            else if (key == "d_v") spec.stack.d_v = detail::parse_int(one(), field);
            else throw ValidationError("spec: unknown key " + field);
        } else if (section == "pretrain") {
            if (key == "epochs") spec.pretrain.epochs = detail::parse_int(one(), field);
            else if (key == "tau") spec.pretrain.temperature = detail::parse_double(one(), field);
            else if (key == "eta") spec.pretrain.learning_rate = detail::parse_double(one(), field);
            else if (key == "batch_size") spec.pretrain.batch_size = detail::parse_int(one(), field);
            else if (key == "noise_sigma") {
                spec.pretrain.augment.noise_sigma = detail::parse_double(one(), field);
                noise_sigma_set = true;
            } else if (key == "scale_lo") spec.pretrain.augment.scale_lo = detail::parse_double(one(), field);
            else if (key == "scale_hi") spec.pretrain.augment.scale_hi = detail::parse_double(one(), field);
            else if (key == "dropout_p") spec.pretrain.augment.dropout_p = detail::parse_double(one(), field);
            else throw ValidationError("spec: unknown key " + field);
        } else if (section == "train") {
            TrainConfig& t = spec.trains.back();
            if (key == "method") t.method = method_from_name(one());
            else if (key == "epochs") t.epochs = detail::parse_int(one(), field);
            else if (key == "alpha") t.stage_split = detail::parse_double(one(), field);
            else if (key == "eta") t.learning_rate = detail::parse_double(one(), field);
            else if (key == "tau") t.temperature = detail::parse_double(one(), field);
            else if (key == "lambda") t.contrastive_weight = detail::parse_double(one(), field);
            else if (key == "batch_size") t.batch_size = detail::parse_int(one(), field);
            else throw ValidationError("spec: unknown key " + field);
        } else if (section == "run") {
            if (key == "seeds") {
                spec.seeds.clear();
                for (const auto& t : tokens) spec.seeds.push_back(detail::parse_u64(t, field));
            } else if (key == "out_dir") spec.out_dir = one();
            else if (key == "sdbw_layer") spec.sdbw_layer = detail::parse_layer(one(), field);
            else throw ValidationError("spec: unknown key " + field);
        }
    }

    // dimensions the stack inherits from the dataset
    spec.stack.d_in = spec.dataset.dim;
    spec.stack.num_classes = spec.dataset.classes;
    if (!noise_sigma_set) spec.pretrain.augment.noise_sigma = 0.2 * spec.dataset.spread;
    spec.validate();
    return spec;
}

inline ExperimentSpec parse_spec_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("spec: cannot open " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_spec_text(ss.str());
}

// ---------------------------------------------------------------------------
// Run execution. Sub-streams of the run seed, in fixed order:
//   0 dataset generation + split, 1 parameter init, 2 SSL pretraining,
//   3 training. The method is deliberately not mixed in, so every method
//   sees the same data and the same pretrained starting point for a seed.
// ---------------------------------------------------------------------------

struct PreparedRun {
    Dataset train;
    Dataset test;
    ModelParams start;  // after pretraining
};

inline PreparedRun prepare_run(const ExperimentSpec& spec, std::uint64_t seed) {
    PreparedRun out;
    Rng data_rng(mix_seed(seed, 0));
    Dataset full = make_blobs(spec.dataset.classes, spec.dataset.dim, spec.dataset.per_class,
                              spec.dataset.center_scale, spec.dataset.spread, data_rng);
    std::tie(out.train, out.test) = train_test_split(full, spec.dataset.test_fraction, data_rng);
    Rng init_rng(mix_seed(seed, 1));
    ModelParams params = init_params(spec.stack, init_rng);
    Rng pre_rng(mix_seed(seed, 2));
    out.start = pretrain_ssl(std::move(params), out.train.features, spec.pretrain, pre_rng);
    return out;
}

struct RunOutput {
    TrainConfig cfg;
    std::uint64_t seed = 0;
    RunReport report;
    ModelParams final_params;
};

inline RunOutput execute_run_from(const PreparedRun& prep, const ExperimentSpec& spec,
                                  TrainConfig cfg, std::uint64_t seed) {
    cfg.seed = seed;
    RunOutput out;
    out.cfg = cfg;
    out.seed = seed;
    out.final_params = prep.start;
    Rng train_rng(mix_seed(seed, 3));
    out.report = run_training(out.final_params, prep.train, prep.test, cfg, train_rng,
                              spec.sdbw_layer);
    return out;
}

inline RunOutput execute_run(const ExperimentSpec& spec, const TrainConfig& cfg,
                             std::uint64_t seed) {
    return execute_run_from(prepare_run(spec, seed), spec, cfg, seed);
}

namespace detail {

template <typename Fn>
void parallel_for(int jobs, int count, Fn fn) {
    jobs = std::max(1, std::min(jobs, count));
    if (jobs == 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(jobs);
    for (int w = 0; w < jobs; ++w)
        pool.emplace_back([&, w] {
            try {
                for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / v.size();
}

inline double sample_stddev(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / (v.size() - 1));
}

}  // namespace detail

// Runs every (train config, seed) pair, sharing per-seed preparation.
// Results come back ordered by (train index, seed index).
inline std::vector<RunOutput> execute_all(const ExperimentSpec& spec, int jobs) {
    spec.validate();
    const int n_seeds = static_cast<int>(spec.seeds.size());
    std::vector<PreparedRun> prepared(n_seeds);
    detail::parallel_for(jobs, n_seeds,
                         [&](int i) { prepared[i] = prepare_run(spec, spec.seeds[i]); });
    const int n_runs = static_cast<int>(spec.trains.size()) * n_seeds;
    std::vector<RunOutput> outputs(n_runs);
    detail::parallel_for(jobs, n_runs, [&](int i) {
        int t = i / n_seeds, s = i % n_seeds;
        outputs[i] = execute_run_from(prepared[s], spec, spec.trains[t], spec.seeds[s]);
    });
    return outputs;
}

// ---------------------------------------------------------------------------
// Output files. All CSVs are deterministic functions of the spec; wall-clock
// timing goes to JSON sidecars only.
// ---------------------------------------------------------------------------

inline void write_report_csv(const RunReport& report, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("report: cannot open " + path.string());
    os << "epoch,stage,train_loss,train_acc,test_acc,scat,dens_bw,s_dbw\n";
    for (const EpochRecord& r : report.per_epoch) {
        os << r.epoch << ',' << stage_name(r.stage) << ',' << format_double(r.train_loss) << ','
           << format_double(r.train_acc) << ',' << format_double(r.test_acc) << ','
           << format_double(r.test_sdbw.scat) << ',' << format_double(r.test_sdbw.dens_bw) << ','
           << format_double(r.test_sdbw.score) << '\n';
    }
    if (!os) throw IoError("report: write failed for " + path.string());
}

inline void write_summary_json(const RunOutput& run, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["method"] = method_name(run.cfg.method);
    j["seed"] = run.seed;
    j["epochs"] = run.cfg.epochs;
    j["alpha"] = run.cfg.stage_split;
    j["eta"] = run.cfg.learning_rate;
    j["tau"] = run.cfg.temperature;
    j["lambda"] = run.cfg.contrastive_weight;
    j["batch_size"] = run.cfg.batch_size;
    j["init_epochs"] = run.cfg.init_epochs();
    j["final_test_acc"] = run.report.final_test_acc;
    j["final_scat"] = run.report.final_sdbw.scat;
    j["final_dens_bw"] = run.report.final_sdbw.dens_bw;
    j["final_s_dbw"] = run.report.final_sdbw.score;
    j["train_seconds"] = run.report.wall_time_seconds;
    std::ofstream os(path);
    if (!os) throw IoError("summary: cannot open " + path.string());
    os << j.dump(2) << '\n';
}

inline std::filesystem::path run_directory(const std::filesystem::path& out_dir,
                                           const TrainConfig& cfg, std::uint64_t seed) {
    return out_dir / (method_name(cfg.method) + "-s" + std::to_string(seed));
}

// run: per-run report.csv, summary.json and a final checkpoint under
// <out>/<method>-s<seed>/. Output directories are keyed by method, so the
// spec's train sections must use distinct methods.
inline void cmd_run(const ExperimentSpec& spec, const std::filesystem::path& out_dir, int jobs) {
    for (size_t a = 0; a < spec.trains.size(); ++a)
        for (size_t b = a + 1; b < spec.trains.size(); ++b)
            if (spec.trains[a].method == spec.trains[b].method)
                throw ValidationError("train: duplicate method " +
                                      method_name(spec.trains[a].method) +
                                      "; run output directories are keyed by method");
    std::vector<RunOutput> outputs = execute_all(spec, jobs);
    for (const RunOutput& run : outputs) {
        std::filesystem::path dir = run_directory(out_dir, run.cfg, run.seed);
        std::filesystem::create_directories(dir);
        write_report_csv(run.report, dir / "report.csv");
        write_summary_json(run, dir / "summary.json");
        save_checkpoint(run.final_params, spec.stack, dir / "final.coin-ckpt");
    }
}

// compare: one CSV row per method with mean and sample stddev of the final
// test accuracy and final S_Dbw across seeds; stage-timing statistics go to
// compare_timing.json (wall time is not byte-reproducible). Every method must
// train for the same total number of epochs.
inline void cmd_compare(const ExperimentSpec& spec, const std::filesystem::path& out_dir,
                        int jobs) {
    spec.validate();
    if (spec.trains.size() < 2)
        throw ValidationError("compare: needs at least 2 [train] sections");
    for (const TrainConfig& t : spec.trains)
        if (t.epochs != spec.trains.front().epochs)
            throw ValidationError("compare: all methods must use the same total epochs (" +
                                  std::to_string(spec.trains.front().epochs) + " vs " +
                                  std::to_string(t.epochs) + ")");

    std::vector<RunOutput> outputs = execute_all(spec, jobs);
    const int n_seeds = static_cast<int>(spec.seeds.size());

    std::filesystem::create_directories(out_dir);
    std::ofstream os(out_dir / "compare.csv");
    if (!os) throw IoError("compare: cannot open output file");
    os << "method,acc_mean,acc_std,s_dbw_mean,s_dbw_std\n";
    nlohmann::ordered_json timing;
    for (size_t t = 0; t < spec.trains.size(); ++t) {
        std::vector<double> accs, sdbws, secs;
        for (int s = 0; s < n_seeds; ++s) {
            const RunOutput& run = outputs[t * n_seeds + s];
            accs.push_back(run.report.final_test_acc);
            sdbws.push_back(run.report.final_sdbw.score);
            secs.push_back(run.report.wall_time_seconds);
        }
        os << method_name(spec.trains[t].method) << ',' << format_double(detail::mean(accs)) << ','
           << format_double(detail::sample_stddev(accs)) << ',' << format_double(detail::mean(sdbws))
           << ',' << format_double(detail::sample_stddev(sdbws)) << '\n';
        timing[method_name(spec.trains[t].method)] = {
            {"train_seconds_mean", detail::mean(secs)},
            {"train_seconds_std", detail::sample_stddev(secs)}};
    }
    std::ofstream ts(out_dir / "compare_timing.json");
    ts << timing.dump(2) << '\n';
}

// sweep: one row per parameter value with the seed-aggregated final accuracy;
// the argmax is appended as a trailing comment line.
inline void cmd_sweep(const ExperimentSpec& spec, const std::string& param,
                      const std::vector<double>& values, const std::filesystem::path& out_dir,
                      int jobs) {
    spec.validate();
    if (spec.trains.size() != 1)
        throw ValidationError("sweep: spec must have exactly one [train] section");
    if (param != "alpha" && param != "tau" && param != "N")
        throw ValidationError("sweep: unknown parameter '" + param +
                              "' (expected alpha, tau or N)");
    if (values.empty()) throw ValidationError("sweep: value list must be non-empty");

    ExperimentSpec sweep_spec = spec;
    sweep_spec.trains.clear();
    for (double v : values) {
        TrainConfig cfg = spec.trains.front();
        if (param == "alpha") {
            cfg.stage_split = v;
        } else if (param == "tau") {
            cfg.temperature = v;
        } else {
            if (v != std::floor(v) || v < 1)
                throw ValidationError("sweep: N values must be positive integers");
            cfg.epochs = static_cast<int>(v);
        }
        cfg.validate();
        sweep_spec.trains.push_back(cfg);
    }

    std::vector<RunOutput> outputs = execute_all(sweep_spec, jobs);
    const int n_seeds = static_cast<int>(spec.seeds.size());

    std::filesystem::create_directories(out_dir);
    std::ofstream os(out_dir / "sweep.csv");
    if (!os) throw IoError("sweep: cannot open output file");
    os << "param,value,acc_mean,acc_std\n";
    size_t best = 0;
    std::vector<double> agg(values.size());
    for (size_t t = 0; t < values.size(); ++t) {
        std::vector<double> accs;
        for (int s = 0; s < n_seeds; ++s)
            accs.push_back(outputs[t * n_seeds + s].report.final_test_acc);
        agg[t] = detail::mean(accs);
        if (agg[t] > agg[best]) best = t;
        os << param << ',' << format_double(values[t]) << ',' << format_double(agg[t]) << ','
           << format_double(detail::sample_stddev(accs)) << '\n';
    }
    os << "# argmax value=" << format_double(values[best]) << " acc_mean="
       << format_double(agg[best]) << '\n';
}

// dump-features: encoder (z) or projected (v) features of the test split of
// the spec's dataset (first seed), one CSV row per instance plus the S_Dbw of
// the dump as a trailing comment.
inline void cmd_dump_features(const std::filesystem::path& checkpoint_path,
                              const ExperimentSpec& spec, FeatureLayer layer,
                              const std::filesystem::path& out_path) {
    auto [params, ckpt_cfg] = load_checkpoint(checkpoint_path);
    if (ckpt_cfg.d_in != spec.dataset.dim)
        throw ValidationError("dump-features: checkpoint d_in " + std::to_string(ckpt_cfg.d_in) +
                              " does not match dataset.dim " + std::to_string(spec.dataset.dim));
    if (ckpt_cfg.num_classes != spec.dataset.classes)
        throw ValidationError("dump-features: checkpoint num_classes " +
                              std::to_string(ckpt_cfg.num_classes) +
                              " does not match dataset.classes " +
                              std::to_string(spec.dataset.classes));

    Rng data_rng(mix_seed(spec.seeds.front(), 0));
    Dataset full = make_blobs(spec.dataset.classes, spec.dataset.dim, spec.dataset.per_class,
                              spec.dataset.center_scale, spec.dataset.spread, data_rng);
    auto [train, test] = train_test_split(full, spec.dataset.test_fraction, data_rng);

    Matrix feats = encode(params, test.features);
    if (layer == FeatureLayer::V) feats = project(params, feats);
    SDbwResult sdbw = s_dbw(feats, test.labels);

    std::ofstream os(out_path);
    if (!os) throw IoError("dump-features: cannot open " + out_path.string());
    for (int j = 0; j < feats.cols(); ++j) os << 'f' << j << ',';
    os << "label\n";
    for (int i = 0; i < feats.rows(); ++i) {
        for (int j = 0; j < feats.cols(); ++j) os << format_double(feats(i, j)) << ',';
        os << test.labels[i] << '\n';
    }
    os << "# s_dbw=" << format_double(sdbw.score) << '\n';
    if (!os) throw IoError("dump-features: write failed for " + out_path.string());
}

}  // namespace coin
