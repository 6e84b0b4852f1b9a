// isomerge command-line front end: merge checkpoints, compute alignment
// and spectrum diagnostics, and run the synthetic benchmark harness.
//
// Exit codes: 0 success, 2 usage/input error, 3 numerical failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "isomerge/isomerge.hpp"

namespace fs = std::filesystem;
using namespace isomerge;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

int resolve_threads(int requested) {
    if (const char* env = std::getenv("ISO_MERGE_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n >= 1) return n;
        } catch (const std::exception&) {
            fail(errc::invalid_argument, "ISO_MERGE_THREADS must be a positive integer");
        }
        fail(errc::invalid_argument, "ISO_MERGE_THREADS must be a positive integer");
    }
    if (requested >= 1) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
}

MergeMethod parse_method(const std::string& name) {
    if (name == "avg") return MergeMethod::AVG;
    if (name == "ta") return MergeMethod::TA;
    if (name == "iso-c") return MergeMethod::ISO_C;
    if (name == "iso-cts") return MergeMethod::ISO_CTS;
    fail(errc::invalid_argument,
         "--method must be one of avg, ta, iso-c, iso-cts (got '" + name + "')");
}

std::vector<MergeMethod> parse_methods(const std::string& csv) {
    std::vector<MergeMethod> methods;
    std::string cur;
    for (char c : csv + ",") {
        if (c == ',') {
            if (!cur.empty()) methods.push_back(parse_method(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (methods.empty())
        fail(errc::invalid_argument, "--methods must name at least one method");
    return methods;
}

// "start:stop:step" or a comma-separated list of values
std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> grid;
    try {
        if (text.find(':') != std::string::npos) {
            const std::size_t a = text.find(':'), b = text.rfind(':');
            if (a == b) fail(errc::invalid_argument, "grid must be start:stop:step");
            const double start = std::stod(text.substr(0, a));
            const double stop = std::stod(text.substr(a + 1, b - a - 1));
            const double step = std::stod(text.substr(b + 1));
            if (step <= 0.0 || stop < start)
                fail(errc::invalid_argument, "grid must satisfy start <= stop, step > 0");
            const int count = static_cast<int>(std::floor((stop - start) / step + 0.5)) + 1;
            for (int i = 0; i < count; ++i) grid.push_back(start + step * i);
        } else {
            std::string cur;
            for (char c : text + ",") {
                if (c == ',') {
                    if (!cur.empty()) grid.push_back(std::stod(cur));
                    cur.clear();
                } else {
                    cur += c;
                }
            }
        }
    } catch (const std::invalid_argument&) {
        fail(errc::invalid_argument, "could not parse grid '" + text + "'");
    }
    if (grid.empty()) fail(errc::empty_grid, "alpha grid '" + text + "' is empty");
    return grid;
}

SuiteDims parse_dims(const std::string& text) {
    const std::size_t a = text.find(','), b = text.rfind(',');
    if (a == std::string::npos || b == a)
        fail(errc::invalid_dims, "--dims must be input,hidden,classes");
    SuiteDims dims;
    try {
        dims.input = std::stoull(text.substr(0, a));
        dims.hidden = std::stoull(text.substr(a + 1, b - a - 1));
        dims.classes = std::stoull(text.substr(b + 1));
    } catch (const std::exception&) {
        fail(errc::invalid_dims, "--dims must be input,hidden,classes");
    }
    return dims;
}

std::string task_label_from_path(const std::string& path) {
    return fs::path(path).stem().string();
}

struct LoadedTasks {
    TensorBundle base;
    std::vector<TensorBundle> bundles;
    std::vector<TaskMatrixSet> deltas;
};

LoadedTasks load_tasks(const std::string& base_path, const std::vector<std::string>& task_paths) {
    LoadedTasks out;
    out.base = load_bundle(base_path);
    for (const std::string& path : task_paths) {
        out.bundles.push_back(load_bundle(path));
        out.deltas.push_back(bundle_delta(out.bundles.back(), out.base, task_label_from_path(path)));
    }
    return out;
}

void write_merge_meta(const MergeOutcome& outcome, MergeMethod method, double alpha,
                      double common_fraction, const std::string& path) {
    nlohmann::ordered_json meta;
    meta["method"] = merge_method_name(method);
    meta["alpha"] = alpha;
    if (method == MergeMethod::ISO_CTS) meta["common_fraction"] = common_fraction;
    nlohmann::ordered_json layers = nlohmann::ordered_json::object();
    for (const auto& [name, lm] : outcome.per_layer_meta) {
        nlohmann::ordered_json entry;
        entry["method"] = merge_method_name(lm.method);
        entry["r"] = lm.r;
        entry["sigma_bar"] = lm.sigma_bar;
        entry["k_common"] = lm.k_common;
        entry["s_per_task"] = lm.s_per_task;
        entry["zero_sum"] = lm.zero_sum;
        entry["iso_c_fallback"] = lm.iso_c_fallback;
        layers[name] = std::move(entry);
    }
    meta["layers"] = std::move(layers);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(errc::io_failure, "cannot open '" + path + "' for writing");
    out << meta.dump(2) << '\n';
    if (!out) fail(errc::io_failure, "write error on '" + path + "'");
}

// ---- merge ----

struct MergeArgs {
    std::string method = "ta";
    std::string base;
    std::vector<std::string> tasks;
    std::string out;
    std::string meta_out;
    double alpha = 1.0;
    double common_fraction = 0.8;
    int threads = 0;
};

int cmd_merge(const MergeArgs& args) {
    if (!(args.alpha > 0.0))
        fail(errc::invalid_argument, "--alpha must be > 0");
    if (!(args.common_fraction > 0.0) || args.common_fraction > 1.0)
        fail(errc::invalid_argument, "--common-frac must lie in (0, 1]");
    const MergeMethod method = parse_method(args.method);
    const int threads = resolve_threads(args.threads);

    LoadedTasks loaded = load_tasks(args.base, args.tasks);
    const MergeOutcome outcome =
        merge_with(method, loaded.deltas, args.common_fraction, threads);
    TensorBundle merged = apply_delta(loaded.base, outcome, args.alpha);
    merged.meta["merge.method"] = merge_method_name(method);
    merged.meta["merge.alpha"] = csv_number(args.alpha);
    save_bundle(merged, args.out);

    const std::string meta_path = args.meta_out.empty() ? args.out + ".meta.json" : args.meta_out;
    write_merge_meta(outcome, method, args.alpha, args.common_fraction, meta_path);
    std::cout << "merged " << args.tasks.size() << " task(s) with " << merge_method_name(method)
              << " (alpha=" << csv_number(args.alpha) << ") -> " << args.out << "\n";
    return kExitOk;
}

// ---- analyze ----

struct AnalyzeArgs {
    std::string base;
    std::vector<std::string> tasks;
    std::string merged;
    std::string accuracies;
    std::string out_dir = ".";
    double epsilon = kDefaultEpsilon;
};

struct AccuracyRow {
    double merged = 0.0, task = 0.0, zero = 0.0;
};

std::vector<std::pair<std::string, AccuracyRow>> read_accuracy_table(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(errc::io_failure, "cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line))
        fail(errc::header_malformed, "'" + path + "' is empty");
    std::vector<std::pair<std::string, AccuracyRow>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != 4)
            fail(errc::header_malformed,
                 "'" + path + "' rows must be task,acc_merged,acc_task,acc_zero");
        AccuracyRow row;
        try {
            row.merged = std::stod(fields[1]);
            row.task = std::stod(fields[2]);
            row.zero = std::stod(fields[3]);
        } catch (const std::exception&) {
            fail(errc::header_malformed, "'" + path + "' has a non-numeric accuracy");
        }
        rows.emplace_back(fields[0], row);
    }
    return rows;
}

int cmd_analyze(const AnalyzeArgs& args) {
    if (!(args.epsilon > 0.0) || !(args.epsilon < 1.0))
        fail(errc::invalid_argument, "--epsilon must lie in (0, 1)");
    LoadedTasks loaded = load_tasks(args.base, args.tasks);
    const TensorBundle merged_bundle = load_bundle(args.merged);
    const TaskMatrixSet merged = bundle_delta(merged_bundle, loaded.base, "merged");

    const AlignmentReport report = alignment_report(loaded.deltas, merged, args.epsilon);
    fs::create_directories(args.out_dir);
    {
        CsvWriter csv((fs::path(args.out_dir) / "alignment.csv").string());
        csv.row({"task", "layer", "sar"});
        for (const AlignmentRow& row : report.rows)
            csv.row({row.task, row.layer, csv_number(row.sar)});
        csv.close();
    }

    if (args.accuracies.empty()) return kExitOk;

    const auto table = read_accuracy_table(args.accuracies);
    std::vector<double> sar_avgs, nais;
    CsvWriter nai_csv((fs::path(args.out_dir) / "nai.csv").string());
    nai_csv.row({"task", "acc_merged", "acc_task", "acc_zero", "nai"});
    for (const TaskMatrixSet& task : loaded.deltas) {
        const AccuracyRow* acc = nullptr;
        for (const auto& [label, row] : table)
            if (label == task.task_label) acc = &row;
        if (!acc)
            fail(errc::invalid_argument,
                 "accuracy table lacks a row for task '" + task.task_label + "'");
        const double value = nai(acc->merged, acc->task, acc->zero);
        nai_csv.row({task.task_label, csv_number(acc->merged), csv_number(acc->task),
                     csv_number(acc->zero), csv_number(value)});
        nais.push_back(value);
        for (const AlignmentRow& row : report.rows)
            if (row.task == task.task_label && row.layer == "avg") sar_avgs.push_back(row.sar);
    }
    nai_csv.close();

    if (nais.size() >= 2) {
        try {
            const double rho = pearson(sar_avgs, nais);
            CsvWriter corr((fs::path(args.out_dir) / "correlation.csv").string());
            corr.row({"metric_x", "metric_y", "pearson"});
            corr.row({"sar_avg", "nai", csv_number(rho)});
            corr.close();
        } catch (const Error& e) {
            if (e.code() != errc::zero_variance) throw;
            std::cerr << "note: correlation.csv skipped (" << e.detail() << ")\n";
        }
    }
    return kExitOk;
}

// ---- spectrum ----

struct SpectrumArgs {
    std::string input;
    std::string base;
    std::string layers = ".*";
    std::string out = "spectrum.csv";
    double beta = -1.0;  // <0 means "no interpolation"
};

int cmd_spectrum(const SpectrumArgs& args) {
    if (args.beta >= 0.0 && args.beta > 1.0)
        fail(errc::invalid_argument, "--beta must lie in [0, 1]");
    const TensorBundle base = load_bundle(args.base);
    const TensorBundle input = load_bundle(args.input);
    const TaskMatrixSet deltas = bundle_delta(input, base, "input");

    std::regex selector;
    try {
        selector = std::regex(args.layers);
    } catch (const std::regex_error&) {
        fail(errc::invalid_argument, "--layers '" + args.layers + "' is not a valid regex");
    }

    SpectrumReport report;
    if (args.beta >= 0.0) report.beta = args.beta;
    for (const auto& [name, delta] : deltas.matrices) {
        if (!std::regex_match(name, selector)) continue;
        const SvdFactors f = thin_svd(delta);
        std::vector<double> sigma = f.sigma;
        if (args.beta >= 0.0) {
            double bar = 0.0;
            for (double s : sigma) bar += s;
            bar /= static_cast<double>(sigma.size());
            for (double& s : sigma) s = (1.0 - args.beta) * s + args.beta * bar;
        }
        for (std::size_t i = 0; i < sigma.size(); ++i)
            report.rows.push_back({name, i + 1, sigma[i]});
    }
    if (report.rows.empty())
        fail(errc::invalid_argument,
             "--layers '" + args.layers + "' matched no 2-D layer");

    CsvWriter csv(args.out);
    csv.row({"layer", "index", "sigma"});
    for (const SpectrumRow& row : report.rows)
        csv.row({row.layer, std::to_string(row.index), csv_number(row.sigma)});
    csv.close();
    return kExitOk;
}

// ---- synth ----

struct SynthArgs {
    std::size_t tasks = 8;
    std::uint64_t seed = 0;
    std::string dims = "32,40,8";
    double overlap = 0.5;
    double noise = 0.25;
    std::string methods = "avg,ta,iso-c,iso-cts";
    std::string alpha_grid = "0.5:2.0:0.1";
    double common_fraction = 0.8;
    double epsilon = kDefaultEpsilon;
    std::string out_dir = ".";
    int threads = 0;
};

int cmd_synth(const SynthArgs& args) {
    if (args.tasks < 1)
        fail(errc::invalid_dims, "--tasks must be >= 1");
    if (!(args.epsilon > 0.0) || !(args.epsilon < 1.0))
        fail(errc::invalid_argument, "--epsilon must lie in (0, 1)");
    if (!(args.common_fraction > 0.0) || args.common_fraction > 1.0)
        fail(errc::invalid_argument, "--common-frac must lie in (0, 1]");

    BenchmarkConfig config;
    config.methods = parse_methods(args.methods);
    config.alpha_grid = parse_grid(args.alpha_grid);
    config.common_fraction = args.common_fraction;
    config.epsilon = args.epsilon;
    config.threads = resolve_threads(args.threads);

    const SyntheticSuite suite =
        generate_suite(args.seed, args.tasks, parse_dims(args.dims), args.overlap, args.noise);
    save_suite(suite, args.out_dir);
    const BenchmarkTable table = run_benchmark(suite, config);
    write_benchmark_csv(table, (fs::path(args.out_dir) / "benchmark.csv").string());

    for (const BenchmarkRow& row : table.rows)
        if (row.task == "mean")
            std::cout << row.method << ": alpha=" << csv_number(row.alpha)
                      << " mean_acc=" << csv_number(row.acc)
                      << " mean_nai=" << csv_number(row.nai)
                      << " mean_sar_avg=" << csv_number(row.sar) << "\n";
    return kExitOk;
}

// ---- sweep-alpha ----

struct SweepArgs {
    std::string suite_dir;
    std::string method = "ta";
    std::string grid = "0.5:2.0:0.1";
    double common_fraction = 0.8;
    std::string out = "sweep.csv";
    int threads = 0;
};

int cmd_sweep_alpha(const SweepArgs& args) {
    if (!(args.common_fraction > 0.0) || args.common_fraction > 1.0)
        fail(errc::invalid_argument, "--common-frac must lie in (0, 1]");
    const MergeMethod method = parse_method(args.method);
    const std::vector<double> grid = parse_grid(args.grid);
    const int threads = resolve_threads(args.threads);

    const SyntheticSuite suite = load_suite(args.suite_dir);
    std::vector<TaskMatrixSet> deltas;
    for (std::size_t t = 0; t < suite.num_tasks; ++t)
        deltas.push_back(bundle_delta(suite.fine_tuned[t], suite.base, suite.data[t].label));
    const MergeOutcome outcome = merge_with(method, deltas, args.common_fraction, threads);

    const AccuracyEvaluator evaluator = [&](const TensorBundle& candidate) {
        std::vector<double> accs(suite.num_tasks);
        for (std::size_t t = 0; t < suite.num_tasks; ++t)
            accs[t] = evaluate_accuracy(candidate, suite.data[t].val);
        return accs;
    };
    const AlphaSweep sweep = sweep_alpha(suite.base, outcome, grid, evaluator);

    CsvWriter csv(args.out);
    csv.row({"alpha", "mean_val_acc"});
    for (const auto& [alpha, acc] : sweep.table) csv.row({csv_number(alpha), csv_number(acc)});
    csv.close();
    std::cout << "best_alpha=" << csv_number(sweep.best_alpha) << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"isotropic model merging: merge checkpoints, diagnose subspace "
                 "alignment, and benchmark merging operators on synthetic tasks"};
    app.require_subcommand(1);

    MergeArgs merge_args;
    CLI::App* merge = app.add_subcommand("merge", "merge task checkpoints into one model");
    merge->add_option("--method", merge_args.method, "avg | ta | iso-c | iso-cts")->required();
    merge->add_option("--base", merge_args.base, "pre-trained checkpoint (ISOT)")->required();
    merge->add_option("--tasks", merge_args.tasks, "fine-tuned checkpoints (ISOT)")
        ->required()
        ->expected(-1);
    merge->add_option("--out", merge_args.out, "output checkpoint path")->required();
    merge->add_option("--alpha", merge_args.alpha, "delta scaling factor (default 1.0)");
    merge->add_option("--common-frac", merge_args.common_fraction,
                      "iso-cts common-subspace fraction (default 0.8)");
    merge->add_option("--meta-out", merge_args.meta_out,
                      "sidecar JSON path (default <out>.meta.json)");
    merge->add_option("--threads", merge_args.threads, "per-layer parallelism (default: cores)");

    AnalyzeArgs analyze_args;
    CLI::App* analyze = app.add_subcommand("analyze", "SAR/NAI alignment reports");
    analyze->add_option("--base", analyze_args.base, "pre-trained checkpoint")->required();
    analyze->add_option("--tasks", analyze_args.tasks, "fine-tuned checkpoints")
        ->required()
        ->expected(-1);
    analyze->add_option("--merged", analyze_args.merged, "merged checkpoint")->required();
    analyze->add_option("--epsilon", analyze_args.epsilon,
                        "effective-rank tolerance (default 0.05)");
    analyze->add_option("--accuracies", analyze_args.accuracies,
                        "CSV task,acc_merged,acc_task,acc_zero; enables nai.csv");
    analyze->add_option("--out-dir", analyze_args.out_dir, "report directory (default .)");

    SpectrumArgs spectrum_args;
    CLI::App* spectrum = app.add_subcommand("spectrum", "singular value spectra as CSV");
    spectrum->add_option("--input", spectrum_args.input, "checkpoint to analyze")->required();
    spectrum->add_option("--base", spectrum_args.base, "pre-trained checkpoint")->required();
    spectrum->add_option("--beta", spectrum_args.beta,
                         "interpolate spectrum toward its mean, in [0, 1]");
    spectrum->add_option("--layers", spectrum_args.layers, "layer-name regex (default .*)");
    spectrum->add_option("--out", spectrum_args.out, "output CSV (default spectrum.csv)");

    SynthArgs synth_args;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic suite and benchmark it");
    synth->add_option("--tasks", synth_args.tasks, "number of tasks")->required();
    synth->add_option("--seed", synth_args.seed, "suite seed (default 0)");
    synth->add_option("--dims", synth_args.dims, "input,hidden,classes (default 32,40,8)");
    synth->add_option("--overlap", synth_args.overlap, "shared-direction fraction in [0,1]");
    synth->add_option("--noise", synth_args.noise, "within-class noise in [0,1]");
    synth->add_option("--methods", synth_args.methods, "comma list (default all four)");
    synth->add_option("--alpha-grid", synth_args.alpha_grid,
                      "start:stop:step (default 0.5:2.0:0.1)");
    synth->add_option("--common-frac", synth_args.common_fraction,
                      "iso-cts common-subspace fraction (default 0.8)");
    synth->add_option("--epsilon", synth_args.epsilon, "effective-rank tolerance");
    synth->add_option("--out-dir", synth_args.out_dir, "suite + report directory (default .)");
    synth->add_option("--threads", synth_args.threads, "per-layer parallelism (default: cores)");

    SweepArgs sweep_args;
    CLI::App* sweep = app.add_subcommand("sweep-alpha", "grid-search alpha on a saved suite");
    sweep->add_option("--suite-dir", sweep_args.suite_dir, "directory written by synth")
        ->required();
    sweep->add_option("--method", sweep_args.method, "avg | ta | iso-c | iso-cts")->required();
    sweep->add_option("--grid", sweep_args.grid, "start:stop:step or comma list");
    sweep->add_option("--common-frac", sweep_args.common_fraction,
                      "iso-cts common-subspace fraction (default 0.8)");
    sweep->add_option("--out", sweep_args.out, "output CSV (default sweep.csv)");
    sweep->add_option("--threads", sweep_args.threads, "per-layer parallelism (default: cores)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInput;
    }

    try {
        if (merge->parsed()) return cmd_merge(merge_args);
        if (analyze->parsed()) return cmd_analyze(analyze_args);
        if (spectrum->parsed()) return cmd_spectrum(spectrum_args);
        if (synth->parsed()) return cmd_synth(synth_args);
        if (sweep->parsed()) return cmd_sweep_alpha(sweep_args);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return is_numerical(e.code()) ? kExitNumerical : kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitInput;
}
