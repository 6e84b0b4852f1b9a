#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "isomerge/csv.hpp"
#include "isomerge/errors.hpp"
#include "isomerge/isot.hpp"
#include "isomerge/merge.hpp"
#include "isomerge/metrics.hpp"
#include "isomerge/synth.hpp"
#include "isomerge/task_matrix.hpp"

namespace isomerge {

struct BenchmarkRow {
    std::string method;
    double alpha = 0.0;
    std::string task;  // task label, or "mean" for the per-method summary
    double acc = 0.0;
    double nai = 0.0;
    double sar = 0.0;
};

struct BenchmarkTable {
    std::vector<BenchmarkRow> rows;
};

struct BenchmarkConfig {
    std::vector<MergeMethod> methods{MergeMethod::AVG, MergeMethod::TA, MergeMethod::ISO_C,
                                     MergeMethod::ISO_CTS};
    std::vector<double> alpha_grid;
    double common_fraction = 0.8;
    double epsilon = kDefaultEpsilon;
    int threads = 1;
};

inline std::vector<double> default_alpha_grid() {
    std::vector<double> grid;
    for (int i = 0; i <= 15; ++i) grid.push_back(0.5 + 0.1 * i);
    return grid;
}

inline MergeOutcome merge_with(MergeMethod method, std::span<const TaskMatrixSet> tasks,
                               double common_fraction, int threads) {
    switch (method) {
        case MergeMethod::AVG:     return merge_average(tasks);
        case MergeMethod::TA:      return merge_task_arithmetic(tasks);
        case MergeMethod::ISO_C:   return merge_iso_c(tasks, threads);
        case MergeMethod::ISO_CTS: return merge_iso_cts(tasks, common_fraction, threads);
    }
    fail(errc::invalid_argument, "unknown merge method");
}

// For each method: pick alpha on the validation splits, then report
// per-task test accuracy, NAI and SAR_avg plus their means.
inline BenchmarkTable run_benchmark(const SyntheticSuite& suite, const BenchmarkConfig& config) {
    const std::vector<double> grid =
        config.alpha_grid.empty() ? default_alpha_grid() : config.alpha_grid;

    std::vector<TaskMatrixSet> deltas;
    deltas.reserve(suite.num_tasks);
    for (std::size_t t = 0; t < suite.num_tasks; ++t)
        deltas.push_back(bundle_delta(suite.fine_tuned[t], suite.base, suite.data[t].label));

    std::vector<double> acc_zero(suite.num_tasks), acc_task(suite.num_tasks);
    for (std::size_t t = 0; t < suite.num_tasks; ++t) {
        acc_zero[t] = evaluate_accuracy(suite.base, suite.data[t].test);
        acc_task[t] = evaluate_accuracy(suite.fine_tuned[t], suite.data[t].test);
    }

    const AccuracyEvaluator val_evaluator = [&](const TensorBundle& candidate) {
        std::vector<double> accs(suite.num_tasks);
        for (std::size_t t = 0; t < suite.num_tasks; ++t)
            accs[t] = evaluate_accuracy(candidate, suite.data[t].val);
        return accs;
    };

    BenchmarkTable table;
    for (MergeMethod method : config.methods) {
        const MergeOutcome outcome =
            merge_with(method, deltas, config.common_fraction, config.threads);
        const AlphaSweep sweep = sweep_alpha(suite.base, outcome, grid, val_evaluator);
        const TensorBundle merged = apply_delta(suite.base, outcome, sweep.best_alpha);

        double sum_acc = 0.0, sum_nai = 0.0, sum_sar = 0.0;
        for (std::size_t t = 0; t < suite.num_tasks; ++t) {
            BenchmarkRow row;
            row.method = merge_method_name(method);
            row.alpha = sweep.best_alpha;
            row.task = suite.data[t].label;
            row.acc = evaluate_accuracy(merged, suite.data[t].test);
            row.nai = nai(row.acc, acc_task[t], acc_zero[t]);
            row.sar = sar_avg(deltas[t], outcome, config.epsilon);
            sum_acc += row.acc;
            sum_nai += row.nai;
            sum_sar += row.sar;
            table.rows.push_back(std::move(row));
        }
        const double n = static_cast<double>(suite.num_tasks);
        table.rows.push_back({merge_method_name(method), sweep.best_alpha, "mean", sum_acc / n,
                              sum_nai / n, sum_sar / n});
    }
    return table;
}

inline void write_benchmark_csv(const BenchmarkTable& table, const std::string& path) {
    CsvWriter csv(path);
    csv.row({"method", "alpha", "task", "acc", "nai", "sar_avg"});
    for (const BenchmarkRow& r : table.rows)
        csv.row({r.method, csv_number(r.alpha), r.task, csv_number(r.acc), csv_number(r.nai),
                 csv_number(r.sar)});
    csv.close();
}

// ---- suite export / import ----
// Layout: <dir>/base.isot, <dir>/task_XX.isot, <dir>/datasets.csv with
// rows task,split,x0..x{d-1},label.

inline void save_suite(const SyntheticSuite& suite, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        fail(errc::io_failure, "cannot create directory '" + dir + "'");

    save_bundle(suite.base, (fs::path(dir) / "base.isot").string());
    for (std::size_t t = 0; t < suite.num_tasks; ++t)
        save_bundle(suite.fine_tuned[t],
                    (fs::path(dir) / (suite.data[t].label + ".isot")).string());

    CsvWriter csv((fs::path(dir) / "datasets.csv").string());
    std::vector<std::string> header{"task", "split"};
    for (std::size_t j = 0; j < suite.dims.input; ++j) header.push_back("x" + std::to_string(j));
    header.push_back("label");
    csv.row(header);
    for (const TaskData& task : suite.data) {
        const std::pair<const char*, const DataSplit*> splits[] = {
            {"train", &task.train}, {"val", &task.val}, {"test", &task.test}};
        for (const auto& [split_name, split] : splits) {
            for (std::size_t i = 0; i < split->x.rows(); ++i) {
                std::vector<std::string> row{task.label, split_name};
                for (std::size_t j = 0; j < split->x.cols(); ++j)
                    row.push_back(csv_number(split->x(i, j)));
                row.push_back(std::to_string(split->y[i]));
                csv.row(row);
            }
        }
    }
    csv.close();
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace detail

inline SyntheticSuite load_suite(const std::string& dir) {
    namespace fs = std::filesystem;
    SyntheticSuite suite;
    suite.base = load_bundle((fs::path(dir) / "base.isot").string());

    auto meta = [&](const char* key) -> std::string {
        auto it = suite.base.meta.find(key);
        if (it == suite.base.meta.end())
            fail(errc::header_malformed, "suite base bundle lacks meta key '" + std::string(key) + "'");
        return it->second;
    };
    suite.seed = std::stoull(meta("suite.seed"));
    suite.num_tasks = std::stoull(meta("suite.tasks"));
    suite.overlap = std::stod(meta("suite.overlap"));
    suite.noise = std::stod(meta("suite.noise"));
    {
        const std::string dims = meta("suite.dims");
        std::size_t a = dims.find(','), b = dims.rfind(',');
        if (a == std::string::npos || b == a)
            fail(errc::header_malformed, "bad suite.dims meta");
        suite.dims.input = std::stoull(dims.substr(0, a));
        suite.dims.hidden = std::stoull(dims.substr(a + 1, b - a - 1));
        suite.dims.classes = std::stoull(dims.substr(b + 1));
    }

    suite.data.resize(suite.num_tasks);
    for (std::size_t t = 0; t < suite.num_tasks; ++t) {
        suite.data[t].label = synth_detail::task_label(t);
        suite.fine_tuned.push_back(
            load_bundle((fs::path(dir) / (suite.data[t].label + ".isot")).string()));
    }

    const std::string csv_path = (fs::path(dir) / "datasets.csv").string();
    std::ifstream in(csv_path, std::ios::binary);
    if (!in)
        fail(errc::io_failure, "cannot open '" + csv_path + "'");
    std::string line;
    if (!std::getline(in, line))
        fail(errc::header_malformed, "datasets.csv is empty");
    struct Buffer {
        std::vector<double> x;
        std::vector<int> y;
    };
    std::vector<std::array<Buffer, 3>> buffers(suite.num_tasks);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::vector<std::string> fields = detail::split_csv_line(line);
        if (fields.size() != suite.dims.input + 3)
            fail(errc::header_malformed, "datasets.csv row has wrong arity");
        std::size_t t = suite.num_tasks;
        for (std::size_t i = 0; i < suite.num_tasks; ++i)
            if (suite.data[i].label == fields[0]) t = i;
        if (t == suite.num_tasks)
            fail(errc::header_malformed, "datasets.csv references unknown task '" + fields[0] + "'");
        int which = fields[1] == "train" ? 0 : fields[1] == "val" ? 1 : fields[1] == "test" ? 2 : -1;
        if (which < 0)
            fail(errc::header_malformed, "datasets.csv has unknown split '" + fields[1] + "'");
        Buffer& buf = buffers[t][static_cast<std::size_t>(which)];
        for (std::size_t j = 0; j < suite.dims.input; ++j)
            buf.x.push_back(static_cast<double>(static_cast<float>(std::stod(fields[2 + j]))));
        buf.y.push_back(std::stoi(fields.back()));
    }
    for (std::size_t t = 0; t < suite.num_tasks; ++t) {
        DataSplit* dst[3] = {&suite.data[t].train, &suite.data[t].val, &suite.data[t].test};
        for (int s = 0; s < 3; ++s) {
            Buffer& buf = buffers[t][static_cast<std::size_t>(s)];
            if (buf.y.empty())
                fail(errc::empty_split,
                     "datasets.csv lacks a split for task '" + suite.data[t].label + "'");
            dst[s]->x = Matrix(buf.y.size(), suite.dims.input, std::move(buf.x));
            dst[s]->y = std::move(buf.y);
        }
    }
    return suite;
}

}  // namespace isomerge
