#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "isomerge/csv.hpp"
#include "isomerge/errors.hpp"
#include "isomerge/matrix.hpp"
#include "isomerge/rng.hpp"
#include "isomerge/tensor.hpp"

namespace isomerge {

// Two-layer linear-softmax network on Gaussian class clusters. Small
// enough to train in milliseconds, structured enough that merging
// dynamics (shared vs task-private directions) show up in the metrics.

struct SuiteDims {
    std::size_t input = 32;
    std::size_t hidden = 40;
    std::size_t classes = 8;
};

struct DataSplit {
    Matrix x;            // n x input
    std::vector<int> y;  // class indices
};

struct TaskData {
    std::string label;
    DataSplit train, val, test;
};

struct SyntheticSuite {
    std::uint64_t seed = 0;
    std::size_t num_tasks = 0;
    SuiteDims dims;
    double overlap = 0.0;
    double noise = 0.0;
    TensorBundle base;
    std::vector<TensorBundle> fine_tuned;
    std::vector<TaskData> data;
};

namespace synth_detail {

constexpr double kMeanNorm = 3.0;       // class-cluster separation
constexpr std::size_t kTrainPerClass = 16;
constexpr std::size_t kValPerClass = 8;
constexpr std::size_t kTestPerClass = 16;
constexpr std::size_t kGdSteps = 200;   // fixed training recipe
constexpr double kGdStepSize = 0.1;

inline std::string task_label(std::size_t t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "task_%02llu", static_cast<unsigned long long>(t + 1));
    return buf;
}

// Pool-alignment weight for task t: overlap^p with p log-spaced over
// [1/3, 3] by task index. At overlap 1 every task sits fully in the
// shared pool, at 0 every task is private; in between the spread of
// exponents yields groups of strongly and weakly aligned tasks.
inline double pool_weight(double overlap, std::size_t t, std::size_t num_tasks) {
    if (overlap <= 0.0) return 0.0;
    if (overlap >= 1.0) return 1.0;
    double p = 1.0;
    if (num_tasks > 1) {
        const double frac = static_cast<double>(t) / static_cast<double>(num_tasks - 1);
        p = std::pow(3.0, 2.0 * frac - 1.0);
    }
    return std::pow(overlap, p);
}

inline std::vector<double> unit_gaussian_vector(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    double norm = 0.0;
    for (double& x : v) {
        x = rng.gaussian();
        norm += x * x;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) {
        v[0] = 1.0;
        return v;
    }
    for (double& x : v) x /= norm;
    return v;
}

// Feature values are quantized to f32 so the CSV suite export (9
// significant digits) round-trips exactly.
inline DataSplit sample_split(Rng& rng, const std::vector<std::vector<double>>& means,
                              std::size_t per_class, double noise) {
    const std::size_t classes = means.size();
    const std::size_t d = means.front().size();
    DataSplit split;
    split.x = Matrix(per_class * classes, d);
    split.y.resize(per_class * classes);
    for (std::size_t i = 0; i < split.y.size(); ++i) {
        const int cls = static_cast<int>(i % classes);
        split.y[i] = cls;
        for (std::size_t j = 0; j < d; ++j) {
            const double v = means[cls][j] + noise * rng.gaussian();
            split.x(i, j) = static_cast<double>(static_cast<float>(v));
        }
    }
    return split;
}

struct Net {
    Matrix w1;               // hidden x input
    std::vector<double> b1;  // hidden
    Matrix w2;               // classes x hidden
    std::vector<double> b2;  // classes
};

inline Net net_from_bundle(const TensorBundle& bundle) {
    Net net;
    net.w1 = bundle.at("layer1.weight").to_matrix();
    net.b1 = bundle.at("layer1.bias").to_vector();
    net.w2 = bundle.at("layer2.weight").to_matrix();
    net.b2 = bundle.at("layer2.bias").to_vector();
    return net;
}

inline TensorBundle net_to_bundle(const Net& net) {
    auto f32 = [](const std::vector<double>& v) {
        return std::vector<float>(v.begin(), v.end());
    };
    auto f32m = [](const Matrix& m) {
        std::vector<float> out(m.size());
        for (std::size_t i = 0; i < m.size(); ++i) out[i] = static_cast<float>(m.data()[i]);
        return out;
    };
    TensorBundle bundle;
    bundle.add("layer1.weight", Tensor::matrix(static_cast<std::int64_t>(net.w1.rows()),
                                               static_cast<std::int64_t>(net.w1.cols()),
                                               f32m(net.w1)));
    bundle.add("layer1.bias", Tensor::vector(f32(net.b1)));
    bundle.add("layer2.weight", Tensor::matrix(static_cast<std::int64_t>(net.w2.rows()),
                                               static_cast<std::int64_t>(net.w2.cols()),
                                               f32m(net.w2)));
    bundle.add("layer2.bias", Tensor::vector(f32(net.b2)));
    return bundle;
}

// logits = W2 (W1 x + b1) + b2, row per sample
inline Matrix forward_logits(const Net& net, const Matrix& x) {
    Matrix h = matmul_a_bt(x, net.w1);
    for (std::size_t i = 0; i < h.rows(); ++i)
        for (std::size_t j = 0; j < h.cols(); ++j) h(i, j) += net.b1[j];
    Matrix z = matmul_a_bt(h, net.w2);
    for (std::size_t i = 0; i < z.rows(); ++i)
        for (std::size_t j = 0; j < z.cols(); ++j) z(i, j) += net.b2[j];
    return z;
}

// full-batch gradient descent on softmax cross-entropy
inline Net train(const Net& init, const DataSplit& split) {
    Net net = init;
    const std::size_t n = split.x.rows();
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t step = 0; step < kGdSteps; ++step) {
        Matrix h = matmul_a_bt(split.x, net.w1);
        for (std::size_t i = 0; i < h.rows(); ++i)
            for (std::size_t j = 0; j < h.cols(); ++j) h(i, j) += net.b1[j];
        Matrix g = matmul_a_bt(h, net.w2);  // logits, becomes dL/dlogits in place
        for (std::size_t i = 0; i < g.rows(); ++i) {
            double peak = -1e300;
            for (std::size_t j = 0; j < g.cols(); ++j) {
                g(i, j) += net.b2[j];
                peak = std::max(peak, g(i, j));
            }
            double denom = 0.0;
            for (std::size_t j = 0; j < g.cols(); ++j) {
                g(i, j) = std::exp(g(i, j) - peak);
                denom += g(i, j);
            }
            for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) /= denom;
            g(i, static_cast<std::size_t>(split.y[i])) -= 1.0;
            for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) *= inv_n;
        }
        const Matrix dw2 = matmul_at_b(g, h);       // classes x hidden
        const Matrix dh = matmul(g, net.w2);        // n x hidden
        const Matrix dw1 = matmul_at_b(dh, split.x);  // hidden x input
        for (std::size_t i = 0; i < net.w2.size(); ++i)
            net.w2.data()[i] -= kGdStepSize * dw2.data()[i];
        for (std::size_t i = 0; i < net.w1.size(); ++i)
            net.w1.data()[i] -= kGdStepSize * dw1.data()[i];
        for (std::size_t j = 0; j < net.b2.size(); ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < g.rows(); ++i) acc += g(i, j);
            net.b2[j] -= kGdStepSize * acc;
        }
        for (std::size_t j = 0; j < net.b1.size(); ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < dh.rows(); ++i) acc += dh(i, j);
            net.b1[j] -= kGdStepSize * acc;
        }
    }
    return net;
}

}  // namespace synth_detail

inline SyntheticSuite generate_suite(std::uint64_t seed, std::size_t num_tasks, SuiteDims dims,
                                     double overlap, double noise) {
    using namespace synth_detail;
    if (num_tasks < 1)
        fail(errc::invalid_dims, "num_tasks must be >= 1");
    if (dims.input < 1 || dims.hidden < 1 || dims.classes < 2)
        fail(errc::invalid_dims, "dims must be positive with at least two classes");
    if (!(overlap >= 0.0 && overlap <= 1.0) || !(noise >= 0.0 && noise <= 1.0))
        fail(errc::invalid_dims, "overlap and noise must lie in [0, 1]");

    SyntheticSuite suite;
    suite.seed = seed;
    suite.num_tasks = num_tasks;
    suite.dims = dims;
    suite.overlap = overlap;
    suite.noise = noise;

    Rng master(seed);

    // pre-trained network
    Rng init_rng = master.stream(1);
    Net base;
    base.w1 = Matrix(dims.hidden, dims.input);
    const double w1_scale = 1.0 / std::sqrt(static_cast<double>(dims.input));
    for (double& v : base.w1.data()) v = w1_scale * init_rng.gaussian();
    base.b1.assign(dims.hidden, 0.0);
    base.w2 = Matrix(dims.classes, dims.hidden);
    const double w2_scale = 1.0 / std::sqrt(static_cast<double>(dims.hidden));
    for (double& v : base.w2.data()) v = w2_scale * init_rng.gaussian();
    base.b2.assign(dims.classes, 0.0);

    // shared pool of class directions
    Rng pool_rng = master.stream(2);
    std::vector<std::vector<double>> pool(dims.classes);
    for (auto& dir : pool) dir = unit_gaussian_vector(pool_rng, dims.input);

    suite.base = net_to_bundle(base);
    suite.base.meta["suite.seed"] = std::to_string(seed);
    suite.base.meta["suite.tasks"] = std::to_string(num_tasks);
    suite.base.meta["suite.dims"] = std::to_string(dims.input) + "," +
                                    std::to_string(dims.hidden) + "," +
                                    std::to_string(dims.classes);
    suite.base.meta["suite.overlap"] = csv_number(overlap);
    suite.base.meta["suite.noise"] = csv_number(noise);
    suite.base.meta["suite.recipe"] = "full-batch gd, 200 steps, step 0.1";

    const Net base_net = net_from_bundle(suite.base);  // f32-rounded start

    for (std::size_t t = 0; t < num_tasks; ++t) {
        Rng task_rng = master.stream(1000 + t);
        const double w = pool_weight(overlap, t, num_tasks);

        Rng dir_rng = task_rng.stream(1);
        std::vector<std::vector<double>> means(dims.classes);
        for (std::size_t j = 0; j < dims.classes; ++j) {
            const std::vector<double> priv = unit_gaussian_vector(dir_rng, dims.input);
            std::vector<double> blend(dims.input);
            double norm = 0.0;
            for (std::size_t i = 0; i < dims.input; ++i) {
                blend[i] = w * pool[j][i] + std::sqrt(1.0 - w * w) * priv[i];
                norm += blend[i] * blend[i];
            }
            norm = std::sqrt(norm);
            for (double& v : blend) v = kMeanNorm * v / norm;
            means[j] = std::move(blend);
        }

        TaskData data;
        data.label = task_label(t);
        Rng train_rng = task_rng.stream(2);
        Rng val_rng = task_rng.stream(3);
        Rng test_rng = task_rng.stream(4);
        data.train = sample_split(train_rng, means, kTrainPerClass, noise);
        data.val = sample_split(val_rng, means, kValPerClass, noise);
        data.test = sample_split(test_rng, means, kTestPerClass, noise);

        const Net tuned = train(base_net, data.train);
        TensorBundle bundle = net_to_bundle(tuned);
        bundle.meta = suite.base.meta;
        bundle.meta["suite.task"] = data.label;

        for (const auto& [name, tensor] : suite.base.entries()) {
            if (!tensor.is_matrix()) continue;
            if (tensor.values() == bundle.at(name).values())
                fail(errc::invalid_dims,
                     "degenerate suite: training left layer '" + name + "' unchanged");
        }

        suite.fine_tuned.push_back(std::move(bundle));
        suite.data.push_back(std::move(data));
    }
    return suite;
}

// fraction of correctly classified points; argmax ties resolve toward
// the lower class index
inline double evaluate_accuracy(const TensorBundle& model, const DataSplit& split) {
    if (split.x.rows() == 0)
        fail(errc::empty_split, "cannot evaluate on an empty split");
    const synth_detail::Net net = synth_detail::net_from_bundle(model);
    if (net.w1.cols() != split.x.cols())
        fail(errc::shape_mismatch, "model input width does not match data");
    const Matrix z = synth_detail::forward_logits(net, split.x);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        std::size_t arg = 0;
        double best = z(i, 0);
        for (std::size_t j = 1; j < z.cols(); ++j) {
            if (z(i, j) > best) {
                best = z(i, j);
                arg = j;
            }
        }
        if (arg == static_cast<std::size_t>(split.y[i])) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(z.rows());
}

}  // namespace isomerge
