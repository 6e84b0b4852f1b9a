#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "isomerge/merge.hpp"
#include "isomerge/metrics.hpp"
#include "isomerge/spectral.hpp"
#include "isomerge/svd.hpp"
#include "support/generators.hpp"

using namespace isomerge;

namespace {

std::vector<TaskMatrixSet> single_layer_tasks(const std::vector<Matrix>& deltas) {
    std::vector<TaskMatrixSet> tasks(deltas.size());
    for (std::size_t t = 0; t < deltas.size(); ++t) {
        tasks[t].task_label = "t" + std::to_string(t);
        tasks[t].matrices.emplace_back("w", deltas[t]);
    }
    return tasks;
}

double rel_frobenius(const Matrix& a, const Matrix& b) {
    const double denom = std::max(frobenius_norm(b), 1e-300);
    return frobenius_norm(a - b) / denom;
}

}  // namespace

TEST_CASE("merge_average") {
    SECTION("single task is the identity") {
        Rng rng(50);
        auto tasks = testgen::random_task_sets(rng, 1, {{4, 3}});
        const MergeOutcome out = merge_average(tasks);
        CHECK(rel_frobenius(out.deltas.matrices[0].second, tasks[0].matrices[0].second) == 0.0);
    }
    SECTION("mean of two scalars") {
        const MergeOutcome out = merge_average(single_layer_tasks({Matrix{{2}}, Matrix{{0}}}));
        CHECK(out.deltas.matrices[0].second(0, 0) == 1.0);
    }
    SECTION("opposite deltas cancel") {
        Rng rng(51);
        const Matrix d = testgen::random_matrix(rng, 3, 3);
        const MergeOutcome out = merge_average(single_layer_tasks({d, -1.0 * d}));
        CHECK(out.deltas.matrices[0].second.is_zero());
    }
    SECTION("empty task list") {
        std::vector<TaskMatrixSet> none;
        CHECK_THROWS_AS(merge_average(none), Error);
    }
}

TEST_CASE("merge_task_arithmetic") {
    SECTION("single task keeps its delta") {
        Rng rng(52);
        auto tasks = testgen::random_task_sets(rng, 1, {{3, 5}});
        const MergeOutcome out = merge_task_arithmetic(tasks);
        CHECK(rel_frobenius(out.deltas.matrices[0].second, tasks[0].matrices[0].second) == 0.0);
    }
    SECTION("sums 2-D deltas, averages 1-D deltas") {
        std::vector<TaskMatrixSet> tasks =
            single_layer_tasks({Matrix{{2, 0}, {0, 0}}, Matrix{{0, 0}, {0, 1}}});
        tasks[0].vectors.emplace_back("b", std::vector<double>{2.0});
        tasks[1].vectors.emplace_back("b", std::vector<double>{0.0});
        const MergeOutcome out = merge_task_arithmetic(tasks);
        CHECK(out.deltas.matrices[0].second(0, 0) == 2.0);
        CHECK(out.deltas.matrices[0].second(1, 1) == 1.0);
        CHECK(out.deltas.vectors[0].second[0] == 1.0);
    }
    SECTION("task order does not matter") {
        Rng rng(53);
        auto tasks = testgen::random_task_sets(rng, 4, {{5, 4}, {3, 6}}, 1, /*dyadic=*/true);
        auto shuffled = tasks;
        std::rotate(shuffled.begin(), shuffled.begin() + 2, shuffled.end());
        const MergeOutcome a = merge_task_arithmetic(tasks);
        const MergeOutcome b = merge_task_arithmetic(shuffled);
        for (std::size_t l = 0; l < a.deltas.matrices.size(); ++l)
            for (std::size_t i = 0; i < a.deltas.matrices[l].second.size(); ++i)
                CHECK(a.deltas.matrices[l].second.data()[i] ==
                      b.deltas.matrices[l].second.data()[i]);
    }
}

TEST_CASE("merge_iso_c flattens the spectrum") {
    SECTION("hand-checked diagonal case") {
        const MergeOutcome out =
            merge_iso_c(single_layer_tasks({Matrix{{2, 0}, {0, 0}}, Matrix{{0, 0}, {0, 1}}}));
        const Matrix& merged = out.deltas.matrices[0].second;
        CHECK(merged(0, 0) == Catch::Approx(1.5).margin(1e-12));
        CHECK(merged(1, 1) == Catch::Approx(1.5).margin(1e-12));
        CHECK(std::abs(merged(0, 1)) < 1e-12);
        CHECK(std::abs(merged(1, 0)) < 1e-12);
        const LayerMeta* meta = out.find_meta("w");
        REQUIRE(meta != nullptr);
        CHECK(meta->sigma_bar == Catch::Approx(1.5).margin(1e-12));
        CHECK(meta->r == 2);
        CHECK(meta->method == MergeMethod::ISO_C);
    }
    SECTION("an already-isotropic delta is a fixed point") {
        Rng rng(54);
        const Matrix q = testgen::random_orthonormal(rng, 4, 4);
        const Matrix delta = 0.75 * q;  // all singular values equal 0.75
        const MergeOutcome out = merge_iso_c(single_layer_tasks({delta}));
        CHECK(rel_frobenius(out.deltas.matrices[0].second, delta) < 1e-12);
    }
    SECTION("positive homogeneity") {
        Rng rng(55);
        for (int trial = 0; trial < 10; ++trial) {
            auto tasks = testgen::random_task_sets(rng, 3, {{4, 4}});
            auto scaled = tasks;
            const double c = 0.25 + 3.0 * rng.uniform();
            for (auto& t : scaled)
                for (auto& [name, m] : t.matrices) m = c * m;
            const Matrix a = c * merge_iso_c(tasks).deltas.matrices[0].second;
            const Matrix b = merge_iso_c(scaled).deltas.matrices[0].second;
            CHECK(rel_frobenius(b, a) < 1e-8);
        }
    }
    SECTION("zero-sum layer is flagged, not fatal") {
        Rng rng(56);
        const Matrix d = testgen::random_matrix(rng, 3, 3);
        const MergeOutcome out = merge_iso_c(single_layer_tasks({d, -1.0 * d}));
        CHECK(out.deltas.matrices[0].second.is_zero());
        const LayerMeta* meta = out.find_meta("w");
        REQUIRE(meta != nullptr);
        CHECK(meta->zero_sum);
        CHECK(meta->sigma_bar == 0.0);
    }
}

TEST_CASE("iso_c isotropy invariant over randomized merges") {
    Rng rng(57);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t m = 2 + rng.below(10), n = 2 + rng.below(10);
        const std::size_t num_tasks = 1 + rng.below(5);
        auto tasks = testgen::random_task_sets(rng, num_tasks, {{m, n}});
        const MergeOutcome out = merge_iso_c(tasks);
        const LayerMeta* meta = out.find_meta("layer_0");
        REQUIRE(meta != nullptr);
        const SvdFactors f = thin_svd(out.deltas.matrices[0].second);
        for (double s : f.sigma)
            CHECK(std::abs(s - meta->sigma_bar) <= 1e-6 * meta->sigma_bar);
    }
}

TEST_CASE("iso_c merge order invariance is exact on dyadic inputs") {
    Rng rng(58);
    auto tasks = testgen::random_task_sets(rng, 5, {{6, 4}}, 0, /*dyadic=*/true);
    auto shuffled = tasks;
    std::rotate(shuffled.begin(), shuffled.begin() + 3, shuffled.end());
    const Matrix a = merge_iso_c(tasks).deltas.matrices[0].second;
    const Matrix b = merge_iso_c(shuffled).deltas.matrices[0].second;
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("merge_iso_cts") {
    SECTION("common fraction 1 reduces exactly to iso_c") {
        Rng rng(60);
        for (int trial = 0; trial < 5; ++trial) {
            auto tasks = testgen::random_task_sets(rng, 3, {{6, 5}, {4, 7}});
            const MergeOutcome cts = merge_iso_cts(tasks, 1.0);
            const MergeOutcome isoc = merge_iso_c(tasks);
            for (std::size_t l = 0; l < cts.deltas.matrices.size(); ++l)
                for (std::size_t i = 0; i < cts.deltas.matrices[l].second.size(); ++i)
                    CHECK(cts.deltas.matrices[l].second.data()[i] ==
                          isoc.deltas.matrices[l].second.data()[i]);
            CHECK(cts.per_layer_meta[0].second.method == MergeMethod::ISO_CTS);
            CHECK(cts.per_layer_meta[0].second.s_per_task == 0);
        }
    }
    SECTION("engineered axis-aligned case hits the combined scale") {
        // common top-1 sigma = 3, task residual sigmas 1 and 2, r = 3
        Matrix d1(3, 3), d2(3, 3);
        d1(0, 0) = 1.5;
        d1(1, 1) = 1.0;
        d2(0, 0) = 1.5;
        d2(2, 2) = 2.0;
        const MergeOutcome out = merge_iso_cts(single_layer_tasks({d1, d2}), 1.0 / 3.0);
        const LayerMeta* meta = out.find_meta("w");
        REQUIRE(meta != nullptr);
        CHECK(meta->k_common == 1);
        CHECK(meta->s_per_task == 1);
        CHECK(meta->sigma_bar == Catch::Approx(2.0).margin(1e-12));
        const Matrix& merged = out.deltas.matrices[0].second;
        CHECK(rel_frobenius(merged, 2.0 * Matrix::identity(3)) < 1e-10);
    }
    SECTION("combined scale arithmetic") {
        const std::vector<double> common{3.0};
        const std::vector<std::vector<double>> task_specific{{1.0}, {2.0}};
        CHECK(combined_sigma_bar(common, task_specific, 3) == Catch::Approx(2.0).margin(1e-15));
    }
    SECTION("task order invariance within tolerance") {
        Rng rng(61);
        auto tasks = testgen::random_task_sets(rng, 3, {{8, 8}});
        auto shuffled = tasks;
        std::rotate(shuffled.begin(), shuffled.begin() + 1, shuffled.end());
        const Matrix a = merge_iso_cts(tasks, 0.5).deltas.matrices[0].second;
        const Matrix b = merge_iso_cts(shuffled, 0.5).deltas.matrices[0].second;
        CHECK(rel_frobenius(a, b) < 1e-6);
    }
    SECTION("T=1 with s=0 equals iso_c") {
        Rng rng(62);
        auto tasks = testgen::random_task_sets(rng, 1, {{10, 10}});
        const MergeOutcome cts = merge_iso_cts(tasks, 0.95);  // k0 = round(9.5) = 10, s = 0
        const MergeOutcome isoc = merge_iso_c(tasks);
        for (std::size_t i = 0; i < cts.deltas.matrices[0].second.size(); ++i)
            CHECK(cts.deltas.matrices[0].second.data()[i] ==
                  isoc.deltas.matrices[0].second.data()[i]);
    }
    SECTION("rank-deficient concatenation falls back to iso_c per layer") {
        Matrix d1(4, 4), d2(4, 4);
        d1(0, 0) = 1.0;
        d2(1, 1) = 1.0;
        const MergeOutcome out = merge_iso_cts(single_layer_tasks({d1, d2}), 0.25);
        const LayerMeta* meta = out.find_meta("w");
        REQUIRE(meta != nullptr);
        CHECK(meta->iso_c_fallback);
        const MergeOutcome isoc = merge_iso_c(single_layer_tasks({d1, d2}));
        CHECK(rel_frobenius(out.deltas.matrices[0].second,
                            isoc.deltas.matrices[0].second) == 0.0);
    }
    SECTION("zero-sum layer stays zero") {
        Rng rng(63);
        const Matrix d = testgen::random_matrix(rng, 4, 4);
        const MergeOutcome out = merge_iso_cts(single_layer_tasks({d, -1.0 * d}), 0.5);
        CHECK(out.deltas.matrices[0].second.is_zero());
        CHECK(out.find_meta("w")->zero_sum);
    }
}

TEST_CASE("iso_cts internals: residual orthogonality and whitened factors") {
    Rng rng(64);
    auto tasks = testgen::random_task_sets(rng, 3, {{9, 9}});
    const Matrix ta_sum = [&] {
        Matrix acc = tasks[0].matrices[0].second;
        for (std::size_t t = 1; t < tasks.size(); ++t)
            acc = acc + tasks[t].matrices[0].second;
        return acc;
    }();

    const std::size_t r = 9;
    const double common_fraction = 0.5;
    const std::size_t k0 = static_cast<std::size_t>(std::floor(common_fraction * r + 0.5));
    const std::size_t s = (r - k0) / tasks.size();
    const std::size_t k = r - tasks.size() * s;
    REQUIRE(s >= 1);

    const SvdFactors f = thin_svd(ta_sum);
    const Matrix uk = f.u.columns(0, k);
    Matrix u_star(9, r), v_star(9, r);
    for (std::size_t j = 0; j < k; ++j) {
        u_star.set_column(j, f.u, j);
        v_star.set_column(j, f.v, j);
    }
    std::size_t col = k;
    for (const TaskMatrixSet& task : tasks) {
        const Matrix resid = residual_against(task.matrices[0].second, uk);
        const SvdFactors rf = thin_svd(resid);
        // residual directions are orthogonal to the common block
        CHECK(max_abs(matmul_at_b(uk, rf.u.columns(0, s))) <= 1e-8);
        for (std::size_t j = 0; j < s; ++j, ++col) {
            u_star.set_column(col, rf.u, j);
            v_star.set_column(col, rf.v, j);
        }
    }
    const Matrix uw = whiten_columns(u_star);
    const Matrix vw = whiten_columns(v_star);
    const Matrix ugram = matmul_at_b(uw, uw);
    const Matrix vgram = matmul_at_b(vw, vw);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j) {
            CHECK(std::abs(ugram(i, j) - (i == j ? 1.0 : 0.0)) <= 1e-8);
            CHECK(std::abs(vgram(i, j) - (i == j ? 1.0 : 0.0)) <= 1e-8);
        }
}

TEST_CASE("parallel merges match sequential results bit-for-bit") {
    Rng rng(65);
    auto tasks = testgen::random_task_sets(rng, 4, {{12, 10}, {8, 14}, {6, 6}});
    const MergeOutcome seq = merge_iso_cts(tasks, 0.5, 1);
    const MergeOutcome par = merge_iso_cts(tasks, 0.5, 4);
    for (std::size_t l = 0; l < seq.deltas.matrices.size(); ++l)
        for (std::size_t i = 0; i < seq.deltas.matrices[l].second.size(); ++i)
            CHECK(seq.deltas.matrices[l].second.data()[i] ==
                  par.deltas.matrices[l].second.data()[i]);
}

TEST_CASE("sweep_alpha") {
    TensorBundle base;
    base.add("w", Tensor::matrix(2, 2, {0, 0, 0, 0}));
    MergeOutcome outcome;
    outcome.deltas.matrices.emplace_back("w", Matrix::identity(2));

    SECTION("singleton grid returns its only value") {
        const std::vector<double> grid{1.0};
        const AlphaSweep sweep = sweep_alpha(base, outcome, grid,
                                             [](const TensorBundle&) {
                                                 return std::vector<double>{0.5};
                                             });
        CHECK(sweep.best_alpha == 1.0);
        REQUIRE(sweep.table.size() == 1);
    }
    SECTION("picks the forced maximizer") {
        const std::vector<double> grid{0.5, 0.7, 0.9};
        double current = 0.0;
        const AlphaSweep sweep = sweep_alpha(
            base, outcome, grid, [&](const TensorBundle& candidate) {
                // recover alpha from the candidate itself
                current = candidate.at("w").values()[0];
                return std::vector<double>{-std::abs(current - 0.7)};
            });
        CHECK(sweep.best_alpha == Catch::Approx(0.7));
    }
    SECTION("ties break toward the smaller alpha") {
        const std::vector<double> grid{1.5, 0.5, 1.0};
        const AlphaSweep sweep = sweep_alpha(base, outcome, grid,
                                             [](const TensorBundle&) {
                                                 return std::vector<double>{0.9};
                                             });
        CHECK(sweep.best_alpha == 0.5);
    }
    SECTION("empty grid is an error") {
        const std::vector<double> grid;
        CHECK_THROWS_AS(sweep_alpha(base, outcome, grid,
                                    [](const TensorBundle&) {
                                        return std::vector<double>{0.0};
                                    }),
                        Error);
    }
    SECTION("evaluator failures are wrapped") {
        const std::vector<double> grid{1.0};
        try {
            sweep_alpha(base, outcome, grid, [](const TensorBundle&) -> std::vector<double> {
                throw std::runtime_error("boom");
            });
            FAIL("expected an exception");
        } catch (const Error& e) {
            CHECK(e.code() == errc::evaluator_failure);
        }
    }
}
