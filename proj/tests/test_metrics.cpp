#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "decoupler/errors.hpp"
#include "decoupler/metrics.hpp"
#include "decoupler/rng.hpp"

using namespace decoupler;

namespace {

std::filesystem::path temp_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "decoupler_test_metrics";
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

AttackRecord record(RecordStatus status, double fraction) {
    AttackRecord r;
    r.sample_id = "s";
    r.status = status;
    r.removal_fraction = fraction;
    return r;
}

// One removable patch carries all the signal: P(x) ≈ (1, 0), P(x with the
// patch removed) = (0.5, 0.5) exactly.
struct PsiFixture {
    FusionModel model;
    MultimodalSample sample;
    MultimodalSample removed;
};

PsiFixture psi_fixture() {
    ModelDims dims{1, 1, 1, 3, 2, 2};
    FusionModel m = FusionModel::init_random(Architecture::SumFusion, dims, 0);
    std::fill(m.weights.embed.values.begin(), m.weights.embed.values.end(), 0.0);
    std::fill(m.weights.w_txt.values.begin(), m.weights.w_txt.values.end(), 0.0);
    std::fill(m.weights.b_txt.begin(), m.weights.b_txt.end(), 0.0);
    m.weights.w_img = DenseMatrix(2, 1);
    m.weights.w_img.at(0, 0) = 30.0;
    std::fill(m.weights.b_img.begin(), m.weights.b_img.end(), 0.0);
    m.weights.w_head = DenseMatrix::identity(2);
    std::fill(m.weights.b_head.begin(), m.weights.b_head.end(), 0.0);

    PsiFixture f;
    f.model = std::move(m);
    f.sample.sample_id = "psi";
    f.sample.patches = {{1.0}};
    f.sample.tokens = {2};
    f.sample.label = 0;
    f.removed = remove_datapoint(f.sample, {Modality::ImagePatch, 0});
    return f;
}

}  // namespace

TEST_CASE("attack_success_rate") {
    CHECK(attack_success_rate({record(RecordStatus::Success, 0.1)}) == 1.0);
    CHECK(attack_success_rate({record(RecordStatus::Exhausted, 0.0)}) == 0.0);
    CHECK(attack_success_rate({record(RecordStatus::Success, 0.1),
                               record(RecordStatus::Success, 0.2),
                               record(RecordStatus::Success, 0.3),
                               record(RecordStatus::BudgetExceeded, 0.0)}) == 0.75);
    CHECK_THROWS_AS(attack_success_rate({}), ValidationError);
}

TEST_CASE("points_changed_stats: single success") {
    const auto stats = points_changed_stats({record(RecordStatus::Success, 0.25),
                                             record(RecordStatus::Exhausted, 0.0)});
    CHECK(stats.mean == 0.25);
    CHECK(stats.median == 0.25);
    CHECK(stats.cdf == std::vector<std::pair<double, double>>{{0.25, 1.0}});
}

TEST_CASE("points_changed_stats: two distinct fractions") {
    const auto stats = points_changed_stats(
        {record(RecordStatus::Success, 0.3), record(RecordStatus::Success, 0.1)});
    CHECK(stats.mean == doctest::Approx(0.2));
    CHECK(stats.median == doctest::Approx(0.2));
    CHECK(stats.cdf ==
          std::vector<std::pair<double, double>>{{0.1, 0.5}, {0.3, 1.0}});
}

TEST_CASE("points_changed_stats: cdf is a valid distribution on random populations") {
    Rng rng(41);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<AttackRecord> results;
        const std::size_t n = 1 + rng.next_index(40);
        for (std::size_t i = 0; i < n; ++i) {
            // duplicates on purpose: fractions land on a small grid
            results.push_back(
                record(RecordStatus::Success,
                       static_cast<double>(rng.next_index(7)) / 7.0));
        }
        const auto stats = points_changed_stats(results);
        double last_f = -1.0;
        double last_c = 0.0;
        for (const auto& [fraction, cumulative] : stats.cdf) {
            CHECK(fraction > last_f);
            CHECK(cumulative > last_c);
            CHECK(fraction >= 0.0);
            CHECK(fraction <= 1.0);
            last_f = fraction;
            last_c = cumulative;
        }
        CHECK(last_c == 1.0);
    }
}

TEST_CASE("points_changed_stats requires a success") {
    CHECK_THROWS_AS(points_changed_stats({record(RecordStatus::Exhausted, 0.0)}),
                    ValidationError);
}

TEST_CASE("robustness_psi: cap engages when the distribution never moves") {
    const PsiFixture f = psi_fixture();
    const PsiConfig cfg;
    // the sample itself produces an identical distribution: KL = 0
    const double psi = robustness_psi(f.model, f.sample, {f.sample}, cfg);
    CHECK(psi == 1.0 / cfg.kl_cap_epsilon);
}

TEST_CASE("robustness_psi: closed-form 1/ln2 case") {
    const PsiFixture f = psi_fixture();
    const double psi = robustness_psi(f.model, f.sample, {f.removed});
    CHECK(psi == doctest::Approx(1.0 / std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("robustness_psi: adding a higher-KL sample strictly decreases psi") {
    const PsiFixture f = psi_fixture();
    const double before = robustness_psi(f.model, f.sample, {f.sample});
    const double after = robustness_psi(f.model, f.sample, {f.sample, f.removed});
    CHECK(after < before);
}

TEST_CASE("robustness_psi: doubling the cap never increases psi") {
    const PsiFixture f = psi_fixture();
    for (double cap : {1e-12, 1e-9, 1e-3, 1.0, 10.0}) {
        const double a = robustness_psi(f.model, f.sample, {f.removed}, PsiConfig{cap});
        const double b = robustness_psi(f.model, f.sample, {f.removed}, PsiConfig{2 * cap});
        CHECK(b <= a);
    }
}

TEST_CASE("robustness_psi validation") {
    const PsiFixture f = psi_fixture();
    CHECK_THROWS_AS(robustness_psi(f.model, f.sample, {}), ValidationError);
    CHECK_THROWS_AS(robustness_psi(f.model, f.sample, {f.sample}, PsiConfig{0.0}),
                    ValidationError);
}

TEST_CASE("emit_report writes deterministic bytes and a well-formed CSV") {
    const auto dir = temp_dir();
    RobustnessReport report;
    report.model_id = "model";
    report.dataset_id = "data";
    report.n_attacked = 4;
    report.n_success = 2;
    report.asr = 0.5;
    report.removal_fractions = {0.25, 0.5};
    report.cdf = {{0.25, 0.5}, {0.5, 1.0}};
    report.psi_values = {1.5, 2.5};
    report.psi_mean = 2.0;
    report.run_manifest = {{"seed", "7"}, {"attack", "untargeted"}};

    const auto j1 = (dir / "r1.json").string();
    const auto c1 = (dir / "r1.csv").string();
    const auto j2 = (dir / "r2.json").string();
    const auto c2 = (dir / "r2.csv").string();
    emit_report(report, j1, c1);
    emit_report(report, j2, c2);
    CHECK(slurp(j1) == slurp(j2));
    CHECK(slurp(c1) == slurp(c2));

    // header + 2 cdf rows = 3 lines
    CHECK(slurp(c1) == "fraction,cumulative\n0.250000,0.500000\n0.500000,1.000000\n");

    const RobustnessReport loaded = load_report(j1);
    CHECK(loaded.model_id == report.model_id);
    CHECK(loaded.asr == report.asr);
    CHECK(loaded.cdf == report.cdf);
    CHECK(loaded.psi_values == report.psi_values);
    CHECK(loaded.run_manifest == report.run_manifest);
}

TEST_CASE("emit_report with no successes produces a header-only CSV") {
    const auto dir = temp_dir();
    RobustnessReport report;
    report.model_id = "model";
    report.dataset_id = "data";
    report.n_attacked = 3;
    const auto j = (dir / "empty.json").string();
    const auto c = (dir / "empty.csv").string();
    emit_report(report, j, c);
    CHECK(slurp(c) == "fraction,cumulative\n");
    CHECK(load_report(j).asr == 0.0);
}

TEST_CASE("emit_report surfaces the offending path on failure") {
    RobustnessReport report;
    try {
        emit_report(report, "/nonexistent_dir_xyz/r.json", "/tmp/r.csv");
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("/nonexistent_dir_xyz/r.json") != std::string::npos);
    }
}
