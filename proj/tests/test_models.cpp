#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "decoupler/errors.hpp"
#include "decoupler/model.hpp"
#include "decoupler/rng.hpp"
#include "decoupler/sample.hpp"

using namespace decoupler;

namespace {

std::filesystem::path temp_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "decoupler_test_models";
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<double>* weight_buffer(Weights& w, const std::string& name) {
    if (name == "w_img") return &w.w_img.values;
    if (name == "b_img") return &w.b_img;
    if (name == "embed") return &w.embed.values;
    if (name == "w_txt") return &w.w_txt.values;
    if (name == "b_txt") return &w.b_txt;
    if (name == "w_patch") return &w.w_patch.values;
    if (name == "b_patch") return &w.b_patch;
    if (name == "cls") return &w.cls;
    if (name == "w_q") return &w.w_q.values;
    if (name == "w_k") return &w.w_k.values;
    if (name == "w_v") return &w.w_v.values;
    if (name == "w_head") return &w.w_head.values;
    if (name == "b_head") return &w.b_head;
    REQUIRE(false);
    return nullptr;
}

MaterializedInput random_input(Rng& rng, const ModelDims& dims) {
    MaterializedInput in;
    in.patches.resize(dims.n_patches);
    for (DenseVector& p : in.patches) {
        p.resize(dims.patch_dim);
        for (double& f : p) f = rng.next_double(-1.0, 1.0);
    }
    in.tokens.resize(dims.n_tokens);
    for (std::uint32_t& t : in.tokens) {
        t = static_cast<std::uint32_t>(rng.next_index(dims.vocab_size));
    }
    return in;
}

double loss_via_public_api(const FusionModel& m, const MaterializedInput& in, std::size_t label) {
    return -std::log(m.classify(m.embed(in))[label]);
}

DatasetManifest tiny_and_manifest() {
    DatasetManifest man;
    man.task_kind = TaskKind::AndCoupling;
    man.n_samples = 80;
    man.n_patches = 2;
    man.patch_dim = 2;
    man.n_tokens = 2;
    man.vocab_size = 5;
    man.seed = 0;
    return man;
}

}  // namespace

TEST_CASE("product fusion: zero image branch annihilates the embedding") {
    ModelDims dims{2, 2, 2, 5, 4, 2};
    FusionModel m = FusionModel::init_random(Architecture::ProductFusion, dims, 1);
    // zero the image branch entirely: ReLU(0·x + 0) = 0
    std::fill(m.weights.w_img.values.begin(), m.weights.w_img.values.end(), 0.0);
    std::fill(m.weights.b_img.begin(), m.weights.b_img.end(), 0.0);
    Rng rng(2);
    const FusionEmbedding e = m.embed(random_input(rng, dims));
    CHECK(e.z == DenseVector(dims.d, 0.0));
}

TEST_CASE("sum fusion: zero text branch leaves the image branch") {
    ModelDims dims{2, 2, 2, 5, 4, 2};
    FusionModel m = FusionModel::init_random(Architecture::SumFusion, dims, 1);
    std::fill(m.weights.embed.values.begin(), m.weights.embed.values.end(), 0.0);
    std::fill(m.weights.w_txt.values.begin(), m.weights.w_txt.values.end(), 0.0);
    std::fill(m.weights.b_txt.begin(), m.weights.b_txt.end(), 0.0);
    Rng rng(3);
    const MaterializedInput in = random_input(rng, dims);
    const FusionEmbedding e = m.embed(in);

    // reference: φ_img computed by hand from the weights
    DenseVector x_img;
    for (const DenseVector& p : in.patches) x_img.insert(x_img.end(), p.begin(), p.end());
    DenseVector want = matvec(m.weights.w_img, x_img);
    for (std::size_t i = 0; i < want.size(); ++i) {
        want[i] = std::max(want[i] + m.weights.b_img[i], 0.0);
    }
    CHECK(e.z == want);
}

TEST_CASE("classify: zero head gives the uniform distribution, predict tie-breaks low") {
    ModelDims dims{2, 2, 2, 5, 4, 3};
    FusionModel m = FusionModel::init_random(Architecture::SumFusion, dims, 4);
    std::fill(m.weights.w_head.values.begin(), m.weights.w_head.values.end(), 0.0);
    std::fill(m.weights.b_head.begin(), m.weights.b_head.end(), 0.0);
    Rng rng(5);
    const MaterializedInput in = random_input(rng, dims);
    const DenseVector p = m.classify(m.embed(in));
    REQUIRE(p.size() == 3);
    for (double x : p) CHECK(x == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(m.predict(in) == 0);
}

TEST_CASE("classify output is a distribution for random models") {
    Rng rng(6);
    ModelDims dims{3, 2, 3, 6, 8, 4};
    for (Architecture a : {Architecture::ProductFusion, Architecture::SumFusion,
                           Architecture::AttentionFusion}) {
        for (int trial = 0; trial < 20; ++trial) {
            FusionModel m = FusionModel::init_random(a, dims, rng.next_u64());
            const DenseVector p = m.classify(m.embed(random_input(rng, dims)));
            double sum = 0.0;
            for (double x : p) sum += x;
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("attention fusion golden: seed-0 model on a fixed sample") {
    ModelDims dims{2, 2, 2, 5, 4, 2};
    FusionModel m = FusionModel::init_random(Architecture::AttentionFusion, dims, 0);
    MultimodalSample s;
    s.sample_id = "golden";
    s.patches = {{0.25, -0.5}, {1.0, 0.75}};
    s.tokens = {1, 3};
    s.label = 1;

    const DenseVector golden_z = {-0.0016067940906724586, -0.0010217418734892124,
                                  -0.0013309296639752038, 0.00068517646745607907};
    const DenseVector golden_probs = {0.50497203635397103, 0.49502796364602902};

    const FusionEmbedding e = m.embed(s);
    REQUIRE(e.z.size() == golden_z.size());
    for (std::size_t i = 0; i < golden_z.size(); ++i) {
        CHECK(std::abs(e.z[i] - golden_z[i]) < 1e-12);
    }
    const DenseVector p = m.classify(e);
    for (std::size_t i = 0; i < golden_probs.size(); ++i) {
        CHECK(std::abs(p[i] - golden_probs[i]) < 1e-12);
    }
}

TEST_CASE("embed and classify are referentially transparent") {
    Rng rng(7);
    ModelDims dims{3, 3, 2, 7, 6, 2};
    for (Architecture a : {Architecture::ProductFusion, Architecture::SumFusion,
                           Architecture::AttentionFusion}) {
        FusionModel m = FusionModel::init_random(a, dims, 11);
        const MaterializedInput in = random_input(rng, dims);
        const FusionEmbedding e1 = m.embed(in);
        const FusionEmbedding e2 = m.embed(in);
        CHECK(e1.z == e2.z);  // bitwise
        CHECK(m.classify(e1) == m.classify(e2));
    }
}

TEST_CASE("predict is invariant under positive logit rescaling") {
    Rng rng(8);
    ModelDims dims{2, 2, 2, 5, 4, 3};
    FusionModel m = FusionModel::init_random(Architecture::SumFusion, dims, 9);
    const MaterializedInput in = random_input(rng, dims);
    const std::size_t before = m.predict(in);
    for (double& x : m.weights.w_head.values) x *= 7.5;
    for (double& x : m.weights.b_head) x *= 7.5;
    CHECK(m.predict(in) == before);
}

TEST_CASE("input shape validation") {
    ModelDims dims{2, 2, 2, 5, 4, 2};
    FusionModel m = FusionModel::init_random(Architecture::ProductFusion, dims, 0);
    MaterializedInput in;
    in.patches = {{0.0, 0.0}};
    in.tokens = {0, 1};
    CHECK_THROWS_AS(m.embed(in), ShapeError);
    in.patches = {{0.0, 0.0}, {0.0, 0.0, 0.0}};
    CHECK_THROWS_AS(m.embed(in), ShapeError);
    in.patches = {{0.0, 0.0}, {0.0, 0.0}};
    in.tokens = {0, 9};
    CHECK_THROWS_AS(m.embed(in), ShapeError);
    CHECK_THROWS_AS(m.classify(FusionEmbedding{{1.0, 2.0}}), ShapeError);
}

TEST_CASE("analytic gradients match central finite differences") {
    Rng rng(42);
    ModelDims dims{3, 2, 3, 6, 5, 2};
    const double h = 1e-5;
    for (Architecture a : {Architecture::ProductFusion, Architecture::SumFusion,
                           Architecture::AttentionFusion}) {
        for (int cfg = 0; cfg < 5; ++cfg) {
            FusionModel model = FusionModel::init_random(a, dims, rng.next_u64());
            const MaterializedInput in = random_input(rng, dims);
            const std::size_t label = rng.next_index(dims.n_classes);
            LossGradients lg = loss_gradients(model, in, label);

            for (const auto& [name, kind] : active_tensor_names(a)) {
                std::vector<double>& wb = *weight_buffer(model.weights, name);
                const std::vector<double>& gb = *weight_buffer(lg.grad, name);
                REQUIRE(wb.size() == gb.size());
                for (std::size_t i = 0; i < wb.size(); ++i) {
                    const double saved = wb[i];
                    wb[i] = saved + h;
                    const double up = loss_via_public_api(model, in, label);
                    wb[i] = saved - h;
                    const double dn = loss_via_public_api(model, in, label);
                    wb[i] = saved;
                    const double fd = (up - dn) / (2.0 * h);
                    const double an = gb[i];
                    const double rel =
                        std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
                    CHECK(rel < 1e-4);
                }
            }
        }
    }
}

TEST_CASE("training memorizes a single repeated sample") {
    const DatasetManifest man = tiny_and_manifest();
    const auto data = generate_dataset(man);
    const std::vector<MultimodalSample> repeated(4, data[1]);
    const TrainConfig cfg{0.3, 2000, 4, 0};
    const auto r = train(
        FusionModel::init_random(Architecture::ProductFusion, dims_from_manifest(man, 8), 0),
        repeated, cfg);
    CHECK(r.loss_trace.size() == 2000);
    CHECK(r.loss_trace.back() < 1e-3);
    CHECK(r.final_train_accuracy == 1.0);
}

TEST_CASE("loss trace is non-increasing within 5% upticks on single-modality data") {
    DatasetManifest man = tiny_and_manifest();
    man.task_kind = TaskKind::SingleModality;
    const auto data = generate_dataset(man);
    const TrainConfig cfg{0.1, 400, 80, 0};
    const auto r = train(
        FusionModel::init_random(Architecture::SumFusion, dims_from_manifest(man, 8), 0), data,
        cfg);
    for (std::size_t i = 1; i < r.loss_trace.size(); ++i) {
        CHECK(r.loss_trace[i] <= r.loss_trace[i - 1] * 1.05);
    }
}

TEST_CASE("training is deterministic") {
    const DatasetManifest man = tiny_and_manifest();
    const auto data = generate_dataset(man);
    const TrainConfig cfg{0.3, 150, 16, 5};
    const FusionModel init =
        FusionModel::init_random(Architecture::ProductFusion, dims_from_manifest(man, 8), 5);
    const auto a = train(init, data, cfg);
    const auto b = train(init, data, cfg);
    CHECK(a.model == b.model);  // bitwise-equal weights
    CHECK(a.loss_trace == b.loss_trace);
    CHECK(a.final_train_accuracy == b.final_train_accuracy);
}

TEST_CASE("trained AndCoupling model couples the pattern and the trigger") {
    const DatasetManifest man = tiny_and_manifest();
    const auto data = generate_dataset(man);
    const TrainConfig cfg{0.3, 800, 80, 0};
    const auto r = train(
        FusionModel::init_random(Architecture::ProductFusion, dims_from_manifest(man, 8), 0),
        data, cfg);
    REQUIRE(r.final_train_accuracy >= 0.95);
    for (const MultimodalSample& s : data) {
        if (s.label != 1) continue;
        CHECK(r.model.predict(s) == 1);
        for (std::size_t j = 0; j < s.tokens.size(); ++j) {
            if (s.tokens[j] == kTriggerToken) {
                CHECK(r.model.predict(remove_datapoint(s, {Modality::TextToken, j})) == 0);
                break;
            }
        }
    }
}

TEST_CASE("train validation") {
    const DatasetManifest man = tiny_and_manifest();
    const auto data = generate_dataset(man);
    const FusionModel init =
        FusionModel::init_random(Architecture::ProductFusion, dims_from_manifest(man, 8), 0);
    CHECK_THROWS_AS(train(init, {}, TrainConfig{}), ValidationError);
    CHECK_THROWS_AS(train(init, data, TrainConfig{12.0, 10, 8, 0}), ValidationError);
    CHECK_THROWS_AS(train(init, data, TrainConfig{0.1, 0, 8, 0}), ValidationError);
    CHECK_THROWS_AS(train(init, data, TrainConfig{0.1, 20000, 8, 0}), ValidationError);
    CHECK_THROWS_AS(train(init, data, TrainConfig{0.1, 10, 0, 0}), ValidationError);
}

TEST_CASE("fresh seed-0 weights are inside the init range") {
    const FusionModel m = FusionModel::init_random(Architecture::ProductFusion, ModelDims{}, 0);
    for (const auto& [name, kind] : active_tensor_names(Architecture::ProductFusion)) {
        Weights& w = const_cast<Weights&>(m.weights);
        for (double x : *weight_buffer(w, name)) {
            CHECK(x > -0.1);
            CHECK(x < 0.1);
        }
    }
}

TEST_CASE("checkpoints round-trip byte-identically") {
    const auto dir = temp_dir();
    const ModelDims dims{3, 2, 3, 6, 5, 2};
    for (Architecture a : {Architecture::ProductFusion, Architecture::AttentionFusion}) {
        const FusionModel m = FusionModel::init_random(a, dims, 13);
        const TrainConfig cfg{0.25, 123, 16, 13};
        const auto p1 = (dir / (architecture_name(a) + "_1.json")).string();
        const auto p2 = (dir / (architecture_name(a) + "_2.json")).string();
        save_checkpoint(p1, m, cfg, 0.875);
        const Checkpoint loaded = load_checkpoint(p1);
        CHECK(loaded.model == m);
        CHECK(loaded.train_config == cfg);
        CHECK(loaded.final_train_accuracy == 0.875);
        save_checkpoint(p2, loaded.model, loaded.train_config, loaded.final_train_accuracy);
        CHECK(slurp(p1) == slurp(p2));
    }
}

TEST_CASE("checkpoint load rejects inconsistent dims") {
    const auto dir = temp_dir();
    const ModelDims dims{2, 2, 2, 5, 4, 2};
    const FusionModel m = FusionModel::init_random(Architecture::ProductFusion, dims, 1);
    const auto path = (dir / "bad_ckpt.json").string();
    save_checkpoint(path, m, TrainConfig{}, 1.0);

    std::string text = slurp(path);
    // claim a different head width: weight arrays no longer match the dims
    const auto pos = text.find("\"n_classes\": 2");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 14, "\"n_classes\": 3");
    std::ofstream(path, std::ios::binary) << text;
    try {
        load_checkpoint(path);
        FAIL("expected LoadError");
    } catch (const LoadError& e) {
        CHECK(std::string(e.what()).find("w_head") != std::string::npos);
    }

    std::ofstream(path, std::ios::binary) << "}{";
    CHECK_THROWS_AS(load_checkpoint(path), LoadError);
    CHECK_THROWS_AS(load_checkpoint((dir / "missing.json").string()), IoError);
}
