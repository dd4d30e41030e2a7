#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "decoupler/errors.hpp"
#include "decoupler/rng.hpp"
#include "decoupler/sample.hpp"

using namespace decoupler;

namespace {

std::filesystem::path temp_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "decoupler_test_samples";
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

MultimodalSample small_sample() {
    MultimodalSample s;
    s.sample_id = "t0";
    s.patches = {{0.1, 0.2}, {0.3, 0.4}, {0.5, 0.6}};
    s.tokens = {3, 4, 5};
    s.label = 1;
    return s;
}

bool pattern_present(const MultimodalSample& s) {
    for (double f : s.patches[kPatternPatch]) {
        if (f != kPatternValue) return false;
    }
    return true;
}

bool trigger_present(const MultimodalSample& s) {
    for (std::uint32_t t : s.tokens) {
        if (t == kTriggerToken) return true;
    }
    return false;
}

}  // namespace

TEST_CASE("removal masks a patch to zeros") {
    const MultimodalSample s = small_sample();
    const MultimodalSample r = remove_datapoint(s, {Modality::ImagePatch, 0});
    const MaterializedInput in = r.materialize();
    CHECK(in.patches[0] == DenseVector{0.0, 0.0});
    CHECK(in.patches[1] == s.patches[1]);
    CHECK(s.removed.empty());  // original untouched
}

TEST_CASE("removal masks a token to the mask index") {
    const MultimodalSample s = small_sample();
    const MultimodalSample r = remove_datapoint(s, {Modality::TextToken, 2});
    const MaterializedInput in = r.materialize();
    CHECK(in.tokens[2] == kMaskToken);
    CHECK(in.tokens[0] == 3);
}

TEST_CASE("removal order does not matter at the materialized level") {
    const MultimodalSample s = small_sample();
    const DatapointId a{Modality::ImagePatch, 1};
    const DatapointId b{Modality::TextToken, 0};
    const MaterializedInput ab = remove_datapoint(remove_datapoint(s, a), b).materialize();
    const MaterializedInput ba = remove_datapoint(remove_datapoint(s, b), a).materialize();
    CHECK(ab == ba);
}

TEST_CASE("removal validation") {
    const MultimodalSample s = small_sample();
    CHECK_THROWS_AS(remove_datapoint(s, {Modality::ImagePatch, 3}), ValidationError);
    CHECK_THROWS_AS(remove_datapoint(s, {Modality::TextToken, 9}), ValidationError);
    const MultimodalSample r = remove_datapoint(s, {Modality::TextToken, 1});
    CHECK_THROWS_AS(remove_datapoint(r, {Modality::TextToken, 1}), ValidationError);
}

TEST_CASE("removal_fraction") {
    MultimodalSample s = small_sample();
    CHECK(removal_fraction(s) == 0.0);
    s = remove_datapoint(s, {Modality::ImagePatch, 0});
    s = remove_datapoint(s, {Modality::TextToken, 1});
    CHECK(removal_fraction(s) == doctest::Approx(2.0 / 6.0));
    for (std::size_t i = 1; i < 3; ++i) s = remove_datapoint(s, {Modality::ImagePatch, i});
    for (std::size_t j : {0, 2}) s = remove_datapoint(s, {Modality::TextToken, j});
    CHECK(removal_fraction(s) == 1.0);
}

TEST_CASE("any removal order of the same set materializes identically") {
    Rng rng(4);
    for (int trial = 0; trial < 30; ++trial) {
        const MultimodalSample base = small_sample();
        std::vector<DatapointId> ids;
        for (std::size_t i = 0; i < base.patches.size(); ++i) {
            if (rng.next_index(2) == 0) ids.push_back({Modality::ImagePatch, i});
        }
        for (std::size_t j = 0; j < base.tokens.size(); ++j) {
            if (rng.next_index(2) == 0) ids.push_back({Modality::TextToken, j});
        }
        std::vector<DatapointId> shuffled = ids;
        for (std::size_t i = shuffled.size(); i > 1; --i) {
            std::swap(shuffled[i - 1], shuffled[rng.next_index(i)]);
        }
        MultimodalSample a = base;
        for (const DatapointId& d : ids) a = remove_datapoint(a, d);
        MultimodalSample b = base;
        for (const DatapointId& d : shuffled) b = remove_datapoint(b, d);
        CHECK(a.materialize() == b.materialize());
        CHECK(a == b);
    }
}

TEST_CASE("removal_fraction is non-decreasing along random sequences") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        MultimodalSample s = small_sample();
        double last = removal_fraction(s);
        std::vector<DatapointId> ids;
        for (std::size_t i = 0; i < s.patches.size(); ++i) ids.push_back({Modality::ImagePatch, i});
        for (std::size_t j = 0; j < s.tokens.size(); ++j) ids.push_back({Modality::TextToken, j});
        for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.next_index(i)]);
        for (const DatapointId& d : ids) {
            s = remove_datapoint(s, d);
            const double f = removal_fraction(s);
            CHECK(f >= last);
            last = f;
        }
    }
}

TEST_CASE("generated labels follow the task rules") {
    for (TaskKind task :
         {TaskKind::AndCoupling, TaskKind::XorCoupling, TaskKind::SingleModality}) {
        DatasetManifest m;
        m.task_kind = task;
        m.n_samples = 120;
        m.seed = 99;
        const auto samples = generate_dataset(m);
        REQUIRE(samples.size() == 120);
        std::size_t ones = 0;
        for (const MultimodalSample& s : samples) {
            const bool pat = pattern_present(s);
            const bool trig = trigger_present(s);
            std::size_t want = 0;
            switch (task) {
                case TaskKind::AndCoupling: want = pat && trig ? 1 : 0; break;
                case TaskKind::XorCoupling: want = pat != trig ? 1 : 0; break;
                case TaskKind::SingleModality: want = pat ? 1 : 0; break;
            }
            CHECK(s.label == want);
            ones += s.label;
            for (std::uint32_t t : s.tokens) CHECK(t != kMaskToken);
            CHECK(s.removed.empty());
        }
        const double balance = static_cast<double>(ones) / 120.0;
        CHECK(std::abs(balance - 0.5) <= 0.1);
    }
}

TEST_CASE("generation is deterministic in the seed") {
    DatasetManifest m;
    m.task_kind = TaskKind::XorCoupling;
    m.n_samples = 40;
    m.seed = 7;
    const auto a = generate_dataset(m);
    const auto b = generate_dataset(m);
    CHECK(a == b);

    const auto dir = temp_dir();
    save_samples((dir / "a.json").string(), m, a);
    save_samples((dir / "b.json").string(), m, b);
    CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));

    m.seed = 8;
    CHECK(generate_dataset(m) != a);
}

TEST_CASE("degenerate manifests are rejected") {
    DatasetManifest m;
    m.n_samples = 0;
    CHECK_THROWS_AS(generate_dataset(m), ValidationError);
    m.n_samples = 10;
    m.vocab_size = 2;
    CHECK_THROWS_AS(generate_dataset(m), ValidationError);
    m.vocab_size = 12;
    m.n_classes = 1;
    CHECK_THROWS_AS(generate_dataset(m), ValidationError);
    m.n_classes = 2;
    m.patch_dim = 0;
    CHECK_THROWS_AS(generate_dataset(m), ValidationError);
}

TEST_CASE("sample files round-trip") {
    const auto dir = temp_dir();
    DatasetManifest m;
    m.n_samples = 6;
    m.n_patches = 3;
    m.patch_dim = 2;
    m.n_tokens = 3;
    m.vocab_size = 8;
    m.seed = 3;
    auto samples = generate_dataset(m);
    samples[1] = remove_datapoint(samples[1], {Modality::ImagePatch, 2});
    samples[1] = remove_datapoint(samples[1], {Modality::TextToken, 0});

    const auto path = (dir / "roundtrip.json").string();
    save_samples(path, m, samples);
    const SampleFile loaded = load_samples(path);
    CHECK(loaded.manifest == m);
    CHECK(loaded.samples == samples);

    // save(load(save(X))) is byte-identical
    const auto path2 = (dir / "roundtrip2.json").string();
    save_samples(path2, loaded.manifest, loaded.samples);
    CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("empty sample list round-trips") {
    const auto dir = temp_dir();
    DatasetManifest m;
    m.n_samples = 4;  // manifest says 4, file carries none; counts are not coupled
    const auto path = (dir / "empty.json").string();
    save_samples(path, m, {});
    CHECK(load_samples(path).samples.empty());
}

TEST_CASE("loading rejects out-of-range and malformed content") {
    const auto dir = temp_dir();
    DatasetManifest m;
    m.n_samples = 2;
    m.n_patches = 2;
    m.patch_dim = 2;
    m.n_tokens = 2;
    m.vocab_size = 6;
    m.seed = 1;
    const auto samples = generate_dataset(m);
    const auto path = (dir / "bad.json").string();
    save_samples(path, m, samples);

    std::string text = slurp(path);

    // token index >= vocab_size, named record in the error
    {
        std::string broken = text;
        auto pos = broken.find('[', broken.find("\"tokens\""));
        while (!std::isdigit(static_cast<unsigned char>(broken[pos]))) ++pos;
        auto end = pos;
        while (std::isdigit(static_cast<unsigned char>(broken[end]))) ++end;
        broken.replace(pos, end - pos, "99");
        std::ofstream(path, std::ios::binary) << broken;
        try {
            load_samples(path);
            FAIL("expected LoadError");
        } catch (const LoadError& e) {
            CHECK(std::string(e.what()).find("s0000") != std::string::npos);
        }
    }

    // schema version mismatch
    {
        std::string broken = text;
        broken.replace(broken.find("\"schema_version\": 1"), 19, "\"schema_version\": 99");
        std::ofstream(path, std::ios::binary) << broken;
        CHECK_THROWS_AS(load_samples(path), LoadError);
    }

    // malformed JSON
    std::ofstream(path, std::ios::binary) << "{not json";
    CHECK_THROWS_AS(load_samples(path), LoadError);

    // missing file
    CHECK_THROWS_AS(load_samples((dir / "nope.json").string()), IoError);
}
