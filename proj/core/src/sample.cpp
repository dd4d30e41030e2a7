#include "decoupler/sample.hpp"

#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "decoupler/errors.hpp"
#include "decoupler/rng.hpp"

namespace decoupler {

using json = nlohmann::ordered_json;

namespace {

constexpr int kSampleSchemaVersion = 1;

std::string task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::AndCoupling: return "and_coupling";
        case TaskKind::XorCoupling: return "xor_coupling";
        case TaskKind::SingleModality: return "single_modality";
    }
    throw ValidationError("unknown task kind");
}

TaskKind task_kind_from_name(const std::string& name) {
    if (name == "and_coupling") return TaskKind::AndCoupling;
    if (name == "xor_coupling") return TaskKind::XorCoupling;
    if (name == "single_modality") return TaskKind::SingleModality;
    throw LoadError("unknown task_kind '" + name + "'");
}

void validate_manifest(const DatasetManifest& m) {
    if (m.n_samples == 0) throw ValidationError("manifest: n_samples must be positive");
    if (m.n_patches == 0 || m.patch_dim == 0 || m.n_tokens == 0) {
        throw ValidationError("manifest: all dimensions must be positive");
    }
    if (m.n_classes < 2) throw ValidationError("manifest: n_classes must be at least 2");
    if (m.vocab_size < 3) {
        throw ValidationError("manifest: vocab_size must be at least 3 "
                              "(mask token, trigger token, and content)");
    }
}

void validate_sample_against(const DatasetManifest& m, const MultimodalSample& s) {
    const std::string where = "sample '" + s.sample_id + "'";
    if (s.patches.size() != m.n_patches) {
        throw LoadError(where + ": expected " + std::to_string(m.n_patches) + " patches, got " +
                        std::to_string(s.patches.size()));
    }
    for (const DenseVector& p : s.patches) {
        if (p.size() != m.patch_dim) {
            throw LoadError(where + ": patch length " + std::to_string(p.size()) +
                            " != patch_dim " + std::to_string(m.patch_dim));
        }
    }
    if (s.tokens.size() != m.n_tokens) {
        throw LoadError(where + ": expected " + std::to_string(m.n_tokens) + " tokens, got " +
                        std::to_string(s.tokens.size()));
    }
    for (std::uint32_t t : s.tokens) {
        if (t >= m.vocab_size) {
            throw LoadError(where + ": token index " + std::to_string(t) +
                            " >= vocab_size " + std::to_string(m.vocab_size));
        }
    }
    if (s.label >= m.n_classes) {
        throw LoadError(where + ": label " + std::to_string(s.label) + " >= n_classes " +
                        std::to_string(m.n_classes));
    }
    for (const DatapointId& d : s.removed) {
        if (!s.in_range(d)) {
            throw LoadError(where + ": removed datapoint " + to_string(d) + " out of range");
        }
    }
}

}  // namespace

std::string modality_name(Modality m) {
    return m == Modality::ImagePatch ? "image_patch" : "text_token";
}

Modality modality_from_name(const std::string& name) {
    if (name == "image_patch") return Modality::ImagePatch;
    if (name == "text_token") return Modality::TextToken;
    throw LoadError("unknown modality '" + name + "'");
}

std::string to_string(const DatapointId& id) {
    return modality_name(id.modality) + "[" + std::to_string(id.index) + "]";
}

bool MultimodalSample::in_range(const DatapointId& d) const {
    const std::size_t limit =
        d.modality == Modality::ImagePatch ? patches.size() : tokens.size();
    return d.index < limit;
}

MaterializedInput MultimodalSample::materialize() const {
    MaterializedInput out{patches, tokens};
    for (const DatapointId& d : removed) {
        if (d.modality == Modality::ImagePatch) {
            std::fill(out.patches[d.index].begin(), out.patches[d.index].end(), 0.0);
        } else {
            out.tokens[d.index] = kMaskToken;
        }
    }
    return out;
}

MultimodalSample remove_datapoint(const MultimodalSample& s, const DatapointId& d) {
    if (!s.in_range(d)) {
        throw ValidationError("remove_datapoint: " + to_string(d) + " out of range for sample '" +
                              s.sample_id + "'");
    }
    if (s.removed.contains(d)) {
        throw ValidationError("remove_datapoint: " + to_string(d) + " already removed");
    }
    MultimodalSample out = s;
    out.removed.insert(d);
    return out;
}

double removal_fraction(const MultimodalSample& s) {
    const std::size_t total = s.datapoint_count();
    if (total == 0) return 0.0;
    return static_cast<double>(s.removed.size()) / static_cast<double>(total);
}

std::vector<MultimodalSample> generate_dataset(const DatasetManifest& m) {
    validate_manifest(m);
    Rng rng(m.seed);
    std::vector<MultimodalSample> out;
    out.reserve(m.n_samples);

    for (std::size_t i = 0; i < m.n_samples; ++i) {
        const std::size_t label = i % 2;
        bool pattern = false;
        bool trigger = false;
        switch (m.task_kind) {
            case TaskKind::AndCoupling:
                if (label == 1) {
                    pattern = trigger = true;
                } else {
                    // uniform over the three non-AND combinations
                    switch (rng.next_index(3)) {
                        case 0: break;
                        case 1: pattern = true; break;
                        case 2: trigger = true; break;
                    }
                }
                break;
            case TaskKind::XorCoupling:
                if (label == 1) {
                    pattern = rng.next_index(2) == 0;
                    trigger = !pattern;
                } else {
                    pattern = trigger = rng.next_index(2) == 0;
                }
                break;
            case TaskKind::SingleModality:
                pattern = label == 1;
                break;
        }

        MultimodalSample s;
        {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "s%04zu", i);
            s.sample_id = buf;
        }
        s.label = label;
        s.patches.resize(m.n_patches);
        for (DenseVector& p : s.patches) {
            p.resize(m.patch_dim);
            for (double& f : p) f = rng.next_double(-0.5, 0.5);
        }
        if (pattern) {
            std::fill(s.patches[kPatternPatch].begin(), s.patches[kPatternPatch].end(),
                      kPatternValue);
        }
        s.tokens.resize(m.n_tokens);
        for (std::uint32_t& t : s.tokens) {
            t = 2 + static_cast<std::uint32_t>(rng.next_index(m.vocab_size - 2));
        }
        if (trigger) {
            s.tokens[rng.next_index(m.n_tokens)] = kTriggerToken;
        }
        out.push_back(std::move(s));
    }
    return out;
}

void save_samples(const std::string& path, const DatasetManifest& manifest,
                  const std::vector<MultimodalSample>& samples) {
    json root;
    root["schema_version"] = kSampleSchemaVersion;
    json jm;
    jm["task_kind"] = task_kind_name(manifest.task_kind);
    jm["n_samples"] = manifest.n_samples;
    jm["n_patches"] = manifest.n_patches;
    jm["patch_dim"] = manifest.patch_dim;
    jm["n_tokens"] = manifest.n_tokens;
    jm["vocab_size"] = manifest.vocab_size;
    jm["n_classes"] = manifest.n_classes;
    jm["seed"] = manifest.seed;
    root["manifest"] = std::move(jm);

    json arr = json::array();
    for (const MultimodalSample& s : samples) {
        json js;
        js["sample_id"] = s.sample_id;
        js["patches"] = s.patches;
        js["tokens"] = s.tokens;
        js["label"] = s.label;
        json removed = json::array();
        for (const DatapointId& d : s.removed) {
            removed.push_back({{"modality", modality_name(d.modality)}, {"index", d.index}});
        }
        js["removed"] = std::move(removed);
        arr.push_back(std::move(js));
    }
    root["samples"] = std::move(arr);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_samples: cannot open '" + path + "' for writing");
    out << root.dump(2) << '\n';
    if (!out) throw IoError("save_samples: write failed for '" + path + "'");
}

SampleFile load_samples(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_samples: cannot open '" + path + "'");
    json root;
    try {
        in >> root;
    } catch (const json::parse_error& e) {
        throw LoadError("load_samples: malformed JSON in '" + path + "': " + e.what());
    }

    try {
        if (root.at("schema_version").get<int>() != kSampleSchemaVersion) {
            throw LoadError("load_samples: unsupported schema_version in '" + path + "'");
        }
        const json& jm = root.at("manifest");
        SampleFile file;
        file.manifest.task_kind = task_kind_from_name(jm.at("task_kind").get<std::string>());
        file.manifest.n_samples = jm.at("n_samples").get<std::size_t>();
        file.manifest.n_patches = jm.at("n_patches").get<std::size_t>();
        file.manifest.patch_dim = jm.at("patch_dim").get<std::size_t>();
        file.manifest.n_tokens = jm.at("n_tokens").get<std::size_t>();
        file.manifest.vocab_size = jm.at("vocab_size").get<std::size_t>();
        file.manifest.n_classes = jm.at("n_classes").get<std::size_t>();
        file.manifest.seed = jm.at("seed").get<std::uint64_t>();

        for (const json& js : root.at("samples")) {
            MultimodalSample s;
            s.sample_id = js.at("sample_id").get<std::string>();
            s.patches = js.at("patches").get<std::vector<DenseVector>>();
            s.tokens = js.at("tokens").get<std::vector<std::uint32_t>>();
            s.label = js.at("label").get<std::size_t>();
            for (const json& jd : js.at("removed")) {
                DatapointId d{modality_from_name(jd.at("modality").get<std::string>()),
                              jd.at("index").get<std::size_t>()};
                if (!s.removed.insert(d).second) {
                    throw LoadError("load_samples: sample '" + s.sample_id +
                                    "': duplicate removed datapoint " + to_string(d));
                }
            }
            validate_sample_against(file.manifest, s);
            file.samples.push_back(std::move(s));
        }
        return file;
    } catch (const json::exception& e) {
        throw LoadError("load_samples: invalid sample file '" + path + "': " + e.what());
    }
}

}  // namespace decoupler
