#include "decoupler/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "decoupler/errors.hpp"
#include "decoupler/rng.hpp"

namespace decoupler {

using json = nlohmann::ordered_json;

namespace {

constexpr int kCheckpointSchemaVersion = 1;

struct TensorEntry {
    std::string name;
    TensorKind kind;
    DenseMatrix* mat = nullptr;
    DenseVector* vec = nullptr;
    std::size_t rows = 0;  // vectors: length
    std::size_t cols = 0;  // vectors: 1
};

std::vector<TensorEntry> tensor_table(Architecture a, const ModelDims& d, Weights& w) {
    auto mat = [](const char* name, DenseMatrix& m, std::size_t r, std::size_t c) {
        return TensorEntry{name, TensorKind::Matrix, &m, nullptr, r, c};
    };
    auto vec = [](const char* name, DenseVector& v, std::size_t len) {
        return TensorEntry{name, TensorKind::Vector, nullptr, &v, len, 1};
    };
    switch (a) {
        case Architecture::ProductFusion:
        case Architecture::SumFusion:
            return {
                mat("w_img", w.w_img, d.d, d.n_patches * d.patch_dim),
                vec("b_img", w.b_img, d.d),
                mat("embed", w.embed, d.vocab_size, d.d),
                mat("w_txt", w.w_txt, d.d, d.d),
                vec("b_txt", w.b_txt, d.d),
                mat("w_head", w.w_head, d.n_classes, d.d),
                vec("b_head", w.b_head, d.n_classes),
            };
        case Architecture::AttentionFusion:
            return {
                mat("w_patch", w.w_patch, d.d, d.patch_dim),
                vec("b_patch", w.b_patch, d.d),
                mat("embed", w.embed, d.vocab_size, d.d),
                vec("cls", w.cls, d.d),
                mat("w_q", w.w_q, d.d, d.d),
                mat("w_k", w.w_k, d.d, d.d),
                mat("w_v", w.w_v, d.d, d.d),
                mat("w_head", w.w_head, d.n_classes, d.d),
                vec("b_head", w.b_head, d.n_classes),
            };
    }
    throw ValidationError("unknown architecture");
}

std::vector<double>* buffer_of(const TensorEntry& e) {
    return e.kind == TensorKind::Matrix ? &e.mat->values : e.vec;
}

void shape_weights(Architecture a, const ModelDims& d, Weights& w) {
    for (TensorEntry& e : tensor_table(a, d, w)) {
        if (e.kind == TensorKind::Matrix) {
            *e.mat = DenseMatrix(e.rows, e.cols);
        } else {
            e.vec->assign(e.rows, 0.0);
        }
    }
}

void validate_dims(const ModelDims& d) {
    if (d.patch_dim == 0 || d.n_patches == 0 || d.n_tokens == 0 || d.vocab_size == 0 ||
        d.d == 0) {
        throw ValidationError("model dims: all dimensions must be positive");
    }
    if (d.n_classes < 2) throw ValidationError("model dims: n_classes must be at least 2");
}

DenseVector add(DenseVector a, const DenseVector& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
}

/// m[r,c] += a[r] * b[c]
void outer_add(DenseMatrix& m, const DenseVector& a, const DenseVector& b) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        double* row = m.values.data() + r * m.cols;
        for (std::size_t c = 0; c < m.cols; ++c) row[c] += a[r] * b[c];
    }
}

DenseVector embed_row(const DenseMatrix& table, std::uint32_t token) {
    const double* row = table.values.data() + token * table.cols;
    return DenseVector(row, row + table.cols);
}

// Product/Sum fusion intermediates, kept for backprop.
struct FusionTrace {
    DenseVector x_img;    // concatenated materialized patches
    DenseVector a_img;    // pre-ReLU image branch
    DenseVector phi_img;  // ReLU(a_img)
    DenseVector tbar;     // mean token embedding
    DenseVector phi_txt;
    DenseVector z;
};

FusionTrace fusion_forward(const FusionModel& model, const MaterializedInput& in) {
    const Weights& w = model.weights;
    FusionTrace t;
    t.x_img.reserve(model.dims.n_patches * model.dims.patch_dim);
    for (const DenseVector& p : in.patches) t.x_img.insert(t.x_img.end(), p.begin(), p.end());
    t.a_img = add(matvec(w.w_img, t.x_img), w.b_img);
    t.phi_img.resize(t.a_img.size());
    for (std::size_t i = 0; i < t.a_img.size(); ++i) t.phi_img[i] = std::max(t.a_img[i], 0.0);

    t.tbar.assign(model.dims.d, 0.0);
    for (std::uint32_t tok : in.tokens) {
        const double* row = w.embed.values.data() + tok * w.embed.cols;
        for (std::size_t i = 0; i < t.tbar.size(); ++i) t.tbar[i] += row[i];
    }
    const double inv_m = 1.0 / static_cast<double>(in.tokens.size());
    for (double& x : t.tbar) x *= inv_m;
    t.phi_txt = add(matvec(w.w_txt, t.tbar), w.b_txt);

    t.z.resize(model.dims.d);
    if (model.architecture == Architecture::ProductFusion) {
        for (std::size_t i = 0; i < t.z.size(); ++i) t.z[i] = t.phi_img[i] * t.phi_txt[i];
    } else {
        for (std::size_t i = 0; i < t.z.size(); ++i) t.z[i] = t.phi_img[i] + t.phi_txt[i];
    }
    return t;
}

}  // namespace

std::string architecture_name(Architecture a) {
    switch (a) {
        case Architecture::ProductFusion: return "product_fusion";
        case Architecture::SumFusion: return "sum_fusion";
        case Architecture::AttentionFusion: return "attention_fusion";
    }
    throw ValidationError("unknown architecture");
}

Architecture architecture_from_name(const std::string& name) {
    if (name == "product_fusion") return Architecture::ProductFusion;
    if (name == "sum_fusion") return Architecture::SumFusion;
    if (name == "attention_fusion") return Architecture::AttentionFusion;
    throw LoadError("unknown architecture '" + name + "'");
}

ModelDims dims_from_manifest(const DatasetManifest& m, std::size_t embedding_dim) {
    return ModelDims{m.patch_dim, m.n_patches, m.n_tokens, m.vocab_size, embedding_dim,
                     m.n_classes};
}

std::vector<std::pair<std::string, TensorKind>> active_tensor_names(Architecture a) {
    Weights scratch;
    ModelDims unit{1, 1, 1, 1, 1, 2};
    std::vector<std::pair<std::string, TensorKind>> out;
    for (const TensorEntry& e : tensor_table(a, unit, scratch)) out.emplace_back(e.name, e.kind);
    return out;
}

FusionModel FusionModel::init_random(Architecture a, const ModelDims& dims, std::uint64_t seed) {
    validate_dims(dims);
    FusionModel model;
    model.architecture = a;
    model.dims = dims;
    shape_weights(a, dims, model.weights);
    Rng rng(seed);
    for (TensorEntry& e : tensor_table(a, dims, model.weights)) {
        for (double& x : *buffer_of(e)) x = rng.next_double(-0.1, 0.1);
    }
    return model;
}

void FusionModel::validate_input(const MaterializedInput& in) const {
    if (in.patches.size() != dims.n_patches) {
        throw ShapeError("model input: expected " + std::to_string(dims.n_patches) +
                         " patches, got " + std::to_string(in.patches.size()));
    }
    for (const DenseVector& p : in.patches) {
        if (p.size() != dims.patch_dim) {
            throw ShapeError("model input: patch length " + std::to_string(p.size()) +
                             " != patch_dim " + std::to_string(dims.patch_dim));
        }
    }
    if (in.tokens.size() != dims.n_tokens) {
        throw ShapeError("model input: expected " + std::to_string(dims.n_tokens) +
                         " tokens, got " + std::to_string(in.tokens.size()));
    }
    for (std::uint32_t t : in.tokens) {
        if (t >= dims.vocab_size) {
            throw ShapeError("model input: token index " + std::to_string(t) +
                             " >= vocab_size " + std::to_string(dims.vocab_size));
        }
    }
}

FusionEmbedding FusionModel::embed(const MultimodalSample& s) const {
    return embed(s.materialize());
}

FusionEmbedding FusionModel::embed(const MaterializedInput& in) const {
    validate_input(in);
    if (architecture == Architecture::AttentionFusion) {
        return FusionEmbedding{attention_readout(*this, attention_cache(*this, in))};
    }
    return FusionEmbedding{fusion_forward(*this, in).z};
}

DenseVector FusionModel::classify(const FusionEmbedding& e) const {
    if (e.z.size() != dims.d) {
        throw ShapeError("classify: embedding length " + std::to_string(e.z.size()) +
                         " != d " + std::to_string(dims.d));
    }
    return softmax(add(matvec(weights.w_head, e.z), weights.b_head));
}

std::size_t FusionModel::predict(const MultimodalSample& s) const {
    return argmax(classify(embed(s)));
}

std::size_t FusionModel::predict(const MaterializedInput& in) const {
    return argmax(classify(embed(in)));
}

AttentionCache attention_cache(const FusionModel& model, const MaterializedInput& in) {
    if (model.architecture != Architecture::AttentionFusion) {
        throw ValidationError("attention_cache: model is not attention-fusion");
    }
    const Weights& w = model.weights;
    AttentionCache c;
    const std::size_t seq = 1 + in.patches.size() + in.tokens.size();
    c.h.reserve(seq);
    c.h.push_back(w.cls);
    for (const DenseVector& p : in.patches) c.h.push_back(add(matvec(w.w_patch, p), w.b_patch));
    for (std::uint32_t tok : in.tokens) c.h.push_back(embed_row(w.embed, tok));
    c.k.reserve(seq);
    c.v.reserve(seq);
    for (const DenseVector& h : c.h) {
        c.k.push_back(matvec(w.w_k, h));
        c.v.push_back(matvec(w.w_v, h));
    }
    c.q0 = matvec(w.w_q, c.h.front());
    return c;
}

DenseVector attention_readout(const FusionModel& model, const AttentionCache& cache) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(model.dims.d));
    DenseVector scores(cache.k.size());
    for (std::size_t j = 0; j < cache.k.size(); ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < cache.q0.size(); ++i) acc += cache.q0[i] * cache.k[j][i];
        scores[j] = acc * scale;
    }
    const DenseVector attn = softmax(scores);
    DenseVector z(model.dims.d, 0.0);
    for (std::size_t j = 0; j < cache.v.size(); ++j) {
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += attn[j] * cache.v[j][i];
    }
    return z;
}

DenseVector attention_position_for_removed(const FusionModel& model, const DatapointId& d) {
    if (d.modality == Modality::ImagePatch) return model.weights.b_patch;
    return embed_row(model.weights.embed, kMaskToken);
}

LossGradients loss_gradients(const FusionModel& model, const MaterializedInput& in,
                             std::size_t label) {
    model.validate_input(in);
    if (label >= model.dims.n_classes) {
        throw ValidationError("loss_gradients: label " + std::to_string(label) +
                              " >= n_classes " + std::to_string(model.dims.n_classes));
    }
    const Weights& w = model.weights;
    const ModelDims& dims = model.dims;
    LossGradients out;
    shape_weights(model.architecture, dims, out.grad);
    Weights& g = out.grad;
    out.patch_feature_grad.assign(dims.n_patches * dims.patch_dim, 0.0);

    auto head_backward = [&](const DenseVector& z) -> DenseVector {
        const DenseVector logits = add(matvec(w.w_head, z), w.b_head);
        out.loss = cross_entropy_loss(logits, label);
        DenseVector dlogits = softmax(logits);
        dlogits[label] -= 1.0;
        outer_add(g.w_head, dlogits, z);
        g.b_head = add(std::move(g.b_head), dlogits);
        return matvec_transposed(w.w_head, dlogits);
    };

    if (model.architecture == Architecture::AttentionFusion) {
        const AttentionCache c = attention_cache(model, in);
        const double scale = 1.0 / std::sqrt(static_cast<double>(dims.d));
        DenseVector scores(c.k.size());
        for (std::size_t j = 0; j < c.k.size(); ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < c.q0.size(); ++i) acc += c.q0[i] * c.k[j][i];
            scores[j] = acc * scale;
        }
        const DenseVector attn = softmax(scores);
        DenseVector z(dims.d, 0.0);
        for (std::size_t j = 0; j < c.v.size(); ++j) {
            for (std::size_t i = 0; i < z.size(); ++i) z[i] += attn[j] * c.v[j][i];
        }

        const DenseVector dz = head_backward(z);
        const std::size_t seq = c.h.size();

        // softmax-attention backward over the CLS row
        DenseVector da(seq, 0.0);
        double sum_ada = 0.0;
        for (std::size_t j = 0; j < seq; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < dz.size(); ++i) acc += dz[i] * c.v[j][i];
            da[j] = acc;
            sum_ada += attn[j] * acc;
        }
        DenseVector dq0(dims.d, 0.0);
        std::vector<DenseVector> dh(seq, DenseVector(dims.d, 0.0));
        for (std::size_t j = 0; j < seq; ++j) {
            const double ds = attn[j] * (da[j] - sum_ada) * scale;
            for (std::size_t i = 0; i < dims.d; ++i) dq0[i] += ds * c.k[j][i];
            // dk_j = ds * q0; dv_j = attn[j] * dz
            DenseVector dk(dims.d), dv(dims.d);
            for (std::size_t i = 0; i < dims.d; ++i) {
                dk[i] = ds * c.q0[i];
                dv[i] = attn[j] * dz[i];
            }
            outer_add(g.w_k, dk, c.h[j]);
            outer_add(g.w_v, dv, c.h[j]);
            dh[j] = add(add(std::move(dh[j]), matvec_transposed(w.w_k, dk)),
                        matvec_transposed(w.w_v, dv));
        }
        outer_add(g.w_q, dq0, c.h[0]);
        dh[0] = add(std::move(dh[0]), matvec_transposed(w.w_q, dq0));

        g.cls = add(std::move(g.cls), dh[0]);
        for (std::size_t i = 0; i < dims.n_patches; ++i) {
            const DenseVector& dhp = dh[1 + i];
            outer_add(g.w_patch, dhp, in.patches[i]);
            g.b_patch = add(std::move(g.b_patch), dhp);
            const DenseVector dpatch = matvec_transposed(w.w_patch, dhp);
            std::copy(dpatch.begin(), dpatch.end(),
                      out.patch_feature_grad.begin() + i * dims.patch_dim);
        }
        for (std::size_t j = 0; j < dims.n_tokens; ++j) {
            const DenseVector& dht = dh[1 + dims.n_patches + j];
            double* row = g.embed.values.data() + in.tokens[j] * g.embed.cols;
            for (std::size_t i = 0; i < dims.d; ++i) row[i] += dht[i];
        }
        return out;
    }

    const FusionTrace t = fusion_forward(model, in);
    const DenseVector dz = head_backward(t.z);

    DenseVector dphi_img(dims.d), dphi_txt(dims.d);
    if (model.architecture == Architecture::ProductFusion) {
        for (std::size_t i = 0; i < dims.d; ++i) {
            dphi_img[i] = dz[i] * t.phi_txt[i];
            dphi_txt[i] = dz[i] * t.phi_img[i];
        }
    } else {
        dphi_img = dz;
        dphi_txt = dz;
    }

    DenseVector da(dims.d);
    for (std::size_t i = 0; i < dims.d; ++i) da[i] = t.a_img[i] > 0.0 ? dphi_img[i] : 0.0;
    outer_add(g.w_img, da, t.x_img);
    g.b_img = add(std::move(g.b_img), da);
    out.patch_feature_grad = matvec_transposed(w.w_img, da);

    outer_add(g.w_txt, dphi_txt, t.tbar);
    g.b_txt = add(std::move(g.b_txt), dphi_txt);
    const DenseVector dtbar = matvec_transposed(w.w_txt, dphi_txt);
    const double inv_m = 1.0 / static_cast<double>(in.tokens.size());
    for (std::uint32_t tok : in.tokens) {
        double* row = g.embed.values.data() + tok * g.embed.cols;
        for (std::size_t i = 0; i < dims.d; ++i) row[i] += dtbar[i] * inv_m;
    }
    return out;
}

TrainResult train(const FusionModel& init, const std::vector<MultimodalSample>& data,
                  const TrainConfig& cfg) {
    if (data.empty()) throw ValidationError("train: empty dataset");
    if (!(cfg.learning_rate > 0.0) || cfg.learning_rate >= 10.0) {
        throw ValidationError("train: learning_rate must be in (0, 10)");
    }
    if (cfg.epochs == 0 || cfg.epochs > 10'000) {
        throw ValidationError("train: epochs must be in [1, 10000]");
    }
    if (cfg.batch_size == 0) throw ValidationError("train: batch_size must be positive");

    TrainResult result;
    result.model = init;
    FusionModel& model = result.model;

    const std::size_t n = data.size();
    std::vector<MaterializedInput> inputs;
    inputs.reserve(n);
    for (const MultimodalSample& s : data) {
        inputs.push_back(s.materialize());
        model.validate_input(inputs.back());
        if (s.label >= model.dims.n_classes) {
            throw ValidationError("train: sample '" + s.sample_id + "' label out of range");
        }
    }

    const std::size_t batch = std::min(cfg.batch_size, n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(cfg.seed);

    Weights acc;
    shape_weights(model.architecture, model.dims, acc);
    auto acc_entries = tensor_table(model.architecture, model.dims, acc);

    result.loss_trace.reserve(cfg.epochs);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = n - 1; i > 0; --i) {
            std::swap(order[i], order[rng.next_index(i + 1)]);
        }
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t stop = std::min(start + batch, n);
            for (const TensorEntry& e : acc_entries) {
                std::fill(buffer_of(e)->begin(), buffer_of(e)->end(), 0.0);
            }
            for (std::size_t b = start; b < stop; ++b) {
                const std::size_t idx = order[b];
                LossGradients lg = loss_gradients(model, inputs[idx], data[idx].label);
                epoch_loss += lg.loss;
                auto grad_entries = tensor_table(model.architecture, model.dims, lg.grad);
                for (std::size_t t = 0; t < acc_entries.size(); ++t) {
                    std::vector<double>& dst = *buffer_of(acc_entries[t]);
                    const std::vector<double>& src = *buffer_of(grad_entries[t]);
                    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
                }
            }
            const double step = cfg.learning_rate / static_cast<double>(stop - start);
            auto model_entries = tensor_table(model.architecture, model.dims, model.weights);
            for (std::size_t t = 0; t < acc_entries.size(); ++t) {
                std::vector<double>& dst = *buffer_of(model_entries[t]);
                const std::vector<double>& src = *buffer_of(acc_entries[t]);
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= step * src[i];
            }
        }
        const double mean_loss = epoch_loss / static_cast<double>(n);
        if (!std::isfinite(mean_loss)) {
            throw TrainingError("training diverged (non-finite loss) at epoch " +
                                    std::to_string(epoch),
                                epoch);
        }
        result.loss_trace.push_back(mean_loss);
    }

    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (model.predict(inputs[i]) == data[i].label) ++correct;
    }
    result.final_train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    return result;
}

void save_checkpoint(const std::string& path, const FusionModel& model,
                     const TrainConfig& train_config, double final_train_accuracy) {
    json root;
    root["schema_version"] = kCheckpointSchemaVersion;
    root["architecture"] = architecture_name(model.architecture);
    json jd;
    jd["patch_dim"] = model.dims.patch_dim;
    jd["n_patches"] = model.dims.n_patches;
    jd["n_tokens"] = model.dims.n_tokens;
    jd["vocab_size"] = model.dims.vocab_size;
    jd["d"] = model.dims.d;
    jd["n_classes"] = model.dims.n_classes;
    root["dims"] = std::move(jd);

    json jw;
    Weights& w = const_cast<Weights&>(model.weights);
    for (const TensorEntry& e : tensor_table(model.architecture, model.dims, w)) {
        jw[e.name] = *buffer_of(e);
    }
    root["weights"] = std::move(jw);

    json jt;
    jt["learning_rate"] = train_config.learning_rate;
    jt["epochs"] = train_config.epochs;
    jt["batch_size"] = train_config.batch_size;
    jt["seed"] = train_config.seed;
    root["train_config"] = std::move(jt);
    root["final_train_accuracy"] = final_train_accuracy;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_checkpoint: cannot open '" + path + "' for writing");
    out << root.dump(2) << '\n';
    if (!out) throw IoError("save_checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_checkpoint: cannot open '" + path + "'");
    json root;
    try {
        in >> root;
    } catch (const json::parse_error& e) {
        throw LoadError("load_checkpoint: malformed JSON in '" + path + "': " + e.what());
    }

    try {
        if (root.at("schema_version").get<int>() != kCheckpointSchemaVersion) {
            throw LoadError("load_checkpoint: unsupported schema_version in '" + path + "'");
        }
        Checkpoint ckpt;
        ckpt.model.architecture =
            architecture_from_name(root.at("architecture").get<std::string>());
        const json& jd = root.at("dims");
        ckpt.model.dims.patch_dim = jd.at("patch_dim").get<std::size_t>();
        ckpt.model.dims.n_patches = jd.at("n_patches").get<std::size_t>();
        ckpt.model.dims.n_tokens = jd.at("n_tokens").get<std::size_t>();
        ckpt.model.dims.vocab_size = jd.at("vocab_size").get<std::size_t>();
        ckpt.model.dims.d = jd.at("d").get<std::size_t>();
        ckpt.model.dims.n_classes = jd.at("n_classes").get<std::size_t>();
        validate_dims(ckpt.model.dims);

        shape_weights(ckpt.model.architecture, ckpt.model.dims, ckpt.model.weights);
        const json& jw = root.at("weights");
        auto entries =
            tensor_table(ckpt.model.architecture, ckpt.model.dims, ckpt.model.weights);
        if (jw.size() != entries.size()) {
            throw LoadError("load_checkpoint: expected " + std::to_string(entries.size()) +
                            " weight tensors, got " + std::to_string(jw.size()));
        }
        for (const TensorEntry& e : entries) {
            if (!jw.contains(e.name)) {
                throw LoadError("load_checkpoint: missing weight tensor '" + e.name + "'");
            }
            std::vector<double> values = jw.at(e.name).get<std::vector<double>>();
            const std::size_t expected = e.rows * e.cols;
            if (values.size() != expected) {
                throw LoadError("load_checkpoint: weight '" + e.name + "' has " +
                                std::to_string(values.size()) + " values, expected " +
                                std::to_string(expected) + " for the declared dims");
            }
            for (double x : values) {
                if (!std::isfinite(x)) {
                    throw LoadError("load_checkpoint: weight '" + e.name +
                                    "' contains a non-finite value");
                }
            }
            *buffer_of(e) = std::move(values);
        }

        const json& jt = root.at("train_config");
        ckpt.train_config.learning_rate = jt.at("learning_rate").get<double>();
        ckpt.train_config.epochs = jt.at("epochs").get<std::size_t>();
        ckpt.train_config.batch_size = jt.at("batch_size").get<std::size_t>();
        ckpt.train_config.seed = jt.at("seed").get<std::uint64_t>();
        ckpt.final_train_accuracy = root.at("final_train_accuracy").get<double>();
        return ckpt;
    } catch (const json::exception& e) {
        throw LoadError("load_checkpoint: invalid checkpoint '" + path + "': " + e.what());
    }
}

}  // namespace decoupler
