#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "decoupler/numerics.hpp"
#include "decoupler/sample.hpp"

namespace decoupler {

/// The unified view splits a multimodal classifier into a fusion embedder Z
/// and a classifier head M; the attack engine only ever talks to these two
/// functions. Three toy fusion styles cover the common mechanisms:
///  - ProductFusion: z = φ_img ⊙ φ_txt (element-wise product)
///  - SumFusion:     z = φ_img + φ_txt (element-wise sum)
///  - AttentionFusion: z = CLS-position output of one softmax self-attention
///    layer over [CLS; patch embeddings; token embeddings]
/// with φ_img = ReLU(linear over the concatenated materialized patches) and
/// φ_txt = linear over the mean token embedding.
enum class Architecture { ProductFusion, SumFusion, AttentionFusion };

std::string architecture_name(Architecture a);
Architecture architecture_from_name(const std::string& name);

struct ModelDims {
    std::size_t patch_dim = 4;
    std::size_t n_patches = 9;
    std::size_t n_tokens = 6;
    std::size_t vocab_size = 12;
    std::size_t d = 16;  // fusion embedding dimension
    std::size_t n_classes = 2;

    bool operator==(const ModelDims&) const = default;
};

ModelDims dims_from_manifest(const DatasetManifest& m, std::size_t embedding_dim = 16);

/// d-dimensional fusion embedding z = Z(x).
struct FusionEmbedding {
    DenseVector z;

    bool operator==(const FusionEmbedding&) const = default;
};

/// Named weight collection; which tensors are active depends on the
/// architecture (see active_tensor_names).
struct Weights {
    // ProductFusion / SumFusion
    DenseMatrix w_img;   // d × (n_patches·patch_dim)
    DenseVector b_img;   // d
    DenseMatrix w_txt;   // d × d
    DenseVector b_txt;   // d
    // AttentionFusion
    DenseMatrix w_patch;  // d × patch_dim
    DenseVector b_patch;  // d
    DenseVector cls;      // d
    DenseMatrix w_q, w_k, w_v;  // d × d each
    // shared
    DenseMatrix embed;   // vocab_size × d token embedding table
    DenseMatrix w_head;  // n_classes × d
    DenseVector b_head;  // n_classes

    bool operator==(const Weights&) const = default;
};

enum class TensorKind { Matrix, Vector };

/// Canonical (name, kind) order of the tensors an architecture uses; fixes
/// initialization order and the checkpoint layout.
std::vector<std::pair<std::string, TensorKind>> active_tensor_names(Architecture a);

struct TrainConfig {
    double learning_rate = 0.1;
    std::size_t epochs = 1000;
    std::size_t batch_size = 64;  // clamped to the dataset size
    std::uint64_t seed = 0;

    bool operator==(const TrainConfig&) const = default;
};

struct FusionModel {
    Architecture architecture = Architecture::ProductFusion;
    ModelDims dims;
    Weights weights;

    /// Fresh model with every active weight drawn uniform(-0.1, 0.1) from the
    /// seeded generator, in canonical tensor order.
    static FusionModel init_random(Architecture a, const ModelDims& dims, std::uint64_t seed);

    /// Z(x). Validates sample shape against dims.
    FusionEmbedding embed(const MultimodalSample& s) const;
    FusionEmbedding embed(const MaterializedInput& in) const;

    /// M(z) = softmax(w_head·z + b_head).
    DenseVector classify(const FusionEmbedding& e) const;

    /// argmax of classify(embed(s)); ties break toward the lower class index.
    std::size_t predict(const MultimodalSample& s) const;
    std::size_t predict(const MaterializedInput& in) const;

    void validate_input(const MaterializedInput& in) const;

    bool operator==(const FusionModel&) const = default;
};

/// Loss, weight gradients, and the gradient w.r.t. the flattened patch
/// features (n_patches·patch_dim, used by the dense perturbation baseline).
struct LossGradients {
    double loss = 0.0;
    Weights grad;
    DenseVector patch_feature_grad;
};

/// Analytic gradients of cross_entropy_loss(classify(embed(in)), label) for
/// all active tensors. Matches central finite differences within 1e-4
/// relative error.
LossGradients loss_gradients(const FusionModel& model, const MaterializedInput& in,
                             std::size_t label);

struct TrainResult {
    FusionModel model;
    std::vector<double> loss_trace;  // per-epoch mean loss
    double final_train_accuracy = 0.0;
};

/// Mini-batch gradient descent on the cross-entropy loss with hand-derived
/// gradients. Deterministic given cfg.seed (seeded Fisher-Yates shuffling).
/// Throws TrainingError naming the epoch if the loss goes non-finite.
TrainResult train(const FusionModel& init, const std::vector<MultimodalSample>& data,
                  const TrainConfig& cfg);

// --- checkpoint persistence ---

struct Checkpoint {
    FusionModel model;
    TrainConfig train_config;
    double final_train_accuracy = 0.0;
};

/// JSON weight file; save→load→save produces identical bytes.
void save_checkpoint(const std::string& path, const FusionModel& model,
                     const TrainConfig& train_config, double final_train_accuracy);
Checkpoint load_checkpoint(const std::string& path);

// --- attention internals, shared with the salience fast path ---

/// Per-position state of the single attention layer for a materialized
/// input: input embeddings h = [CLS; patch projections; token embeddings],
/// their key/value projections, and the CLS query.
struct AttentionCache {
    std::vector<DenseVector> h;
    std::vector<DenseVector> k;
    std::vector<DenseVector> v;
    DenseVector q0;
};

AttentionCache attention_cache(const FusionModel& model, const MaterializedInput& in);

/// CLS-row attention readout. embed() for AttentionFusion is exactly
/// attention_readout(attention_cache(...)), so a caller that patches one
/// position of a cache reproduces the generic result bit for bit.
DenseVector attention_readout(const FusionModel& model, const AttentionCache& cache);

/// h-vector a removed datapoint decays to: b_patch-only projection for a
/// patch, the mask-token embedding row for a token.
DenseVector attention_position_for_removed(const FusionModel& model, const DatapointId& d);

}  // namespace decoupler
