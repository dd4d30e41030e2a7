#pragma once

#include <compare>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "decoupler/numerics.hpp"

namespace decoupler {

enum class Modality { ImagePatch, TextToken };

/// Reserved vocabulary index a removed token is replaced with. The dataset
/// generator never emits it as content.
inline constexpr std::uint32_t kMaskToken = 0;

/// Vocabulary index of the planted trigger token in the coupled tasks.
inline constexpr std::uint32_t kTriggerToken = 1;

/// Feature value planted on the designated patch when the pattern is present.
inline constexpr double kPatternValue = 3.0;

/// Index of the designated pattern patch.
inline constexpr std::size_t kPatternPatch = 0;

/// One removable unit of input: an image patch or a text token, addressed by
/// its position within its modality.
struct DatapointId {
    Modality modality = Modality::ImagePatch;
    std::size_t index = 0;

    auto operator<=>(const DatapointId&) const = default;
};

std::string modality_name(Modality m);
Modality modality_from_name(const std::string& name);
std::string to_string(const DatapointId& id);

/// Model-facing view of a sample: removed patches zeroed out (occlusion),
/// removed tokens replaced with kMaskToken.
struct MaterializedInput {
    std::vector<DenseVector> patches;
    std::vector<std::uint32_t> tokens;

    bool operator==(const MaterializedInput&) const = default;
};

/// A labeled set of removable datapoints across an image-like grid modality
/// and a token-sequence modality. Removal never deletes entries: text removal
/// is masking, so positions (and DatapointIds) stay stable throughout a
/// search.
struct MultimodalSample {
    std::string sample_id;
    std::vector<DenseVector> patches;   // n entries of patch_dim each
    std::vector<std::uint32_t> tokens;  // m vocabulary indices
    std::size_t label = 0;
    std::set<DatapointId> removed;

    std::size_t datapoint_count() const { return patches.size() + tokens.size(); }
    bool in_range(const DatapointId& d) const;
    MaterializedInput materialize() const;

    bool operator==(const MultimodalSample&) const = default;
};

/// Returns a copy of s with d added to the removed set. Throws
/// ValidationError when d is out of range or already removed.
MultimodalSample remove_datapoint(const MultimodalSample& s, const DatapointId& d);

/// |removed| / (n + m), in [0, 1].
double removal_fraction(const MultimodalSample& s);

/// Label rules of the synthetic coupled tasks. AndCoupling: class 1 iff the
/// designated patch carries the planted pattern AND the trigger token is
/// present. XorCoupling: class 1 iff exactly one of the two is present.
/// SingleModality: class 1 iff the pattern is present (text is noise).
enum class TaskKind { AndCoupling, XorCoupling, SingleModality };

struct DatasetManifest {
    TaskKind task_kind = TaskKind::AndCoupling;
    std::size_t n_samples = 0;
    std::size_t n_patches = 9;
    std::size_t patch_dim = 4;
    std::size_t n_tokens = 6;
    std::size_t vocab_size = 12;
    std::size_t n_classes = 2;
    std::uint64_t seed = 0;

    bool operator==(const DatasetManifest&) const = default;
};

/// Deterministic in the seed. Labels alternate, so class balance is exact.
/// Noise tokens are drawn from [2, vocab_size); noise patch features from
/// [-0.5, 0.5). Throws ValidationError on degenerate dimensions
/// (vocab_size < 3, n_classes < 2, any zero dimension).
std::vector<MultimodalSample> generate_dataset(const DatasetManifest& m);

struct SampleFile {
    DatasetManifest manifest;
    std::vector<MultimodalSample> samples;
};

/// JSON persistence. load(save(X)) == X field-for-field, including removed
/// sets; saving twice produces identical bytes.
void save_samples(const std::string& path, const DatasetManifest& manifest,
                  const std::vector<MultimodalSample>& samples);
SampleFile load_samples(const std::string& path);

}  // namespace decoupler
