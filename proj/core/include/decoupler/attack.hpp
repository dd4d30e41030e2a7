#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "decoupler/model.hpp"
#include "decoupler/sample.hpp"

namespace decoupler {

struct SalienceConfig {
    /// L∞ embedding-change threshold above which a datapoint counts as
    /// salient. The default detects any change beyond float noise.
    double tolerance = 1e-9;
    /// Reuses cached key/value projections on attention models so each
    /// candidate costs one position recompute instead of a full pass.
    /// Produces bit-identical results to the generic test; ignored for
    /// non-attention architectures.
    bool transformer_fast_path = false;
};

struct SalientDatapoint {
    DatapointId id;
    double magnitude = 0.0;  // L∞ embedding change upon removal

    bool operator==(const SalientDatapoint&) const = default;
};

/// Datapoints whose individual removal moves the fusion embedding by more
/// than the tolerance, ordered by magnitude descending, ties by
/// (modality, index) ascending.
struct SalientSet {
    std::vector<SalientDatapoint> members;

    bool operator==(const SalientSet&) const = default;
};

/// Scans every not-yet-removed datapoint of s; one embedding evaluation per
/// candidate plus one for the baseline.
SalientSet salient_set(const FusionModel& model, const MultimodalSample& s,
                       const SalienceConfig& cfg = {});

/// Lazily enumerates non-empty subsets of the salient ids in strictly
/// non-decreasing cardinality; within a cardinality, lexicographic order over
/// member ranks (rank = position in the salience ordering). Stops after
/// `budget` subsets. Never yields the same subset twice.
class CoupledSubsetStream {
  public:
    CoupledSubsetStream(SalientSet base, std::size_t budget);
    CoupledSubsetStream(SalientSet base, std::size_t budget, std::size_t max_cardinality);

    std::optional<std::vector<DatapointId>> next();

    const SalientSet& base() const { return base_; }

  private:
    SalientSet base_;
    std::size_t budget_;
    std::size_t max_cardinality_;
    std::size_t cardinality_ = 1;
    std::vector<std::size_t> ranks_;  // current combination; empty = start of cardinality
    std::size_t yielded_ = 0;
};

CoupledSubsetStream coupled_subsets(SalientSet base, std::size_t budget);

enum class AttackMode { Untargeted, Targeted };

/// Termination predicate f plus the search caps: untargeted succeeds when the
/// prediction leaves the sample's label, targeted when it reaches `target`.
struct TerminationSpec {
    AttackMode mode = AttackMode::Untargeted;
    std::size_t target = 0;  // Targeted only
    std::size_t maxitr = 500;
    std::size_t eval_budget = 1'000'000;

    bool operator==(const TerminationSpec&) const = default;
};

/// Subsets tested per outer iteration before the salient set is recomputed.
inline constexpr std::size_t kDefaultSubsetBudget = 100'000;

enum class AttackStatus { Success, Exhausted, BudgetExceeded };

std::string attack_status_name(AttackStatus s);

struct AttackResult {
    AttackStatus status = AttackStatus::Exhausted;
    std::set<DatapointId> removed;
    MultimodalSample adversarial_sample;
    std::size_t original_class = 0;
    std::size_t final_class = 0;
    std::size_t forward_evals = 0;
    std::size_t outer_iters = 0;
    double removal_fraction = 0.0;
};

/// The decoupling attack: outer loop recomputes the salient set on the
/// current candidate, the inner loop tests coupled subsets in size order.
/// A subset that satisfies the termination predicate ends the search; a
/// subset that changes the class without satisfying it (targeted miss) is
/// reverted; a subset that leaves the class unchanged is kept only when it is
/// the first subset of the current stream (greedy progress), otherwise
/// reverted. Successes are post-minimized by a pruning pass that re-adds each
/// removed datapoint and keeps it removed only if still needed.
///
/// Preconditions: the model must classify s correctly (PreconditionError
/// otherwise; callers filter, matching the attack-on-correct-samples
/// convention), and a targeted spec must not name the sample's own label.
AttackResult decoupling_attack(const FusionModel& model, const MultimodalSample& s,
                               const TerminationSpec& spec, const SalienceConfig& cfg = {},
                               std::size_t subset_budget = kDefaultSubsetBudget);

/// Exhaustive search over all removal subsets of all datapoints (not just
/// salient ones) is capped at this count: 2^20 forward passes.
inline constexpr std::size_t kOracleDatapointCap = 20;

struct OracleOutcome {
    /// false = NoAdversarialSubset: full enumeration found nothing.
    bool exists = false;
    /// Minimal-cardinality satisfying subset, lexicographically first over
    /// (modality, index) among the minimal ones.
    std::set<DatapointId> removed;
    std::size_t final_class = 0;
    std::size_t subsets_tested = 0;
};

/// Enumerates ALL non-empty removal subsets in non-decreasing cardinality
/// (lexicographic within a cardinality) and returns the first one satisfying
/// the spec. Throws CapacityError above kOracleDatapointCap datapoints.
OracleOutcome brute_force_oracle(const FusionModel& model, const MultimodalSample& s,
                                 const TerminationSpec& spec);

/// Dense gradient-sign perturbation over every patch feature (text is left
/// untouched); the contrast baseline for points-changed comparisons. Counts a
/// patch datapoint as changed when any of its features moved.
struct DenseBaselineResult {
    bool success = false;
    std::size_t iterations = 0;
    double changed_fraction = 0.0;  // changed patch datapoints / (n + m)
    std::size_t original_class = 0;
    std::size_t final_class = 0;
};

DenseBaselineResult dense_baseline(const FusionModel& model, const MultimodalSample& s,
                                   double step, std::size_t iters);

/// Success count of uniformly random removal subsets of fixed cardinality;
/// the random control for the engine's guided search.
std::size_t random_removal_baseline(const FusionModel& model, const MultimodalSample& s,
                                    const TerminationSpec& spec, std::size_t cardinality,
                                    std::size_t trials, std::uint64_t seed);

// --- persisted per-sample outcomes ---

/// Status as persisted by the batch driver; engine errors are recorded
/// rather than fatal, so the file format has an Error variant on top of
/// AttackStatus.
enum class RecordStatus { Success, Exhausted, BudgetExceeded, Error };

std::string record_status_name(RecordStatus s);
RecordStatus record_status_from_name(const std::string& name);
RecordStatus to_record_status(AttackStatus s);

struct AttackRecord {
    std::string sample_id;
    RecordStatus status = RecordStatus::Error;
    std::vector<DatapointId> removed;
    std::size_t original_class = 0;
    std::size_t final_class = 0;
    std::size_t forward_evals = 0;
    std::size_t outer_iters = 0;
    double removal_fraction = 0.0;
    std::string error;  // non-empty iff status == Error
};

AttackRecord to_record(const AttackResult& result);

/// One attack run over a dataset: the configuration that produced it plus the
/// per-sample records, in dataset order.
struct AttackRunFile {
    std::string checkpoint_id;
    std::string dataset_id;
    TerminationSpec spec;
    SalienceConfig salience;
    std::size_t subset_budget = kDefaultSubsetBudget;
    std::size_t skipped_misclassified = 0;
    std::vector<AttackRecord> results;
};

void save_attack_results(const std::string& path, const AttackRunFile& run);
AttackRunFile load_attack_results(const std::string& path);

}  // namespace decoupler
