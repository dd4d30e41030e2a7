#include "decoupler/attack.hpp"

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

constexpr int kResultsSchemaVersion = 1;

bool satisfies(const TerminationSpec& spec, std::size_t label, std::size_t cls) {
    return spec.mode == AttackMode::Untargeted ? cls != label : cls == spec.target;
}

void validate_mode(const TerminationSpec& spec, const FusionModel& model,
                   const MultimodalSample& s) {
    if (spec.mode == AttackMode::Targeted) {
        if (spec.target >= model.dims.n_classes) {
            throw ValidationError("targeted attack: target class " + std::to_string(spec.target) +
                                  " >= n_classes " + std::to_string(model.dims.n_classes));
        }
        if (spec.target == s.label) {
            throw ValidationError(
                "targeted attack: target equals the sample's label (already satisfied)");
        }
    }
}

void validate_spec(const TerminationSpec& spec, const FusionModel& model,
                   const MultimodalSample& s) {
    if (spec.maxitr == 0 || spec.maxitr > 10'000) {
        throw ValidationError("attack spec: maxitr must be in [1, 10000]");
    }
    if (spec.eval_budget == 0) throw ValidationError("attack spec: eval_budget must be positive");
    validate_mode(spec, model, s);
}

/// Not-yet-removed datapoints in (modality, index) order.
std::vector<DatapointId> candidate_ids(const MultimodalSample& s) {
    std::vector<DatapointId> out;
    out.reserve(s.datapoint_count() - s.removed.size());
    for (std::size_t i = 0; i < s.patches.size(); ++i) {
        DatapointId d{Modality::ImagePatch, i};
        if (!s.removed.contains(d)) out.push_back(d);
    }
    for (std::size_t j = 0; j < s.tokens.size(); ++j) {
        DatapointId d{Modality::TextToken, j};
        if (!s.removed.contains(d)) out.push_back(d);
    }
    return out;
}

void mask_in_place(MaterializedInput& in, const DatapointId& d) {
    if (d.modality == Modality::ImagePatch) {
        std::fill(in.patches[d.index].begin(), in.patches[d.index].end(), 0.0);
    } else {
        in.tokens[d.index] = kMaskToken;
    }
}

/// Masks a set of datapoints on a working input and restores them afterwards,
/// so subset trials cost no allocation beyond the saved slots.
class ScopedMask {
  public:
    ScopedMask(MaterializedInput& in, const std::vector<DatapointId>& ids) : in_(in) {
        for (const DatapointId& d : ids) push(d);
    }
    ScopedMask(MaterializedInput& in, const DatapointId& d) : in_(in) { push(d); }
    ~ScopedMask() {
        for (auto it = saved_.rbegin(); it != saved_.rend(); ++it) {
            const auto& [d, patch, token] = *it;
            if (d.modality == Modality::ImagePatch) {
                in_.patches[d.index] = patch;
            } else {
                in_.tokens[d.index] = token;
            }
        }
    }
    ScopedMask(const ScopedMask&) = delete;
    ScopedMask& operator=(const ScopedMask&) = delete;

  private:
    void push(const DatapointId& d) {
        if (d.modality == Modality::ImagePatch) {
            saved_.emplace_back(d, in_.patches[d.index], 0);
        } else {
            saved_.emplace_back(d, DenseVector{}, in_.tokens[d.index]);
        }
        mask_in_place(in_, d);
    }

    MaterializedInput& in_;
    std::vector<std::tuple<DatapointId, DenseVector, std::uint32_t>> saved_;
};

}  // namespace

SalientSet salient_set(const FusionModel& model, const MultimodalSample& s,
                       const SalienceConfig& cfg) {
    if (!(cfg.tolerance > 0.0)) {
        throw ValidationError("salient_set: tolerance must be positive");
    }
    const std::vector<DatapointId> candidates = candidate_ids(s);
    SalientSet out;
    if (candidates.empty()) return out;

    const MaterializedInput base = s.materialize();
    if (cfg.transformer_fast_path && model.architecture == Architecture::AttentionFusion) {
        AttentionCache cache = attention_cache(model, base);
        const DenseVector base_z = attention_readout(model, cache);
        for (const DatapointId& d : candidates) {
            const std::size_t pos = d.modality == Modality::ImagePatch
                                        ? 1 + d.index
                                        : 1 + s.patches.size() + d.index;
            const DenseVector saved_h = std::move(cache.h[pos]);
            const DenseVector saved_k = std::move(cache.k[pos]);
            const DenseVector saved_v = std::move(cache.v[pos]);
            cache.h[pos] = attention_position_for_removed(model, d);
            cache.k[pos] = matvec(model.weights.w_k, cache.h[pos]);
            cache.v[pos] = matvec(model.weights.w_v, cache.h[pos]);
            const double magnitude = linf_distance(attention_readout(model, cache), base_z);
            cache.h[pos] = std::move(saved_h);
            cache.k[pos] = std::move(saved_k);
            cache.v[pos] = std::move(saved_v);
            if (magnitude > cfg.tolerance) out.members.push_back({d, magnitude});
        }
    } else {
        const DenseVector base_z = model.embed(base).z;
        MaterializedInput work = base;
        for (const DatapointId& d : candidates) {
            const ScopedMask guard(work, d);
            const double magnitude = linf_distance(model.embed(work).z, base_z);
            if (magnitude > cfg.tolerance) out.members.push_back({d, magnitude});
        }
    }

    std::sort(out.members.begin(), out.members.end(),
              [](const SalientDatapoint& a, const SalientDatapoint& b) {
                  if (a.magnitude != b.magnitude) return a.magnitude > b.magnitude;
                  return a.id < b.id;
              });
    return out;
}

CoupledSubsetStream::CoupledSubsetStream(SalientSet base, std::size_t budget)
    : CoupledSubsetStream(std::move(base), budget, SIZE_MAX) {}

CoupledSubsetStream::CoupledSubsetStream(SalientSet base, std::size_t budget,
                                         std::size_t max_cardinality)
    : base_(std::move(base)),
      budget_(budget),
      max_cardinality_(std::min(max_cardinality, base_.members.size())) {
    if (budget_ == 0) throw ValidationError("coupled_subsets: budget must be at least 1");
}

std::optional<std::vector<DatapointId>> CoupledSubsetStream::next() {
    if (yielded_ >= budget_) return std::nullopt;
    const std::size_t n = base_.members.size();
    while (cardinality_ <= max_cardinality_) {
        if (ranks_.empty()) {
            ranks_.resize(cardinality_);
            std::iota(ranks_.begin(), ranks_.end(), 0);
            break;
        }
        bool advanced = false;
        std::size_t i = cardinality_;
        while (i-- > 0) {
            if (ranks_[i] < n - cardinality_ + i) {
                ++ranks_[i];
                for (std::size_t j = i + 1; j < cardinality_; ++j) ranks_[j] = ranks_[j - 1] + 1;
                advanced = true;
                break;
            }
        }
        if (advanced) break;
        ++cardinality_;
        ranks_.clear();
    }
    if (cardinality_ > max_cardinality_) return std::nullopt;
    ++yielded_;
    std::vector<DatapointId> out;
    out.reserve(cardinality_);
    for (std::size_t r : ranks_) out.push_back(base_.members[r].id);
    return out;
}

CoupledSubsetStream coupled_subsets(SalientSet base, std::size_t budget) {
    return CoupledSubsetStream(std::move(base), budget);
}

std::string attack_status_name(AttackStatus s) {
    switch (s) {
        case AttackStatus::Success: return "success";
        case AttackStatus::Exhausted: return "exhausted";
        case AttackStatus::BudgetExceeded: return "budget_exceeded";
    }
    throw ValidationError("unknown attack status");
}

AttackResult decoupling_attack(const FusionModel& model, const MultimodalSample& s,
                               const TerminationSpec& spec, const SalienceConfig& cfg,
                               std::size_t subset_budget) {
    validate_spec(spec, model, s);
    if (subset_budget == 0) {
        throw ValidationError("decoupling_attack: subset budget must be positive");
    }

    std::size_t evals = 1;
    const std::size_t original_class = model.predict(s);
    if (original_class != s.label) {
        throw PreconditionError("decoupling_attack: model misclassifies sample '" + s.sample_id +
                                "' (predicted " + std::to_string(original_class) + ", label " +
                                std::to_string(s.label) + "); attack only correct samples");
    }

    MultimodalSample current = s;
    std::size_t current_class = original_class;
    AttackStatus status = AttackStatus::Exhausted;
    std::size_t outer = 0;
    bool over_budget = false;

    while (outer < spec.maxitr) {
        ++outer;
        const std::size_t n_candidates = current.datapoint_count() - current.removed.size();
        SalientSet sal = salient_set(model, current, cfg);
        evals += 1 + n_candidates;
        if (evals > spec.eval_budget) {
            over_budget = true;
            break;
        }
        if (sal.members.empty()) break;

        CoupledSubsetStream stream(std::move(sal), subset_budget);
        // Every subset is probed against the iteration-start candidate and
        // reverted unless it terminates the attack, so the stream stays a
        // size-ordered exhaustive scan of the coupled set and the first hit
        // is cardinality-minimal within it.
        MaterializedInput work = current.materialize();
        std::vector<DatapointId> kept;
        bool succeeded = false;
        bool first_subset = true;
        while (auto subset = stream.next()) {
            ++evals;
            if (evals > spec.eval_budget) {
                over_budget = true;
                break;
            }
            std::size_t cls;
            {
                const ScopedMask guard(work, *subset);
                cls = model.predict(work);
            }
            if (satisfies(spec, s.label, cls)) {
                for (const DatapointId& d : *subset) current.removed.insert(d);
                current_class = cls;
                succeeded = true;
                break;
            }
            if (cls == s.label && first_subset) {
                // Greedy progress: the leading (most salient) removal is kept
                // for the next outer iteration; failed probes never
                // accumulate.
                kept = *subset;
            }
            // Any other outcome reverts the tentative removal; this includes
            // a class change that misses a targeted spec.
            first_subset = false;
        }
        if (over_budget) break;
        if (succeeded) {
            status = AttackStatus::Success;
            break;
        }
        if (kept.empty()) break;
        for (const DatapointId& d : kept) current.removed.insert(d);
    }
    if (over_budget) status = AttackStatus::BudgetExceeded;

    if (status == AttackStatus::Success) {
        // Pruning: drop every removal the termination predicate does not need.
        const std::vector<DatapointId> snapshot(current.removed.begin(), current.removed.end());
        for (const DatapointId& d : snapshot) {
            MultimodalSample candidate = current;
            candidate.removed.erase(d);
            ++evals;
            const std::size_t cls = model.predict(candidate);
            if (satisfies(spec, s.label, cls)) {
                current = std::move(candidate);
                current_class = cls;
            }
        }
    } else {
        // A failed attack reports no removals: greedy keeps are search state,
        // not an adversarial example.
        current = s;
        current_class = original_class;
    }

    AttackResult result;
    result.status = status;
    result.removed = current.removed;
    result.original_class = original_class;
    result.final_class = current_class;
    result.forward_evals = evals;
    result.outer_iters = outer;
    result.removal_fraction = removal_fraction(current);
    result.adversarial_sample = std::move(current);
    return result;
}

OracleOutcome brute_force_oracle(const FusionModel& model, const MultimodalSample& s,
                                 const TerminationSpec& spec) {
    validate_mode(spec, model, s);
    const std::vector<DatapointId> universe = candidate_ids(s);
    if (universe.size() > kOracleDatapointCap) {
        throw CapacityError("brute_force_oracle: " + std::to_string(universe.size()) +
                            " datapoints exceeds the exhaustive-search cap of " +
                            std::to_string(kOracleDatapointCap));
    }

    MaterializedInput work = s.materialize();
    OracleOutcome out;
    const std::size_t n = universe.size();
    std::vector<std::size_t> idx;
    std::vector<DatapointId> subset;
    for (std::size_t k = 1; k <= n; ++k) {
        idx.resize(k);
        std::iota(idx.begin(), idx.end(), 0);
        while (true) {
            subset.clear();
            for (std::size_t r : idx) subset.push_back(universe[r]);
            ++out.subsets_tested;
            std::size_t cls;
            {
                const ScopedMask guard(work, subset);
                cls = model.predict(work);
            }
            if (satisfies(spec, s.label, cls)) {
                out.exists = true;
                for (std::size_t r : idx) out.removed.insert(universe[r]);
                out.final_class = cls;
                return out;
            }
            bool advanced = false;
            std::size_t i = k;
            while (i-- > 0) {
                if (idx[i] < n - k + i) {
                    ++idx[i];
                    for (std::size_t j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
                    advanced = true;
                    break;
                }
            }
            if (!advanced) break;
        }
    }
    return out;
}

DenseBaselineResult dense_baseline(const FusionModel& model, const MultimodalSample& s,
                                   double step, std::size_t iters) {
    if (step < 0.0) throw ValidationError("dense_baseline: step must be non-negative");
    MaterializedInput work = s.materialize();
    model.validate_input(work);

    DenseBaselineResult r;
    r.original_class = model.predict(work);
    r.final_class = r.original_class;
    const std::size_t patch_dim = model.dims.patch_dim;
    std::vector<bool> touched(work.patches.size(), false);

    for (std::size_t it = 1; it <= iters; ++it) {
        const LossGradients lg = loss_gradients(model, work, s.label);
        for (std::size_t p = 0; p < work.patches.size(); ++p) {
            for (std::size_t f = 0; f < patch_dim; ++f) {
                // a zero gradient still moves the feature (+step), so every
                // patch datapoint counts as perturbed whenever step > 0
                const double gsign =
                    lg.patch_feature_grad[p * patch_dim + f] < 0.0 ? -1.0 : 1.0;
                const double delta = step * gsign;
                work.patches[p][f] += delta;
                if (delta != 0.0) touched[p] = true;
            }
        }
        r.iterations = it;
        const std::size_t cls = model.predict(work);
        r.final_class = cls;
        if (cls != s.label) {
            r.success = true;
            break;
        }
    }

    std::size_t changed = 0;
    for (std::size_t p = 0; p < touched.size(); ++p) changed += touched[p] ? 1 : 0;
    r.changed_fraction = static_cast<double>(changed) / static_cast<double>(s.datapoint_count());
    return r;
}

std::size_t random_removal_baseline(const FusionModel& model, const MultimodalSample& s,
                                    const TerminationSpec& spec, std::size_t cardinality,
                                    std::size_t trials, std::uint64_t seed) {
    validate_mode(spec, model, s);
    const std::vector<DatapointId> universe = candidate_ids(s);
    if (cardinality == 0 || cardinality > universe.size()) {
        throw ValidationError("random_removal_baseline: cardinality must be in [1, " +
                              std::to_string(universe.size()) + "]");
    }
    MaterializedInput work = s.materialize();
    Rng rng(seed);
    std::vector<std::size_t> idx(universe.size());
    std::vector<DatapointId> subset;
    std::size_t successes = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        std::iota(idx.begin(), idx.end(), 0);
        subset.clear();
        for (std::size_t i = 0; i < cardinality; ++i) {
            std::swap(idx[i], idx[i + rng.next_index(idx.size() - i)]);
            subset.push_back(universe[idx[i]]);
        }
        const ScopedMask guard(work, subset);
        if (satisfies(spec, s.label, model.predict(work))) ++successes;
    }
    return successes;
}

std::string record_status_name(RecordStatus s) {
    switch (s) {
        case RecordStatus::Success: return "success";
        case RecordStatus::Exhausted: return "exhausted";
        case RecordStatus::BudgetExceeded: return "budget_exceeded";
        case RecordStatus::Error: return "error";
    }
    throw ValidationError("unknown record status");
}

RecordStatus record_status_from_name(const std::string& name) {
    if (name == "success") return RecordStatus::Success;
    if (name == "exhausted") return RecordStatus::Exhausted;
    if (name == "budget_exceeded") return RecordStatus::BudgetExceeded;
    if (name == "error") return RecordStatus::Error;
    throw LoadError("unknown attack record status '" + name + "'");
}

RecordStatus to_record_status(AttackStatus s) {
    switch (s) {
        case AttackStatus::Success: return RecordStatus::Success;
        case AttackStatus::Exhausted: return RecordStatus::Exhausted;
        case AttackStatus::BudgetExceeded: return RecordStatus::BudgetExceeded;
    }
    throw ValidationError("unknown attack status");
}

AttackRecord to_record(const AttackResult& result) {
    AttackRecord rec;
    rec.sample_id = result.adversarial_sample.sample_id;
    rec.status = to_record_status(result.status);
    rec.removed.assign(result.removed.begin(), result.removed.end());
    rec.original_class = result.original_class;
    rec.final_class = result.final_class;
    rec.forward_evals = result.forward_evals;
    rec.outer_iters = result.outer_iters;
    rec.removal_fraction = result.removal_fraction;
    return rec;
}

void save_attack_results(const std::string& path, const AttackRunFile& run) {
    json root;
    root["schema_version"] = kResultsSchemaVersion;
    root["checkpoint_id"] = run.checkpoint_id;
    root["dataset_id"] = run.dataset_id;
    json js;
    js["mode"] = run.spec.mode == AttackMode::Untargeted ? "untargeted" : "targeted";
    js["target"] = run.spec.target;
    js["maxitr"] = run.spec.maxitr;
    js["eval_budget"] = run.spec.eval_budget;
    root["spec"] = std::move(js);
    json jsal;
    jsal["tolerance"] = run.salience.tolerance;
    jsal["transformer_fast_path"] = run.salience.transformer_fast_path;
    root["salience"] = std::move(jsal);
    root["subset_budget"] = run.subset_budget;
    root["skipped_misclassified"] = run.skipped_misclassified;

    json arr = json::array();
    for (const AttackRecord& rec : run.results) {
        json jr;
        jr["sample_id"] = rec.sample_id;
        jr["status"] = record_status_name(rec.status);
        json removed = json::array();
        for (const DatapointId& d : rec.removed) {
            removed.push_back({{"modality", modality_name(d.modality)}, {"index", d.index}});
        }
        jr["removed"] = std::move(removed);
        jr["original_class"] = rec.original_class;
        jr["final_class"] = rec.final_class;
        jr["forward_evals"] = rec.forward_evals;
        jr["outer_iters"] = rec.outer_iters;
        jr["removal_fraction"] = rec.removal_fraction;
        if (rec.status == RecordStatus::Error) jr["error"] = rec.error;
        arr.push_back(std::move(jr));
    }
    root["results"] = std::move(arr);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_attack_results: cannot open '" + path + "' for writing");
    out << root.dump(2) << '\n';
    if (!out) throw IoError("save_attack_results: write failed for '" + path + "'");
}

AttackRunFile load_attack_results(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_attack_results: cannot open '" + path + "'");
    json root;
    try {
        in >> root;
    } catch (const json::parse_error& e) {
        throw LoadError("load_attack_results: malformed JSON in '" + path + "': " + e.what());
    }

    try {
        if (root.at("schema_version").get<int>() != kResultsSchemaVersion) {
            throw LoadError("load_attack_results: unsupported schema_version in '" + path + "'");
        }
        AttackRunFile run;
        run.checkpoint_id = root.at("checkpoint_id").get<std::string>();
        run.dataset_id = root.at("dataset_id").get<std::string>();
        const json& js = root.at("spec");
        const std::string mode = js.at("mode").get<std::string>();
        if (mode == "untargeted") {
            run.spec.mode = AttackMode::Untargeted;
        } else if (mode == "targeted") {
            run.spec.mode = AttackMode::Targeted;
        } else {
            throw LoadError("load_attack_results: unknown mode '" + mode + "'");
        }
        run.spec.target = js.at("target").get<std::size_t>();
        run.spec.maxitr = js.at("maxitr").get<std::size_t>();
        run.spec.eval_budget = js.at("eval_budget").get<std::size_t>();
        const json& jsal = root.at("salience");
        run.salience.tolerance = jsal.at("tolerance").get<double>();
        run.salience.transformer_fast_path = jsal.at("transformer_fast_path").get<bool>();
        run.subset_budget = root.at("subset_budget").get<std::size_t>();
        run.skipped_misclassified = root.at("skipped_misclassified").get<std::size_t>();

        for (const json& jr : root.at("results")) {
            AttackRecord rec;
            rec.sample_id = jr.at("sample_id").get<std::string>();
            rec.status = record_status_from_name(jr.at("status").get<std::string>());
            for (const json& jd : jr.at("removed")) {
                rec.removed.push_back(
                    DatapointId{modality_from_name(jd.at("modality").get<std::string>()),
                                jd.at("index").get<std::size_t>()});
            }
            rec.original_class = jr.at("original_class").get<std::size_t>();
            rec.final_class = jr.at("final_class").get<std::size_t>();
            rec.forward_evals = jr.at("forward_evals").get<std::size_t>();
            rec.outer_iters = jr.at("outer_iters").get<std::size_t>();
            rec.removal_fraction = jr.at("removal_fraction").get<double>();
            if (rec.status == RecordStatus::Error) rec.error = jr.at("error").get<std::string>();
            run.results.push_back(std::move(rec));
        }
        return run;
    } catch (const json::exception& e) {
        throw LoadError("load_attack_results: invalid results file '" + path + "': " + e.what());
    }
}

}  // namespace decoupler
