// decoupler: measure the robustness of small multimodal fusion classifiers
// against datapoint-removal (decoupling) attacks.
//
// Pipeline-of-files design: every command reads and writes JSON artifacts so
// each intermediate becomes a regression fixture. Exit codes: 0 success,
// 2 usage/validation, 3 training failure, 4 verification failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "decoupler/attack.hpp"
#include "decoupler/errors.hpp"
#include "decoupler/metrics.hpp"
#include "decoupler/model.hpp"
#include "decoupler/rng.hpp"
#include "decoupler/sample.hpp"

namespace {

using namespace decoupler;

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6f", x);
    return buf;
}

std::string fmt17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

TaskKind task_from_flag(const std::string& flag) {
    if (flag == "and") return TaskKind::AndCoupling;
    if (flag == "xor") return TaskKind::XorCoupling;
    return TaskKind::SingleModality;
}

Architecture arch_from_flag(const std::string& flag) {
    if (flag == "product") return Architecture::ProductFusion;
    if (flag == "sum") return Architecture::SumFusion;
    return Architecture::AttentionFusion;
}

void require_dims_match(const FusionModel& model, const DatasetManifest& manifest) {
    const bool ok = model.dims.patch_dim == manifest.patch_dim &&
                    model.dims.n_patches == manifest.n_patches &&
                    model.dims.n_tokens == manifest.n_tokens &&
                    model.dims.vocab_size == manifest.vocab_size &&
                    model.dims.n_classes == manifest.n_classes;
    if (!ok) {
        throw ValidationError("checkpoint dims do not match the dataset manifest");
    }
}

MultimodalSample apply_removals(const MultimodalSample& original,
                                const std::vector<DatapointId>& removed) {
    MultimodalSample out = original;
    for (const DatapointId& d : removed) out = remove_datapoint(out, d);
    return out;
}

double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double sum = 0.0;
    for (double x : xs) sum += x;
    return sum / static_cast<double>(xs.size());
}

// --- gen-data ---

struct GenDataOpts {
    std::string task = "and";
    std::size_t n = 0;
    std::uint64_t seed = 0;
    std::size_t n_patches = 9;
    std::size_t patch_dim = 4;
    std::size_t n_tokens = 6;
    std::size_t vocab_size = 12;
    std::size_t n_classes = 2;
    std::string out;
};

int cmd_gen_data(const GenDataOpts& opts) {
    DatasetManifest manifest;
    manifest.task_kind = task_from_flag(opts.task);
    manifest.n_samples = opts.n;
    manifest.n_patches = opts.n_patches;
    manifest.patch_dim = opts.patch_dim;
    manifest.n_tokens = opts.n_tokens;
    manifest.vocab_size = opts.vocab_size;
    manifest.n_classes = opts.n_classes;
    manifest.seed = opts.seed;

    const auto samples = generate_dataset(manifest);
    save_samples(opts.out, manifest, samples);

    std::size_t positives = 0;
    for (const MultimodalSample& s : samples) positives += s.label == 1 ? 1 : 0;
    std::cout << "samples=" << samples.size() << "\n"
              << "class_balance=" << fmt(static_cast<double>(positives) / samples.size())
              << "\n"
              << "out=" << opts.out << "\n";
    return 0;
}

// --- train ---

struct TrainOpts {
    std::string data;
    std::string arch = "product";
    double lr = 0.1;
    std::size_t epochs = 1000;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    std::size_t embed_dim = 16;
    std::string out;
};

int cmd_train(const TrainOpts& opts) {
    const SampleFile file = load_samples(opts.data);
    const ModelDims dims = dims_from_manifest(file.manifest, opts.embed_dim);
    const TrainConfig cfg{opts.lr, opts.epochs, opts.batch_size, opts.seed};
    const FusionModel init = FusionModel::init_random(arch_from_flag(opts.arch), dims, opts.seed);
    const TrainResult result = train(init, file.samples, cfg);
    save_checkpoint(opts.out, result.model, cfg, result.final_train_accuracy);
    std::cout << "final_train_accuracy=" << fmt(result.final_train_accuracy) << "\n"
              << "final_loss=" << fmt(result.loss_trace.back()) << "\n"
              << "out=" << opts.out << "\n";
    return 0;
}

// --- attack ---

struct AttackOpts {
    std::string checkpoint;
    std::string data;
    std::string mode = "untargeted";
    std::size_t target = 0;
    std::size_t maxitr = 500;
    std::size_t eval_budget = 1'000'000;
    std::size_t budget = kDefaultSubsetBudget;
    double tolerance = 1e-9;
    bool fast_path = false;
    std::string out;
};

int cmd_attack(const AttackOpts& opts) {
    const Checkpoint ckpt = load_checkpoint(opts.checkpoint);
    const SampleFile file = load_samples(opts.data);
    require_dims_match(ckpt.model, file.manifest);

    AttackRunFile run;
    run.checkpoint_id = opts.checkpoint;
    run.dataset_id = opts.data;
    run.spec.mode = opts.mode == "targeted" ? AttackMode::Targeted : AttackMode::Untargeted;
    run.spec.target = opts.target;
    run.spec.maxitr = opts.maxitr;
    run.spec.eval_budget = opts.eval_budget;
    run.salience.tolerance = opts.tolerance;
    run.salience.transformer_fast_path = opts.fast_path;
    run.subset_budget = opts.budget;

    // configuration errors are fatal before any sample is attacked
    if (run.spec.mode == AttackMode::Targeted &&
        run.spec.target >= ckpt.model.dims.n_classes) {
        throw ValidationError("targeted attack: target class " + std::to_string(run.spec.target) +
                              " >= n_classes " + std::to_string(ckpt.model.dims.n_classes));
    }
    if (run.spec.maxitr == 0 || run.spec.maxitr > 10'000) {
        throw ValidationError("attack spec: maxitr must be in [1, 10000]");
    }
    if (run.spec.eval_budget == 0 || run.subset_budget == 0) {
        throw ValidationError("attack spec: budgets must be positive");
    }
    if (!(run.salience.tolerance > 0.0)) {
        throw ValidationError("attack spec: salience tolerance must be positive");
    }

    std::vector<double> success_fractions;
    std::size_t errors = 0;
    for (const MultimodalSample& s : file.samples) {
        if (ckpt.model.predict(s) != s.label) {
            ++run.skipped_misclassified;
            continue;
        }
        try {
            const AttackResult result =
                decoupling_attack(ckpt.model, s, run.spec, run.salience, run.subset_budget);
            if (result.status == AttackStatus::Success) {
                success_fractions.push_back(result.removal_fraction);
            }
            run.results.push_back(to_record(result));
        } catch (const Error& e) {
            AttackRecord rec;
            rec.sample_id = s.sample_id;
            rec.status = RecordStatus::Error;
            rec.error = e.what();
            run.results.push_back(std::move(rec));
            ++errors;
        }
    }
    save_attack_results(opts.out, run);

    const double asr = run.results.empty() ? 0.0 : attack_success_rate(run.results);
    std::cout << "attacked=" << run.results.size() << "\n"
              << "skipped_misclassified=" << run.skipped_misclassified << "\n"
              << "errors=" << errors << "\n"
              << "n_success=" << success_fractions.size() << "\n"
              << "asr=" << fmt(asr) << "\n"
              << "mean_removal_fraction=" << fmt(mean_of(success_fractions)) << "\n"
              << "out=" << opts.out << "\n";
    return 0;
}

// --- verify ---

struct VerifyOpts {
    std::string checkpoint;
    std::string data;
    std::string results;
};

int cmd_verify(const VerifyOpts& opts) {
    const Checkpoint ckpt = load_checkpoint(opts.checkpoint);
    const SampleFile file = load_samples(opts.data);
    require_dims_match(ckpt.model, file.manifest);
    const AttackRunFile run = load_attack_results(opts.results);

    std::map<std::string, const MultimodalSample*> by_id;
    for (const MultimodalSample& s : file.samples) by_id[s.sample_id] = &s;

    std::size_t checked_successes = 0;
    std::size_t certified_absent = 0;
    std::size_t errored = 0;
    std::size_t violations = 0;
    auto violation = [&](const std::string& sample_id, const std::string& kind,
                         const std::string& detail) {
        ++violations;
        std::cout << "violation sample=" << sample_id << " kind=" << kind << " detail=" << detail
                  << "\n";
    };

    for (const AttackRecord& rec : run.results) {
        if (rec.status == RecordStatus::Error) {
            ++errored;
            continue;
        }
        const auto it = by_id.find(rec.sample_id);
        if (it == by_id.end()) {
            throw ValidationError("verify: results reference unknown sample '" + rec.sample_id +
                                  "'");
        }
        const MultimodalSample& original = *it->second;
        if (original.datapoint_count() > kOracleDatapointCap) {
            throw CapacityError("verify: sample '" + rec.sample_id + "' has " +
                                std::to_string(original.datapoint_count()) +
                                " datapoints, above the oracle cap of " +
                                std::to_string(kOracleDatapointCap));
        }

        if (rec.status == RecordStatus::Success) {
            ++checked_successes;
            MultimodalSample adversarial;
            try {
                adversarial = apply_removals(original, rec.removed);
            } catch (const Error& e) {
                violation(rec.sample_id, "invalid_removed_set", e.what());
                continue;
            }
            const std::size_t cls = ckpt.model.predict(adversarial);
            const bool sound = run.spec.mode == AttackMode::Untargeted
                                   ? cls != original.label
                                   : cls == run.spec.target;
            if (!sound) {
                violation(rec.sample_id, "unsound",
                          "re-verified prediction " + std::to_string(cls) +
                              " does not satisfy the termination spec");
                continue;
            }
            const OracleOutcome oracle = brute_force_oracle(ckpt.model, original, run.spec);
            if (!oracle.exists) {
                violation(rec.sample_id, "oracle_disagrees",
                          "oracle certifies no adversarial subset yet the attack succeeded");
            } else if (oracle.removed.size() != rec.removed.size()) {
                violation(rec.sample_id, "not_minimal",
                          "attack removed " + std::to_string(rec.removed.size()) +
                              " datapoints, oracle minimum is " +
                              std::to_string(oracle.removed.size()));
            }
        } else {
            const OracleOutcome oracle = brute_force_oracle(ckpt.model, original, run.spec);
            if (oracle.exists) {
                violation(rec.sample_id, "missed_subset",
                          "oracle found an adversarial subset of cardinality " +
                              std::to_string(oracle.removed.size()) +
                              " but the attack reported " + record_status_name(rec.status));
            } else {
                ++certified_absent;
            }
        }
    }

    std::cout << "verified_successes=" << checked_successes << "\n"
              << "certified_absent=" << certified_absent << "\n"
              << "errored_records=" << errored << "\n"
              << "violations=" << violations << "\n";
    return violations == 0 ? 0 : 4;
}

// --- adv-train ---

struct AdvTrainOpts {
    std::string checkpoint;
    std::string data;
    std::string results;
    double holdout = 0.25;
    double lr = 0.1;
    std::size_t epochs = 1000;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    std::string out;
};

double attack_asr_on(const FusionModel& model, const std::vector<const MultimodalSample*>& pool,
                     std::size_t* attacked_out) {
    const TerminationSpec spec;
    std::size_t attacked = 0;
    std::size_t successes = 0;
    for (const MultimodalSample* s : pool) {
        if (model.predict(*s) != s->label) continue;
        ++attacked;
        const AttackResult r = decoupling_attack(model, *s, spec);
        if (r.status == AttackStatus::Success) ++successes;
    }
    if (attacked_out != nullptr) *attacked_out = attacked;
    return attacked == 0 ? 0.0 : static_cast<double>(successes) / static_cast<double>(attacked);
}

int cmd_adv_train(const AdvTrainOpts& opts) {
    const Checkpoint ckpt = load_checkpoint(opts.checkpoint);
    const SampleFile file = load_samples(opts.data);
    require_dims_match(ckpt.model, file.manifest);
    const AttackRunFile run = load_attack_results(opts.results);
    if (opts.holdout < 0.0 || opts.holdout >= 1.0) {
        throw ValidationError("adv-train: --holdout must be in [0, 1)");
    }

    std::map<std::string, const MultimodalSample*> by_id;
    for (const MultimodalSample& s : file.samples) by_id[s.sample_id] = &s;

    // deterministic split: seeded shuffle, holdout drawn from the tail
    std::vector<std::size_t> order(file.samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(opts.seed);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[rng.next_index(i)]);
    }
    const std::size_t holdout_n =
        static_cast<std::size_t>(opts.holdout * static_cast<double>(order.size()));
    std::vector<MultimodalSample> train_part;
    std::vector<const MultimodalSample*> holdout_part;
    std::map<std::string, bool> in_train;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const MultimodalSample& s = file.samples[order[i]];
        if (i < order.size() - holdout_n) {
            train_part.push_back(s);
            in_train[s.sample_id] = true;
        } else {
            holdout_part.push_back(&s);
        }
    }

    // adversarial examples from successful attacks on training-side samples,
    // labeled with their original labels
    std::vector<MultimodalSample> adversarial;
    for (const AttackRecord& rec : run.results) {
        if (rec.status != RecordStatus::Success) continue;
        const auto it = by_id.find(rec.sample_id);
        if (it == by_id.end()) {
            throw ValidationError("adv-train: results reference unknown sample '" +
                                  rec.sample_id + "'");
        }
        if (!in_train.contains(rec.sample_id)) continue;  // never leak holdout samples
        MultimodalSample adv = apply_removals(*it->second, rec.removed);
        adv.sample_id += "_adv";
        adversarial.push_back(std::move(adv));
    }
    if (adversarial.empty()) {
        throw ValidationError("adv-train: results contain no successful adversarial samples "
                              "on the training split");
    }

    std::vector<MultimodalSample> augmented = train_part;
    augmented.insert(augmented.end(), adversarial.begin(), adversarial.end());

    const double pre_asr = attack_asr_on(ckpt.model, holdout_part, nullptr);

    const TrainConfig cfg{opts.lr, opts.epochs, opts.batch_size, opts.seed};
    const FusionModel init =
        FusionModel::init_random(ckpt.model.architecture, ckpt.model.dims, opts.seed);
    const TrainResult result = train(init, augmented, cfg);
    save_checkpoint(opts.out, result.model, cfg, result.final_train_accuracy);

    std::size_t adv_correct = 0;
    for (const MultimodalSample& adv : adversarial) {
        if (result.model.predict(adv) == adv.label) ++adv_correct;
    }
    const double adv_accuracy =
        static_cast<double>(adv_correct) / static_cast<double>(adversarial.size());

    std::size_t fresh_attacked = 0;
    const double fresh_asr = attack_asr_on(result.model, holdout_part, &fresh_attacked);

    std::cout << "train_samples=" << train_part.size() << "\n"
              << "holdout_samples=" << holdout_part.size() << "\n"
              << "adv_included=" << adversarial.size() << "\n"
              << "retrained_accuracy=" << fmt(result.final_train_accuracy) << "\n"
              << "adv_example_accuracy=" << fmt(adv_accuracy) << "\n"
              << "pre_retrain_holdout_asr=" << fmt(pre_asr) << "\n"
              << "fresh_attack_asr=" << fmt(fresh_asr) << "\n"
              << "fresh_attacked=" << fresh_attacked << "\n"
              << "out=" << opts.out << "\n";
    return 0;
}

// --- report ---

struct ReportOpts {
    std::string results;
    std::string checkpoint;
    std::string data;
    std::string out_prefix;
    double kl_cap = 1e-9;
    std::string model_id;
    std::string dataset_id;
    std::string compare;
    std::string compare_checkpoint;
};

RobustnessReport build_report(const AttackRunFile& run, const Checkpoint& ckpt,
                              const SampleFile& file, const PsiConfig& psi_cfg,
                              const std::string& model_id, const std::string& dataset_id) {
    require_dims_match(ckpt.model, file.manifest);
    std::map<std::string, const MultimodalSample*> by_id;
    for (const MultimodalSample& s : file.samples) by_id[s.sample_id] = &s;

    RobustnessReport report;
    report.model_id = model_id;
    report.dataset_id = dataset_id;
    report.n_attacked = run.results.size();
    for (const AttackRecord& rec : run.results) {
        if (rec.status != RecordStatus::Success) continue;
        ++report.n_success;
        report.removal_fractions.push_back(rec.removal_fraction);
        const auto it = by_id.find(rec.sample_id);
        if (it == by_id.end()) {
            throw ValidationError("report: results reference unknown sample '" + rec.sample_id +
                                  "'");
        }
        const MultimodalSample adv = apply_removals(*it->second, rec.removed);
        report.psi_values.push_back(robustness_psi(ckpt.model, *it->second, {adv}, psi_cfg));
    }
    report.asr = run.results.empty() ? 0.0 : attack_success_rate(run.results);
    if (report.n_success > 0) {
        report.cdf = points_changed_stats(run.results).cdf;
    }
    report.psi_mean = mean_of(report.psi_values);
    return report;
}

int cmd_report(const ReportOpts& opts) {
    const AttackRunFile run = load_attack_results(opts.results);
    const Checkpoint ckpt = load_checkpoint(opts.checkpoint);
    const SampleFile file = load_samples(opts.data);
    const PsiConfig psi_cfg{opts.kl_cap};
    const std::string model_id = opts.model_id.empty() ? opts.checkpoint : opts.model_id;
    const std::string dataset_id = opts.dataset_id.empty() ? opts.data : opts.dataset_id;

    RobustnessReport report = build_report(run, ckpt, file, psi_cfg, model_id, dataset_id);
    report.run_manifest["checkpoint"] = opts.checkpoint;
    report.run_manifest["data"] = opts.data;
    report.run_manifest["results"] = opts.results;
    report.run_manifest["dataset_seed"] = std::to_string(file.manifest.seed);
    report.run_manifest["kl_cap_epsilon"] = fmt17(opts.kl_cap);
    report.run_manifest["attack_mode"] =
        run.spec.mode == AttackMode::Untargeted ? "untargeted" : "targeted";
    report.run_manifest["attack_maxitr"] = std::to_string(run.spec.maxitr);
    report.run_manifest["attack_eval_budget"] = std::to_string(run.spec.eval_budget);
    report.run_manifest["attack_subset_budget"] = std::to_string(run.subset_budget);
    report.run_manifest["salience_tolerance"] = fmt17(run.salience.tolerance);

    const std::string json_path = opts.out_prefix + ".report.json";
    const std::string csv_path = opts.out_prefix + ".cdf.csv";
    emit_report(report, json_path, csv_path);

    std::cout << "n_attacked=" << report.n_attacked << "\n"
              << "n_success=" << report.n_success << "\n"
              << "asr=" << fmt(report.asr) << "\n"
              << "mean_removal_fraction=" << fmt(mean_of(report.removal_fractions)) << "\n"
              << "psi_mean=" << fmt(report.psi_mean) << "\n"
              << "report_json=" << json_path << "\n"
              << "cdf_csv=" << csv_path << "\n";

    if (!opts.compare.empty()) {
        if (opts.compare_checkpoint.empty()) {
            throw ValidationError("report: --compare requires --compare-checkpoint");
        }
        const AttackRunFile other_run = load_attack_results(opts.compare);
        const Checkpoint other_ckpt = load_checkpoint(opts.compare_checkpoint);
        const RobustnessReport other = build_report(other_run, other_ckpt, file, psi_cfg,
                                                    opts.compare_checkpoint, dataset_id);
        std::cout << "psi_mean_a=" << fmt(report.psi_mean) << "\n"
                  << "psi_mean_b=" << fmt(other.psi_mean) << "\n";
        if (report.psi_mean > other.psi_mean) {
            std::cout << "more_robust=a\n";
        } else if (other.psi_mean > report.psi_mean) {
            std::cout << "more_robust=b\n";
        } else {
            std::cout << "more_robust=tie\n";
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"decoupling-attack robustness toolkit for toy multimodal fusion models"};
    app.require_subcommand(1);

    GenDataOpts gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic coupled dataset");
    gen_cmd->add_option("--task", gen.task, "label rule: and, xor, or single")
        ->check(CLI::IsMember({"and", "xor", "single"}));
    gen_cmd->add_option("--n", gen.n, "number of samples")->required();
    gen_cmd->add_option("--seed", gen.seed, "generator seed");
    gen_cmd->add_option("--n-patches", gen.n_patches, "image patches per sample");
    gen_cmd->add_option("--patch-dim", gen.patch_dim, "features per patch");
    gen_cmd->add_option("--n-tokens", gen.n_tokens, "tokens per sample");
    gen_cmd->add_option("--vocab-size", gen.vocab_size, "vocabulary size");
    gen_cmd->add_option("--n-classes", gen.n_classes, "number of classes");
    gen_cmd->add_option("--out", gen.out, "output sample file")->required();

    TrainOpts tr;
    auto* train_cmd = app.add_subcommand("train", "train a fusion model on a sample file");
    train_cmd->add_option("--data", tr.data, "sample file")->required();
    train_cmd->add_option("--arch", tr.arch, "fusion architecture")
        ->required()
        ->check(CLI::IsMember({"product", "sum", "attention"}));
    train_cmd->add_option("--lr", tr.lr, "learning rate");
    train_cmd->add_option("--epochs", tr.epochs, "training epochs");
    train_cmd->add_option("--batch-size", tr.batch_size, "mini-batch size");
    train_cmd->add_option("--seed", tr.seed, "init and shuffle seed");
    train_cmd->add_option("--embed-dim", tr.embed_dim, "fusion embedding dimension");
    train_cmd->add_option("--out", tr.out, "output checkpoint file")->required();

    AttackOpts at;
    auto* attack_cmd = app.add_subcommand("attack", "run the decoupling attack over a dataset");
    attack_cmd->add_option("--checkpoint", at.checkpoint, "model checkpoint")->required();
    attack_cmd->add_option("--data", at.data, "sample file")->required();
    attack_cmd->add_option("--mode", at.mode, "untargeted or targeted")
        ->check(CLI::IsMember({"untargeted", "targeted"}));
    attack_cmd->add_option("--target", at.target, "target class for targeted mode");
    attack_cmd->add_option("--maxitr", at.maxitr, "outer iteration cap");
    attack_cmd->add_option("--eval-budget", at.eval_budget, "model forward cap");
    attack_cmd->add_option("--budget", at.budget, "subsets tested per outer iteration");
    attack_cmd->add_option("--tolerance", at.tolerance, "salience L-inf threshold");
    attack_cmd->add_flag("--fast-path", at.fast_path,
                         "cached key/value salience scan on attention models");
    attack_cmd->add_option("--out", at.out, "output results file")->required();

    VerifyOpts ve;
    auto* verify_cmd =
        app.add_subcommand("verify", "check attack results against the exhaustive oracle");
    verify_cmd->add_option("--checkpoint", ve.checkpoint, "model checkpoint")->required();
    verify_cmd->add_option("--data", ve.data, "sample file")->required();
    verify_cmd->add_option("--results", ve.results, "attack results file")->required();

    AdvTrainOpts ad;
    auto* adv_cmd = app.add_subcommand(
        "adv-train", "retrain from scratch on data augmented with adversarial samples");
    adv_cmd->add_option("--checkpoint", ad.checkpoint, "source checkpoint (architecture/dims)")
        ->required();
    adv_cmd->add_option("--data", ad.data, "sample file")->required();
    adv_cmd->add_option("--results", ad.results, "attack results file")->required();
    adv_cmd->add_option("--holdout", ad.holdout, "fraction of samples held out for re-attack");
    adv_cmd->add_option("--lr", ad.lr, "learning rate");
    adv_cmd->add_option("--epochs", ad.epochs, "training epochs");
    adv_cmd->add_option("--batch-size", ad.batch_size, "mini-batch size");
    adv_cmd->add_option("--seed", ad.seed, "split, init, and shuffle seed");
    adv_cmd->add_option("--out", ad.out, "output checkpoint file")->required();

    ReportOpts re;
    auto* report_cmd =
        app.add_subcommand("report", "aggregate attack results into a robustness report");
    report_cmd->add_option("--results", re.results, "attack results file")->required();
    report_cmd->add_option("--checkpoint", re.checkpoint, "model checkpoint")->required();
    report_cmd->add_option("--data", re.data, "sample file")->required();
    report_cmd->add_option("--out-prefix", re.out_prefix, "output path prefix")->required();
    report_cmd->add_option("--kl-cap", re.kl_cap, "floor on the max-KL denominator");
    report_cmd->add_option("--model-id", re.model_id, "model identifier in the report");
    report_cmd->add_option("--dataset-id", re.dataset_id, "dataset identifier in the report");
    report_cmd->add_option("--compare", re.compare, "second results file to compare against");
    report_cmd->add_option("--compare-checkpoint", re.compare_checkpoint,
                           "checkpoint that produced the second results file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen_cmd->parsed()) return cmd_gen_data(gen);
        if (train_cmd->parsed()) return cmd_train(tr);
        if (attack_cmd->parsed()) return cmd_attack(at);
        if (verify_cmd->parsed()) return cmd_verify(ve);
        if (adv_cmd->parsed()) return cmd_adv_train(ad);
        if (report_cmd->parsed()) return cmd_report(re);
    } catch (const TrainingError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
