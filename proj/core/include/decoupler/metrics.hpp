#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "decoupler/attack.hpp"
#include "decoupler/model.hpp"

namespace decoupler {

struct PsiConfig {
    /// Floor on the max-KL denominator so ψ stays finite when the attack
    /// failed to move the output distribution.
    double kl_cap_epsilon = 1e-9;
};

/// Fraction of results with status Success. Throws ValidationError on an
/// empty list.
double attack_success_rate(const std::vector<AttackRecord>& results);

struct PointsChangedStats {
    double mean = 0.0;
    double median = 0.0;
    /// Empirical CDF sampled at every distinct observed fraction;
    /// non-decreasing in both coordinates, terminal cumulative value 1.0.
    std::vector<std::pair<double, double>> cdf;
};

/// Statistics over the removal fractions of successful attacks only. Throws
/// ValidationError when no result succeeded.
PointsChangedStats points_changed_stats(const std::vector<AttackRecord>& results);

/// Robustness of the model at sample s against a set of adversarial variants:
/// 1 / max(max_KL, kl_cap_epsilon) where the max runs over
/// KL(P(s) ‖ P(adversarial)). Higher means the attack moved the output
/// distribution less.
double robustness_psi(const FusionModel& model, const MultimodalSample& s,
                      const std::vector<MultimodalSample>& adversarial_set,
                      const PsiConfig& cfg = {});

struct RobustnessReport {
    std::string model_id;
    std::string dataset_id;
    std::size_t n_attacked = 0;
    std::size_t n_success = 0;
    double asr = 0.0;
    std::vector<double> removal_fractions;  // successes only, in dataset order
    std::vector<std::pair<double, double>> cdf;
    std::vector<double> psi_values;  // samples with at least one success
    double psi_mean = 0.0;
    /// Seeds, configuration echoes, and similar provenance; values must be
    /// caller-supplied so identical runs emit identical bytes.
    std::map<std::string, std::string> run_manifest;
};

/// Writes the report JSON and the CDF CSV (`fraction,cumulative` header,
/// 6-decimal fixed rows). Byte-identical across runs with identical inputs.
void emit_report(const RobustnessReport& report, const std::string& json_path,
                 const std::string& csv_path);

RobustnessReport load_report(const std::string& path);

}  // namespace decoupler
