#include "decoupler/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "decoupler/errors.hpp"

namespace decoupler {

using json = nlohmann::ordered_json;

namespace {

constexpr int kReportSchemaVersion = 1;

}  // namespace

double attack_success_rate(const std::vector<AttackRecord>& results) {
    if (results.empty()) throw ValidationError("attack_success_rate: empty results");
    std::size_t successes = 0;
    for (const AttackRecord& r : results) {
        if (r.status == RecordStatus::Success) ++successes;
    }
    return static_cast<double>(successes) / static_cast<double>(results.size());
}

PointsChangedStats points_changed_stats(const std::vector<AttackRecord>& results) {
    std::vector<double> fractions;
    for (const AttackRecord& r : results) {
        if (r.status == RecordStatus::Success) fractions.push_back(r.removal_fraction);
    }
    if (fractions.empty()) {
        throw ValidationError("points_changed_stats: no successful attacks");
    }
    std::sort(fractions.begin(), fractions.end());

    PointsChangedStats stats;
    double sum = 0.0;
    for (double f : fractions) sum += f;
    stats.mean = sum / static_cast<double>(fractions.size());
    const std::size_t n = fractions.size();
    stats.median = n % 2 == 1 ? fractions[n / 2]
                              : 0.5 * (fractions[n / 2 - 1] + fractions[n / 2]);

    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && fractions[j] == fractions[i]) ++j;
        stats.cdf.emplace_back(fractions[i], static_cast<double>(j) / static_cast<double>(n));
        i = j;
    }
    return stats;
}

double robustness_psi(const FusionModel& model, const MultimodalSample& s,
                      const std::vector<MultimodalSample>& adversarial_set,
                      const PsiConfig& cfg) {
    if (adversarial_set.empty()) {
        throw ValidationError("robustness_psi: empty adversarial set");
    }
    if (!(cfg.kl_cap_epsilon > 0.0)) {
        throw ValidationError("robustness_psi: kl_cap_epsilon must be positive");
    }
    const DenseVector original = model.classify(model.embed(s));
    double max_kl = 0.0;
    for (const MultimodalSample& adv : adversarial_set) {
        const DenseVector moved = model.classify(model.embed(adv));
        max_kl = std::max(max_kl, kl_divergence(original, moved));
    }
    return 1.0 / std::max(max_kl, cfg.kl_cap_epsilon);
}

void emit_report(const RobustnessReport& report, const std::string& json_path,
                 const std::string& csv_path) {
    json root;
    root["schema_version"] = kReportSchemaVersion;
    root["model_id"] = report.model_id;
    root["dataset_id"] = report.dataset_id;
    root["n_attacked"] = report.n_attacked;
    root["n_success"] = report.n_success;
    root["asr"] = report.asr;
    root["removal_fractions"] = report.removal_fractions;
    json cdf = json::array();
    for (const auto& [fraction, cumulative] : report.cdf) {
        cdf.push_back(json::array({fraction, cumulative}));
    }
    root["cdf"] = std::move(cdf);
    root["psi_values"] = report.psi_values;
    root["psi_mean"] = report.psi_mean;
    root["run_manifest"] = report.run_manifest;

    {
        std::ofstream out(json_path, std::ios::binary);
        if (!out) throw IoError("emit_report: cannot open '" + json_path + "' for writing");
        out << root.dump(2) << '\n';
        if (!out) throw IoError("emit_report: write failed for '" + json_path + "'");
    }
    {
        std::ofstream out(csv_path, std::ios::binary);
        if (!out) throw IoError("emit_report: cannot open '" + csv_path + "' for writing");
        out << "fraction,cumulative\n";
        for (const auto& [fraction, cumulative] : report.cdf) {
            char line[64];
            std::snprintf(line, sizeof(line), "%.6f,%.6f\n", fraction, cumulative);
            out << line;
        }
        if (!out) throw IoError("emit_report: write failed for '" + csv_path + "'");
    }
}

RobustnessReport load_report(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_report: cannot open '" + path + "'");
    json root;
    try {
        in >> root;
    } catch (const json::parse_error& e) {
        throw LoadError("load_report: malformed JSON in '" + path + "': " + e.what());
    }
    try {
        if (root.at("schema_version").get<int>() != kReportSchemaVersion) {
            throw LoadError("load_report: unsupported schema_version in '" + path + "'");
        }
        RobustnessReport report;
        report.model_id = root.at("model_id").get<std::string>();
        report.dataset_id = root.at("dataset_id").get<std::string>();
        report.n_attacked = root.at("n_attacked").get<std::size_t>();
        report.n_success = root.at("n_success").get<std::size_t>();
        report.asr = root.at("asr").get<double>();
        report.removal_fractions = root.at("removal_fractions").get<std::vector<double>>();
        for (const json& row : root.at("cdf")) {
            report.cdf.emplace_back(row.at(0).get<double>(), row.at(1).get<double>());
        }
        report.psi_values = root.at("psi_values").get<std::vector<double>>();
        report.psi_mean = root.at("psi_mean").get<double>();
        report.run_manifest =
            root.at("run_manifest").get<std::map<std::string, std::string>>();
        return report;
    } catch (const json::exception& e) {
        throw LoadError("load_report: invalid report '" + path + "': " + e.what());
    }
}

}  // namespace decoupler
