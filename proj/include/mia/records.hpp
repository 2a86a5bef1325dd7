#pragma once

#include <json.hpp>

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "mia/model.hpp"
#include "mia/splits.hpp"

namespace mia {

enum class Membership { NonMember = 0, Member = 1, Unknown = 2 };

/// One target-model output: the confidence vector plus both labels. For a
/// sample whose identity is not among the model's classes, true_label is -1
/// (open-set samples have no class index).
struct PredictionRecord {
    std::string sample_id;
    PredictionVector prediction;
    int true_label = -1;
    int predicted_label = 0;
    Membership membership = Membership::Unknown;
};

inline PredictionRecord make_record(const TrainedClassifier& model, const Sample& s,
                                    Membership membership) {
    PredictionRecord r;
    r.sample_id = s.sample_id;
    r.prediction = predict_confidences(model, s.features);
    r.true_label = detail::class_index_of(model, s.individual_id);
    r.predicted_label = argmax_index(r.prediction.confidences);
    r.membership = membership;
    return r;
}

/// Queries the target with balanced member/non-member datasets and labels
/// the resulting prediction vectors 1/0.
inline std::vector<PredictionRecord> build_attack_training_set(const TrainedClassifier& target,
                                                               const Dataset& members,
                                                               const Dataset& nonmembers) {
    require(!members.empty() && !nonmembers.empty(),
            "build_attack_training_set: member and non-member sets must be non-empty");
    require(members.size() == nonmembers.size(),
            "build_attack_training_set: member/non-member sets must be balanced (" +
                std::to_string(members.size()) + " vs " + std::to_string(nonmembers.size()) + ")");
    require(members.feature_dim() == static_cast<std::size_t>(target.spec.input_dim()) &&
                nonmembers.feature_dim() == static_cast<std::size_t>(target.spec.input_dim()),
            "build_attack_training_set: feature dimension mismatch");
    std::vector<PredictionRecord> out;
    out.reserve(members.size() + nonmembers.size());
    for (const Sample& s : members) out.push_back(make_record(target, s, Membership::Member));
    for (const Sample& s : nonmembers) out.push_back(make_record(target, s, Membership::NonMember));
    return out;
}

// ---------------------------------------------------------------------------
// JSON Lines: {"sample_id", "true_label", "predicted_label",
//              "confidences": [...], "membership": 0|1|null}
// ---------------------------------------------------------------------------

inline void export_prediction_records(const std::vector<PredictionRecord>& records,
                                      const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("export_prediction_records: cannot open '" + path + "'");
    for (const PredictionRecord& r : records) {
        nlohmann::json j;
        j["sample_id"] = r.sample_id;
        j["true_label"] = r.true_label;
        j["predicted_label"] = r.predicted_label;
        j["confidences"] = r.prediction.confidences;
        if (r.membership == Membership::Unknown)
            j["membership"] = nullptr;
        else
            j["membership"] = static_cast<int>(r.membership);
        f << j.dump() << "\n";
    }
}

/// Parses and validates a records file. Rows with confidences off by more
/// than 1e-4 from unit sum are rejected (never silently renormalized), as are
/// rows whose predicted_label disagrees with the argmax.
inline std::vector<PredictionRecord> import_prediction_records(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("import_prediction_records: cannot open '" + path + "'");
    std::vector<PredictionRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string where = "import_prediction_records: line " + std::to_string(lineno);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(where + ": bad JSON: " + e.what());
        }
        PredictionRecord r;
        try {
            r.sample_id = j.at("sample_id").get<std::string>();
            r.true_label = j.at("true_label").get<int>();
            r.predicted_label = j.at("predicted_label").get<int>();
            r.prediction.confidences = j.at("confidences").get<std::vector<double>>();
            const auto& mem = j.at("membership");
            r.membership = mem.is_null() ? Membership::Unknown
                                         : (mem.get<int>() == 1 ? Membership::Member
                                                                : Membership::NonMember);
            if (!mem.is_null() && mem.get<int>() != 0 && mem.get<int>() != 1)
                throw FormatError(where + ": membership must be 0, 1 or null");
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(where + ": missing or malformed field: " + e.what());
        }
        try {
            validate_prediction_vector(r.prediction, 1e-4);
        } catch (const ContractError& e) {
            throw FormatError(where + ": " + e.what());
        }
        if (r.predicted_label != argmax_index(r.prediction.confidences))
            throw FormatError(where + ": predicted_label is not the argmax of confidences");
        if (r.predicted_label < 0 ||
            r.predicted_label >= static_cast<int>(r.prediction.n_classes()))
            throw FormatError(where + ": predicted_label out of range");
        if (r.true_label < -1 || r.true_label >= static_cast<int>(r.prediction.n_classes()))
            throw FormatError(where + ": true_label out of range");
        if (!out.empty() && out.back().prediction.n_classes() != r.prediction.n_classes())
            throw FormatError(where + ": inconsistent class count");
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace mia
