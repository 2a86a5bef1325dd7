#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mia/attacks.hpp"

namespace mia {

enum class AttackStrategy { Yeom, Salem, LabelOnly };

inline const char* strategy_name(AttackStrategy s) {
    switch (s) {
        case AttackStrategy::Yeom: return "yeom";
        case AttackStrategy::Salem: return "salem";
        case AttackStrategy::LabelOnly: return "label-only";
    }
    return "?";
}

inline AttackStrategy strategy_from_name(const std::string& n) {
    if (n == "yeom") return AttackStrategy::Yeom;
    if (n == "salem") return AttackStrategy::Salem;
    if (n == "label-only" || n == "labelonly") return AttackStrategy::LabelOnly;
    throw ContractError("unknown attack method '" + n + "' (expected yeom|salem|label-only)");
}

/// Assignment of attack-side member identities to disjoint sub-model subsets.
struct EnsemblePlan {
    int n_subsets = 1;
    std::map<int, int> subset_assignment;         // member identity -> subset index
    std::vector<std::pair<int, int>> pairing;     // singleton mode: (member id, non-member id)
    std::uint64_t seed = 0;
    bool singleton_mode = false;
};

/// Seeded shuffle then round-robin: subset sizes differ by at most one.
/// n_subsets equal to the identity count gives singleton (per-identity) mode.
inline EnsemblePlan partition_identities(std::vector<int> attack_ids, int n_subsets,
                                         std::uint64_t seed) {
    std::sort(attack_ids.begin(), attack_ids.end());
    attack_ids.erase(std::unique(attack_ids.begin(), attack_ids.end()), attack_ids.end());
    require(!attack_ids.empty(), "partition_identities: empty identity set");
    require(n_subsets >= 1, "partition_identities: n_subsets must be positive");
    require(n_subsets <= static_cast<int>(attack_ids.size()),
            "partition_identities: n_subsets (" + std::to_string(n_subsets) +
                ") exceeds identity count (" + std::to_string(attack_ids.size()) + ")");
    EnsemblePlan plan;
    plan.n_subsets = n_subsets;
    plan.seed = seed;
    plan.singleton_mode = n_subsets == static_cast<int>(attack_ids.size());
    Rng rng(derive_seed(seed, "partition"));
    rng.shuffle(attack_ids);
    for (std::size_t i = 0; i < attack_ids.size(); ++i)
        plan.subset_assignment[attack_ids[i]] = static_cast<int>(i % n_subsets);
    return plan;
}

/// Everything a sub-model may need to judge one sample. The distance field
/// is only meaningful for the label-only strategy; it is computed once per
/// sample and shared by all sub-models.
struct AttackQuery {
    PredictionRecord record;
    double distance = std::numeric_limits<double>::quiet_NaN();
};

/// A calibration sample: identity, membership truth and the query payload.
struct AttackSample {
    int individual_id = 0;
    Membership membership = Membership::Unknown;
    AttackQuery query;
};

struct EnsembleAttack {
    AttackStrategy strategy = AttackStrategy::Yeom;
    EnsemblePlan plan;
    int vote_k = 1;  // member votes required; 1 reproduces the OR rule
    std::vector<MetricAttack> yeom_members;
    std::vector<SalemAttack> salem_members;
    std::vector<LabelOnlyAttack> label_members;

    std::size_t size() const {
        switch (strategy) {
            case AttackStrategy::Yeom: return yeom_members.size();
            case AttackStrategy::Salem: return salem_members.size();
            case AttackStrategy::LabelOnly: return label_members.size();
        }
        return 0;
    }

    bool sub_decide(std::size_t i, const AttackQuery& q) const {
        switch (strategy) {
            case AttackStrategy::Yeom: return yeom_members[i].decide(q.record);
            case AttackStrategy::Salem: return salem_decide(salem_members[i], q.record.prediction);
            case AttackStrategy::LabelOnly:
                require(!std::isnan(q.distance), "ensemble: label-only query without a distance");
                return label_members[i].decide(q.distance);
        }
        return false;
    }
};

struct EnsembleTrainOptions {
    TrainConfig salem_config;        // per-sub-model seed is derived from this one
    BoundarySearchConfig boundary;   // recorded in label-only sub-artifacts
    int vote_k = 1;
};

namespace detail {

inline PredictionRecord record_of(const AttackSample& s) {
    PredictionRecord r = s.query.record;
    r.membership = s.membership;
    return r;
}

}  // namespace detail

/// Trains one sub-model per subset, each on records of its subset's member
/// identities plus its share of non-member identities (its paired identity in
/// singleton mode). Calibration is per sub-model on that subset's split.
inline EnsembleAttack train_ensemble(const std::vector<AttackSample>& members,
                                     const std::vector<AttackSample>& nonmembers,
                                     EnsemblePlan plan, AttackStrategy strategy,
                                     const EnsembleTrainOptions& opts) {
    require(!members.empty() && !nonmembers.empty(), "train_ensemble: empty attack sets");
    for (const AttackSample& s : members)
        require(plan.subset_assignment.count(s.individual_id) > 0,
                "train_ensemble: member identity " + std::to_string(s.individual_id) +
                    " not covered by the plan");

    std::set<int> nonmember_id_set;
    for (const AttackSample& s : nonmembers) nonmember_id_set.insert(s.individual_id);
    std::vector<int> nonmember_ids(nonmember_id_set.begin(), nonmember_id_set.end());

    // Non-member side: a paired identity per sub-model in singleton mode,
    // the subset's round-robin share otherwise.
    std::vector<std::vector<int>> nonmember_share(plan.n_subsets);
    if (plan.singleton_mode) {
        require(static_cast<int>(nonmember_ids.size()) >= plan.n_subsets,
                "train_ensemble: singleton mode needs at least as many non-member identities "
                "as sub-models");
        std::vector<int> pool = nonmember_ids;
        Rng rng(derive_seed(plan.seed, "pairing"));
        rng.shuffle(pool);
        // subsets are indexed by the shuffled member order; recover the member
        // identity per subset for the pairing record
        std::vector<int> member_of_subset(plan.n_subsets, -1);
        for (const auto& [id, sub] : plan.subset_assignment) member_of_subset[sub] = id;
        plan.pairing.clear();
        for (int k = 0; k < plan.n_subsets; ++k) {
            nonmember_share[k] = {pool[k]};
            plan.pairing.emplace_back(member_of_subset[k], pool[k]);
        }
    } else {
        std::vector<int> pool = nonmember_ids;
        Rng rng(derive_seed(plan.seed, "nonmember-shares"));
        rng.shuffle(pool);
        for (std::size_t i = 0; i < pool.size(); ++i)
            nonmember_share[i % plan.n_subsets].push_back(pool[i]);
    }

    EnsembleAttack ens;
    ens.strategy = strategy;
    ens.vote_k = opts.vote_k;
    require(ens.vote_k >= 1 && ens.vote_k <= plan.n_subsets,
            "train_ensemble: vote threshold k must be in [1, n_subsets]");

    for (int k = 0; k < plan.n_subsets; ++k) {
        std::vector<const AttackSample*> sub_members, sub_nonmembers;
        for (const AttackSample& s : members)
            if (plan.subset_assignment.at(s.individual_id) == k) sub_members.push_back(&s);
        for (const AttackSample& s : nonmembers)
            if (std::find(nonmember_share[k].begin(), nonmember_share[k].end(),
                          s.individual_id) != nonmember_share[k].end())
                sub_nonmembers.push_back(&s);
        require(!sub_members.empty() && !sub_nonmembers.empty(),
                "train_ensemble: subset " + std::to_string(k) + " is empty after restriction");

        switch (strategy) {
            case AttackStrategy::Yeom: {
                std::vector<PredictionRecord> records;
                for (const AttackSample* s : sub_members) records.push_back(detail::record_of(*s));
                for (const AttackSample* s : sub_nonmembers)
                    records.push_back(detail::record_of(*s));
                ens.yeom_members.push_back(train_yeom(records));
                break;
            }
            case AttackStrategy::Salem: {
                // train_salem requires balance; trim the larger side
                // deterministically (samples are in dataset order).
                std::size_t n = std::min(sub_members.size(), sub_nonmembers.size());
                std::vector<PredictionRecord> records;
                for (std::size_t i = 0; i < n; ++i) records.push_back(detail::record_of(*sub_members[i]));
                for (std::size_t i = 0; i < n; ++i)
                    records.push_back(detail::record_of(*sub_nonmembers[i]));
                TrainConfig cfg = opts.salem_config;
                cfg.seed = derive_seed(opts.salem_config.seed, "ensemble-sub", k);
                ens.salem_members.push_back(train_salem(records, cfg));
                break;
            }
            case AttackStrategy::LabelOnly: {
                std::vector<std::pair<double, int>> distances;
                for (const AttackSample* s : sub_members) {
                    require(!std::isnan(s->query.distance),
                            "train_ensemble: label-only sample without a distance");
                    distances.emplace_back(s->query.distance, 1);
                }
                for (const AttackSample* s : sub_nonmembers) {
                    require(!std::isnan(s->query.distance),
                            "train_ensemble: label-only sample without a distance");
                    distances.emplace_back(s->query.distance, 0);
                }
                ens.label_members.push_back(calibrate_label_only(distances, opts.boundary));
                break;
            }
        }
    }
    ens.plan = std::move(plan);
    return ens;
}

struct EnsembleDecision {
    bool member = false;
    std::vector<bool> votes;
};

/// Queries every sub-model; member iff at least vote_k sub-models vote
/// member (k = 1 is the rule "at least one").
inline EnsembleDecision ensemble_decide(const EnsembleAttack& attack, const AttackQuery& query) {
    require(attack.size() > 0, "ensemble_decide: empty ensemble");
    EnsembleDecision d;
    d.votes.reserve(attack.size());
    int member_votes = 0;
    for (std::size_t i = 0; i < attack.size(); ++i) {
        const bool v = attack.sub_decide(i, query);
        d.votes.push_back(v);
        if (v) ++member_votes;
    }
    d.member = member_votes >= attack.vote_k;
    return d;
}

// ---------------------------------------------------------------------------
// Manifest serialization
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const EnsemblePlan& plan) {
    nlohmann::json assignment = nlohmann::json::object();
    for (const auto& [id, sub] : plan.subset_assignment)
        assignment[std::to_string(id)] = sub;
    nlohmann::json pairing = nlohmann::json::array();
    for (const auto& [m, n] : plan.pairing) pairing.push_back({{"member", m}, {"nonmember", n}});
    return {{"n_subsets", plan.n_subsets},
            {"seed", plan.seed},
            {"singleton_mode", plan.singleton_mode},
            {"subset_assignment", assignment},
            {"pairing", pairing}};
}

inline nlohmann::json sub_model_to_json(const EnsembleAttack& ens, std::size_t i) {
    switch (ens.strategy) {
        case AttackStrategy::Yeom: return to_json(ens.yeom_members[i]);
        case AttackStrategy::Salem: return to_json(ens.salem_members[i]);
        case AttackStrategy::LabelOnly: return to_json(ens.label_members[i]);
    }
    return {};
}

}  // namespace mia
