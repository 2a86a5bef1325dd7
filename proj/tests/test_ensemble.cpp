#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "mia/ensemble.hpp"

using namespace mia;

namespace {

std::vector<int> iota_ids(int n) {
    std::vector<int> v(n);
    std::iota(v.begin(), v.end(), 100);
    return v;
}

/// Synthetic scored attack samples for the label-only strategy: identity ids
/// with per-identity distance levels plus a small deterministic wobble.
std::vector<AttackSample> scored_samples(const std::vector<int>& ids, int per_id, double base,
                                         double spread, Membership membership,
                                         std::uint64_t seed) {
    std::vector<AttackSample> out;
    Rng rng(seed);
    for (int id : ids) {
        const double level = base + spread * rng.uniform01();
        for (int k = 0; k < per_id; ++k) {
            AttackSample s;
            s.individual_id = id;
            s.membership = membership;
            s.query.record.sample_id = std::to_string(id) + "-" + std::to_string(k);
            s.query.record.prediction.confidences = {0.5, 0.5};
            s.query.distance = level + 0.01 * rng.uniform01();
            out.push_back(std::move(s));
        }
    }
    return out;
}

}  // namespace

TEST_CASE("partition: 60 identities into 6 subsets of 10") {
    const EnsemblePlan plan = partition_identities(iota_ids(60), 6, 4);
    REQUIRE(plan.n_subsets == 6);
    REQUIRE_FALSE(plan.singleton_mode);
    std::map<int, int> sizes;
    for (const auto& [id, sub] : plan.subset_assignment) sizes[sub]++;
    REQUIRE(sizes.size() == 6);
    for (const auto& [sub, n] : sizes) REQUIRE(n == 10);
}

TEST_CASE("partition: 60 identities into 60 singleton subsets") {
    const EnsemblePlan plan = partition_identities(iota_ids(60), 60, 4);
    REQUIRE(plan.singleton_mode);
    std::set<int> subs;
    for (const auto& [id, sub] : plan.subset_assignment) subs.insert(sub);
    REQUIRE(subs.size() == 60);
}

TEST_CASE("partition covers the input set with disjoint subsets") {
    Rng rng(6);
    for (int trial = 0; trial < 25; ++trial) {
        const int n = 3 + static_cast<int>(rng.below(40));
        const int k = 1 + static_cast<int>(rng.below(n));
        const auto ids = iota_ids(n);
        const EnsemblePlan plan = partition_identities(ids, k, rng.next_u64());
        REQUIRE(static_cast<int>(plan.subset_assignment.size()) == n);
        std::map<int, int> sizes;
        for (int id : ids) {
            REQUIRE(plan.subset_assignment.count(id) == 1);
            sizes[plan.subset_assignment.at(id)]++;
        }
        int lo = n, hi = 0;
        for (const auto& [sub, c] : sizes) {
            lo = std::min(lo, c);
            hi = std::max(hi, c);
        }
        REQUIRE(hi - lo <= 1);
    }
    REQUIRE_THROWS_AS(partition_identities(iota_ids(4), 5, 0), ContractError);
    REQUIRE_THROWS_AS(partition_identities(iota_ids(4), 0, 0), ContractError);
}

TEST_CASE("one-subset ensemble equals the plain attack on every input") {
    const auto ids = iota_ids(8);
    const auto nm_ids = iota_ids(8);
    auto members = scored_samples(ids, 5, 0.6, 0.3, Membership::Member, 1);
    auto nonmembers = scored_samples(nm_ids, 5, 0.1, 0.2, Membership::NonMember, 2);
    // distinct non-member identity range
    for (auto& s : nonmembers) s.individual_id += 1000;

    EnsembleTrainOptions opts;
    const EnsemblePlan plan = partition_identities(ids, 1, 3);
    const EnsembleAttack ens =
        train_ensemble(members, nonmembers, plan, AttackStrategy::LabelOnly, opts);
    REQUIRE(ens.size() == 1);

    std::vector<std::pair<double, int>> distances;
    for (const auto& s : members) distances.emplace_back(s.query.distance, 1);
    for (const auto& s : nonmembers) distances.emplace_back(s.query.distance, 0);
    const LabelOnlyAttack plain = calibrate_label_only(distances, BoundarySearchConfig{});

    for (double d = 0.0; d <= 1.0; d += 0.01) {
        AttackQuery q;
        q.distance = d;
        REQUIRE(ensemble_decide(ens, q).member == plain.decide(d));
    }
}

TEST_CASE("singleton mode pairs each member identity with a distinct non-member") {
    const auto ids = iota_ids(6);
    auto members = scored_samples(ids, 4, 0.7, 0.2, Membership::Member, 5);
    auto nonmembers = scored_samples(iota_ids(6), 4, 0.1, 0.1, Membership::NonMember, 6);
    for (auto& s : nonmembers) s.individual_id += 500;

    EnsembleTrainOptions opts;
    const EnsemblePlan plan = partition_identities(ids, 6, 9);
    const EnsembleAttack ens =
        train_ensemble(members, nonmembers, plan, AttackStrategy::LabelOnly, opts);
    REQUIRE(ens.size() == 6);
    REQUIRE(ens.plan.pairing.size() == 6);
    std::set<int> used_members, used_nonmembers;
    for (const auto& [m, n] : ens.plan.pairing) {
        REQUIRE(plan.subset_assignment.count(m) == 1);
        used_members.insert(m);
        used_nonmembers.insert(n);
        REQUIRE(n >= 600);
    }
    REQUIRE(used_members.size() == 6);
    REQUIRE(used_nonmembers.size() == 6);  // drawn without replacement
}

TEST_CASE("rule E: member iff at least one sub-model votes member") {
    EnsembleAttack ens;
    ens.strategy = AttackStrategy::LabelOnly;
    ens.vote_k = 1;
    ens.label_members = {{0.2, {}}, {0.5, {}}, {0.9, {}}};
    ens.plan.n_subsets = 3;

    AttackQuery q;
    q.distance = 0.05;
    auto d = ensemble_decide(ens, q);
    REQUIRE_FALSE(d.member);  // votes [non, non, non]
    REQUIRE(d.votes == std::vector<bool>{false, false, false});

    q.distance = 0.3;
    d = ensemble_decide(ens, q);
    REQUIRE(d.member);  // votes [member, non, non]
    REQUIRE(d.votes == std::vector<bool>{true, false, false});

    q.distance = 0.6;
    REQUIRE(ensemble_decide(ens, q).member);  // [member, member, non]

    ens.vote_k = 2;
    q.distance = 0.3;
    REQUIRE_FALSE(ensemble_decide(ens, q).member);  // one vote is no longer enough
    q.distance = 0.6;
    REQUIRE(ensemble_decide(ens, q).member);
}

TEST_CASE("rule E is monotone: adding a sub-model never revokes membership") {
    Rng rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        EnsembleAttack ens;
        ens.strategy = AttackStrategy::LabelOnly;
        ens.vote_k = 1;
        ens.plan.n_subsets = 4;
        for (int i = 0; i < 4; ++i) ens.label_members.push_back({rng.uniform(0, 1), {}});
        AttackQuery q;
        q.distance = rng.uniform(0, 1);
        EnsembleAttack smaller = ens;
        smaller.label_members.pop_back();
        smaller.plan.n_subsets = 3;
        if (ensemble_decide(smaller, q).member) REQUIRE(ensemble_decide(ens, q).member);
    }
}

TEST_CASE("ensemble training is deterministic and validates its inputs") {
    const auto ids = iota_ids(6);
    auto members = scored_samples(ids, 3, 0.7, 0.2, Membership::Member, 5);
    auto nonmembers = scored_samples(iota_ids(6), 3, 0.1, 0.1, Membership::NonMember, 6);
    for (auto& s : nonmembers) s.individual_id += 500;

    EnsembleTrainOptions opts;
    const EnsemblePlan plan = partition_identities(ids, 3, 10);
    const EnsembleAttack a = train_ensemble(members, nonmembers, plan, AttackStrategy::LabelOnly, opts);
    const EnsembleAttack b = train_ensemble(members, nonmembers, plan, AttackStrategy::LabelOnly, opts);
    REQUIRE(a.label_members.size() == b.label_members.size());
    for (std::size_t i = 0; i < a.label_members.size(); ++i)
        REQUIRE(a.label_members[i].tau_d == b.label_members[i].tau_d);

    // a member identity missing from the plan is a contract violation
    auto stray = members;
    stray[0].individual_id = 9999;
    REQUIRE_THROWS_AS(train_ensemble(stray, nonmembers, plan, AttackStrategy::LabelOnly, opts),
                      ContractError);

    // more subsets than non-member identities leaves a subset empty
    auto few_nonmembers = scored_samples({700, 701}, 3, 0.1, 0.1, Membership::NonMember, 8);
    const EnsemblePlan plan6 = partition_identities(ids, 6, 11);
    REQUIRE_THROWS_AS(
        train_ensemble(members, few_nonmembers, plan6, AttackStrategy::LabelOnly, opts),
        ContractError);

    // vote threshold must be within [1, n_subsets]
    EnsembleTrainOptions bad = opts;
    bad.vote_k = 4;
    REQUIRE_THROWS_AS(train_ensemble(members, nonmembers, plan, AttackStrategy::LabelOnly, bad),
                      ContractError);
}

TEST_CASE("yeom-strategy ensembles calibrate per subset") {
    const auto ids = iota_ids(4);
    std::vector<AttackSample> members, nonmembers;
    Rng rng(31);
    auto add = [&](std::vector<AttackSample>& dst, int id, double top, Membership m) {
        AttackSample s;
        s.individual_id = id;
        s.membership = m;
        s.query.record.sample_id = std::to_string(id) + "#" + std::to_string(dst.size());
        s.query.record.prediction.confidences = {top, 1.0 - top};
        s.query.record.predicted_label = argmax_index(s.query.record.prediction.confidences);
        dst.push_back(std::move(s));
    };
    for (int id : ids)
        for (int k = 0; k < 3; ++k) add(members, id, 0.9 + 0.05 * rng.uniform01(), Membership::Member);
    for (int id : {900, 901, 902, 903})
        for (int k = 0; k < 3; ++k)
            add(nonmembers, id, 0.55 + 0.1 * rng.uniform01(), Membership::NonMember);

    EnsembleTrainOptions opts;
    const EnsemblePlan plan = partition_identities(ids, 2, 13);
    const EnsembleAttack ens = train_ensemble(members, nonmembers, plan, AttackStrategy::Yeom, opts);
    REQUIRE(ens.yeom_members.size() == 2);
    for (const AttackSample& s : members)
        REQUIRE(ensemble_decide(ens, s.query).member);
    for (const AttackSample& s : nonmembers)
        REQUIRE_FALSE(ensemble_decide(ens, s.query).member);
}
