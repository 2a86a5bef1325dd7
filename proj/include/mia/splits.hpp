#pragma once

#include <json.hpp>

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mia/dataset.hpp"
#include "mia/rng.hpp"

namespace mia {

/// The three-way experiment partition. Identities are split into disjoint
/// groups ID1/ID2/ID3; ID1's pictures are further split into train/val/test
/// portions. The attack set pairs val pictures of ID1 (members) with ID2
/// (non-members); the evaluation set pairs test pictures of ID1 with ID3.
struct ExperimentSplits {
    Dataset target_train;      // ID1, train portion
    Dataset target_val;        // ID1, val portion
    Dataset target_test;       // ID1, test portion
    Dataset attack_member;     // == target_val
    Dataset attack_nonmember;  // ID2
    Dataset eval_member;       // == target_test
    Dataset eval_nonmember;    // ID3
    std::vector<int> id1, id2, id3;
    int samples_per_id_per_portion = 0;
    std::uint64_t seed = 0;
};

/// Splits a population per the three-way protocol: identities shuffled by
/// seed and dealt into ID1/ID2/ID3 (remainder to ID3), then each identity's
/// pictures shuffled by a per-identity sub-seed and sliced into portions of
/// samples_per_id_per_portion each.
inline ExperimentSplits make_splits(const Dataset& dataset, int samples_per_id_per_portion,
                                    std::uint64_t seed) {
    require(samples_per_id_per_portion > 0, "make_splits: samples_per_id_per_portion must be positive");
    const int P = samples_per_id_per_portion;

    std::vector<int> ids = dataset.identities();
    require(ids.size() >= 3, "make_splits: need at least 3 identities");
    for (int id : ids) {
        const std::size_t have = dataset.indices_of(id).size();
        require(have >= static_cast<std::size_t>(3 * P),
                "make_splits: identity " + std::to_string(id) + " has " + std::to_string(have) +
                    " samples, needs at least " + std::to_string(3 * P) + " (augment first)");
    }

    Rng id_rng(derive_seed(seed, "split-identities"));
    id_rng.shuffle(ids);
    const std::size_t n3 = ids.size() / 3;

    ExperimentSplits sp;
    sp.samples_per_id_per_portion = P;
    sp.seed = seed;
    sp.id1.assign(ids.begin(), ids.begin() + n3);
    sp.id2.assign(ids.begin() + n3, ids.begin() + 2 * n3);
    sp.id3.assign(ids.begin() + 2 * n3, ids.end());  // remainder goes to ID3
    std::sort(sp.id1.begin(), sp.id1.end());
    std::sort(sp.id2.begin(), sp.id2.end());
    std::sort(sp.id3.begin(), sp.id3.end());

    auto shuffled_indices = [&](int id) {
        std::vector<std::size_t> idx = dataset.indices_of(id);
        Rng pic_rng(derive_seed(seed, "split-pictures", static_cast<std::uint64_t>(id)));
        pic_rng.shuffle(idx);
        return idx;
    };
    auto slice = [&](const std::vector<int>& group, int from, int to) {
        std::vector<Sample> out;
        out.reserve(group.size() * static_cast<std::size_t>(to - from));
        for (int id : group) {
            auto idx = shuffled_indices(id);
            for (int k = from; k < to; ++k) out.push_back(dataset[idx[k]]);
        }
        return Dataset(std::move(out));
    };

    sp.target_train = slice(sp.id1, 0, P);
    sp.target_val = slice(sp.id1, P, 2 * P);
    sp.target_test = slice(sp.id1, 2 * P, 3 * P);
    sp.attack_member = sp.target_val;
    sp.attack_nonmember = slice(sp.id2, 0, P);
    sp.eval_member = sp.target_test;
    sp.eval_nonmember = slice(sp.id3, 0, P);
    return sp;
}

// ---------------------------------------------------------------------------
// Manifest (JSON): six sample_id arrays plus the seed and parameters used.
// ---------------------------------------------------------------------------

namespace detail {
inline nlohmann::json ids_of(const Dataset& ds) {
    nlohmann::json arr = nlohmann::json::array();
    for (const Sample& s : ds) arr.push_back(s.sample_id);
    return arr;
}
}  // namespace detail

inline nlohmann::json splits_manifest(const ExperimentSplits& sp) {
    nlohmann::json j;
    j["seed"] = sp.seed;
    j["samples_per_id_per_portion"] = sp.samples_per_id_per_portion;
    j["target_train"] = detail::ids_of(sp.target_train);
    j["target_val"] = detail::ids_of(sp.target_val);
    j["target_test"] = detail::ids_of(sp.target_test);
    j["attack_nonmember"] = detail::ids_of(sp.attack_nonmember);
    j["eval_member"] = detail::ids_of(sp.eval_member);
    j["attack_member"] = detail::ids_of(sp.attack_member);
    j["eval_nonmember"] = detail::ids_of(sp.eval_nonmember);
    j["id1"] = sp.id1;
    j["id2"] = sp.id2;
    j["id3"] = sp.id3;
    return j;
}

inline void save_splits(const ExperimentSplits& sp, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("save_splits: cannot open '" + path + "'");
    f << splits_manifest(sp).dump(2) << "\n";
}

/// Rebuilds the split datasets from a manifest against the full dataset.
inline ExperimentSplits materialize_splits(const Dataset& dataset, const nlohmann::json& manifest) {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < dataset.size(); ++i) index[dataset[i].sample_id] = i;
    auto pick = [&](const char* key) {
        if (!manifest.contains(key))
            throw FormatError(std::string("splits manifest: missing '") + key + "'");
        std::vector<Sample> out;
        for (const auto& sid : manifest.at(key)) {
            auto it = index.find(sid.get<std::string>());
            if (it == index.end())
                throw FormatError("splits manifest: sample_id '" + sid.get<std::string>() +
                                  "' not found in dataset");
            out.push_back(dataset[it->second]);
        }
        return Dataset(std::move(out));
    };
    ExperimentSplits sp;
    sp.seed = manifest.value("seed", 0ULL);
    sp.samples_per_id_per_portion = manifest.value("samples_per_id_per_portion", 0);
    sp.target_train = pick("target_train");
    sp.target_val = pick("target_val");
    sp.target_test = pick("target_test");
    sp.attack_member = pick("attack_member");
    sp.attack_nonmember = pick("attack_nonmember");
    sp.eval_member = pick("eval_member");
    sp.eval_nonmember = pick("eval_nonmember");
    sp.id1 = manifest.value("id1", std::vector<int>{});
    sp.id2 = manifest.value("id2", std::vector<int>{});
    sp.id3 = manifest.value("id3", std::vector<int>{});
    return sp;
}

inline ExperimentSplits load_splits(const Dataset& dataset, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("load_splits: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("load_splits: bad JSON in '" + path + "': " + e.what());
    }
    return materialize_splits(dataset, j);
}

}  // namespace mia
