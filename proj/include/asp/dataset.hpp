// Precomputed image-feature datasets and the synthetic benchmark generator.
//
// Feature binary format (one file per split): magic "ASPF", u32 version=1,
// u32 N, u32 d_img, u8 split-id, then N records of
// (u32 attr-idx, u32 obj-idx, d_img little-endian f32).
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "asp/error.hpp"
#include "asp/io_util.hpp"
#include "asp/rng.hpp"
#include "asp/vocab.hpp"

namespace asp {

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

struct FeatureDataset {
    std::size_t feature_dim = 0;
    std::vector<double> features;  // row-major N x feature_dim
    std::vector<std::uint32_t> attr_labels;
    std::vector<std::uint32_t> obj_labels;
    std::vector<Split> splits;

    std::size_t size() const { return attr_labels.size(); }

    std::span<const double> feature_row(std::size_t i) const {
        return {features.data() + i * feature_dim, feature_dim};
    }

    std::vector<std::size_t> indices_of(Split s) const {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < size(); ++i)
            if (splits[i] == s) idx.push_back(i);
        return idx;
    }

    void append(const FeatureDataset& fragment) {
        if (fragment.size() == 0) return;
        if (feature_dim == 0) feature_dim = fragment.feature_dim;
        if (fragment.feature_dim != feature_dim)
            fail(ErrorCode::format_error, "feature dimension mismatch between fragments");
        features.insert(features.end(), fragment.features.begin(), fragment.features.end());
        attr_labels.insert(attr_labels.end(), fragment.attr_labels.begin(),
                           fragment.attr_labels.end());
        obj_labels.insert(obj_labels.end(), fragment.obj_labels.begin(),
                          fragment.obj_labels.end());
        splits.insert(splits.end(), fragment.splits.begin(), fragment.splits.end());
    }
};

inline constexpr std::uint32_t kFeatureFormatVersion = 1;

inline FeatureDataset load_feature_file(const std::string& path, const VocabSpace& vocab) {
    const std::string blob = io::read_file(path);
    io::Reader r(blob, ErrorCode::format_error);
    if (r.bytes(4) != "ASPF") fail(ErrorCode::format_error, path + ": bad magic, expected ASPF");
    const std::uint32_t version = r.u32();
    if (version != kFeatureFormatVersion)
        fail(ErrorCode::version_mismatch,
             path + ": feature format version " + std::to_string(version));
    const std::uint32_t n = r.u32();
    const std::uint32_t d = r.u32();
    const std::uint8_t split_id = r.u8();
    if (split_id > 2) fail(ErrorCode::format_error, path + ": bad split id");
    if (n > 0 && d == 0) fail(ErrorCode::format_error, path + ": zero feature dimension");

    FeatureDataset ds;
    ds.feature_dim = d;
    ds.features.reserve(static_cast<std::size_t>(n) * d);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint32_t a = r.u32();
        const std::uint32_t o = r.u32();
        if (a >= vocab.attr_count())
            fail(ErrorCode::range_error, path + ": record " + std::to_string(i) +
                                             " attribute label " + std::to_string(a) +
                                             " out of range");
        if (o >= vocab.object_count())
            fail(ErrorCode::range_error, path + ": record " + std::to_string(i) +
                                             " object label " + std::to_string(o) +
                                             " out of range");
        ds.attr_labels.push_back(a);
        ds.obj_labels.push_back(o);
        ds.splits.push_back(static_cast<Split>(split_id));
        for (std::uint32_t j = 0; j < d; ++j)
            ds.features.push_back(static_cast<double>(r.f32()));
    }
    if (!r.at_end())
        fail(ErrorCode::format_error,
             path + ": " + std::to_string(r.remaining()) + " trailing bytes after records");
    // train fragments may only carry seen compositions
    if (static_cast<Split>(split_id) == Split::train)
        for (std::size_t i = 0; i < ds.size(); ++i)
            if (!vocab.is_seen(ds.attr_labels[i], ds.obj_labels[i]))
                fail(ErrorCode::format_error,
                     path + ": train record " + std::to_string(i) +
                         " carries a composition missing from train_pairs.txt");
    return ds;
}

inline void save_feature_file(const std::string& path, const FeatureDataset& ds, Split split) {
    const auto idx = ds.indices_of(split);
    std::string out;
    out += "ASPF";
    io::put_u32(out, kFeatureFormatVersion);
    io::put_u32(out, static_cast<std::uint32_t>(idx.size()));
    io::put_u32(out, static_cast<std::uint32_t>(ds.feature_dim));
    io::put_u8(out, static_cast<std::uint8_t>(split));
    for (std::size_t i : idx) {
        io::put_u32(out, ds.attr_labels[i]);
        io::put_u32(out, ds.obj_labels[i]);
        for (double v : ds.feature_row(i)) io::put_f32(out, static_cast<float>(v));
    }
    io::write_file(path, out);
}

// Synthetic open-world benchmark. Each attribute and object receives a
// random unit anchor in its own coordinate block of the image-feature
// space; a sample is concat(attr anchor, obj anchor) + Gaussian noise, so
// both primitives stay linearly recoverable. A holdout fraction of
// compositions appears only in the test split while every attribute and
// object keeps at least one training composition. Features are quantized
// through f32 so saved files reload bit-identically.
inline std::pair<VocabSpace, FeatureDataset> make_synthetic(
    std::size_t n_attrs, std::size_t m_objs, std::size_t d_img, std::size_t samples_per_comp,
    double holdout_fraction, double noise_sigma, Rng& rng) {
    if (n_attrs == 0 || m_objs == 0)
        fail(ErrorCode::invalid_parameter, "make_synthetic: need at least one attribute and object");
    if (d_img < 2) fail(ErrorCode::invalid_parameter, "make_synthetic: d_img must be >= 2");
    if (samples_per_comp == 0)
        fail(ErrorCode::invalid_parameter, "make_synthetic: samples_per_comp must be >= 1");
    if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0))
        fail(ErrorCode::invalid_parameter, "make_synthetic: holdout_fraction must lie in [0, 1)");

    const std::size_t total = n_attrs * m_objs;
    const std::size_t holdout_count =
        static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(total)));

    std::vector<std::string> attr_names, obj_names;
    for (std::size_t i = 0; i < n_attrs; ++i) attr_names.push_back("attr" + std::to_string(i));
    for (std::size_t j = 0; j < m_objs; ++j) obj_names.push_back("obj" + std::to_string(j));

    const std::size_t d_attr = d_img / 2;
    const std::size_t d_obj = d_img - d_attr;
    auto unit_anchor = [&rng](std::size_t d) {
        std::vector<double> v(d);
        double norm = 0.0;
        do {
            norm = 0.0;
            for (auto& x : v) {
                x = rng.gaussian();
                norm += x * x;
            }
        } while (norm == 0.0);
        norm = std::sqrt(norm);
        for (auto& x : v) x /= norm;
        return v;
    };
    std::vector<std::vector<double>> attr_anchor, obj_anchor;
    for (std::size_t i = 0; i < n_attrs; ++i) attr_anchor.push_back(unit_anchor(d_attr));
    for (std::size_t j = 0; j < m_objs; ++j) obj_anchor.push_back(unit_anchor(d_obj));

    // pick unseen compositions while every attribute and object keeps at
    // least one seen composition
    std::vector<CompPair> comps;
    for (std::uint32_t a = 0; a < n_attrs; ++a)
        for (std::uint32_t o = 0; o < m_objs; ++o) comps.push_back({a, o});
    std::vector<CompPair> shuffled = comps;
    rng.shuffle(shuffled);
    std::vector<std::size_t> attr_seen(n_attrs, m_objs), obj_seen(m_objs, n_attrs);
    std::set<CompPair> unseen;
    for (const auto& [a, o] : shuffled) {
        if (unseen.size() == holdout_count) break;
        if (attr_seen[a] > 1 && obj_seen[o] > 1) {
            unseen.insert({a, o});
            --attr_seen[a];
            --obj_seen[o];
        }
    }
    if (unseen.size() < holdout_count)
        fail(ErrorCode::generation_error,
             "make_synthetic: holdout of " + std::to_string(holdout_count) +
                 " compositions would remove an attribute or object from training");

    std::set<CompPair> seen;
    for (const auto& c : comps)
        if (!unseen.count(c)) seen.insert(c);
    VocabSpace vocab(attr_names, obj_names, seen);

    FeatureDataset ds;
    ds.feature_dim = d_img;
    for (const auto& [a, o] : comps) {
        const bool is_unseen = unseen.count({a, o}) > 0;
        const std::size_t k = samples_per_comp;
        std::size_t n_train = 0, n_val = 0;
        if (!is_unseen) {
            n_train = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(k))));
            n_train = std::min(n_train, k);
            n_val = static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(k)));
            n_val = std::min(n_val, k - n_train);
        }
        for (std::size_t s = 0; s < k; ++s) {
            Split split = Split::test;
            if (!is_unseen) {
                if (s < n_train)
                    split = Split::train;
                else if (s < n_train + n_val)
                    split = Split::val;
            }
            ds.attr_labels.push_back(a);
            ds.obj_labels.push_back(o);
            ds.splits.push_back(split);
            for (std::size_t j = 0; j < d_attr; ++j)
                ds.features.push_back(static_cast<double>(static_cast<float>(
                    attr_anchor[a][j] + noise_sigma * rng.gaussian())));
            for (std::size_t j = 0; j < d_obj; ++j)
                ds.features.push_back(static_cast<double>(static_cast<float>(
                    obj_anchor[o][j] + noise_sigma * rng.gaussian())));
        }
    }
    return {std::move(vocab), std::move(ds)};
}

}  // namespace asp
