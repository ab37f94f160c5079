// Attribute/object vocabulary and the open-world composition space A x O.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "asp/error.hpp"

namespace asp {

using CompPair = std::pair<std::uint32_t, std::uint32_t>;  // (attr index, object index)

class VocabSpace {
public:
    VocabSpace() = default;

    VocabSpace(std::vector<std::string> attributes, std::vector<std::string> objects,
               std::set<CompPair> seen_compositions)
        : attributes_(std::move(attributes)),
          objects_(std::move(objects)),
          seen_(std::move(seen_compositions)) {
        index_names(attributes_, attr_index_, "attribute");
        index_names(objects_, object_index_, "object");
        for (const auto& [a, o] : seen_)
            if (a >= attributes_.size() || o >= objects_.size())
                fail(ErrorCode::vocabulary_error, "seen composition index out of range");
    }

    const std::vector<std::string>& attributes() const { return attributes_; }
    const std::vector<std::string>& objects() const { return objects_; }
    const std::set<CompPair>& seen_compositions() const { return seen_; }

    std::size_t attr_count() const { return attributes_.size(); }
    std::size_t object_count() const { return objects_.size(); }
    std::size_t composition_count() const { return attributes_.size() * objects_.size(); }

    bool is_seen(std::uint32_t attr, std::uint32_t obj) const {
        return seen_.count({attr, obj}) > 0;
    }

    std::size_t composition_index(std::uint32_t attr, std::uint32_t obj) const {
        return static_cast<std::size_t>(attr) * objects_.size() + obj;
    }

    std::uint32_t attr_index(const std::string& name) const {
        auto it = attr_index_.find(name);
        if (it == attr_index_.end())
            fail(ErrorCode::vocabulary_error, "unknown attribute name: " + name);
        return it->second;
    }

    std::uint32_t object_index(const std::string& name) const {
        auto it = object_index_.find(name);
        if (it == object_index_.end())
            fail(ErrorCode::vocabulary_error, "unknown object name: " + name);
        return it->second;
    }

private:
    static void index_names(const std::vector<std::string>& names,
                            std::unordered_map<std::string, std::uint32_t>& index,
                            const char* kind) {
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (names[i].empty())
                fail(ErrorCode::vocabulary_error, std::string("empty ") + kind + " name");
            if (!index.emplace(names[i], static_cast<std::uint32_t>(i)).second)
                fail(ErrorCode::vocabulary_error,
                     std::string("duplicate ") + kind + " name: " + names[i]);
        }
    }

    std::vector<std::string> attributes_;
    std::vector<std::string> objects_;
    std::set<CompPair> seen_;
    std::unordered_map<std::string, std::uint32_t> attr_index_;
    std::unordered_map<std::string, std::uint32_t> object_index_;
};

// Row-major enumeration of A x O; composition (a, o) sits at index a*|O|+o.
inline std::vector<CompPair> enumerate_compositions(const VocabSpace& vocab) {
    std::vector<CompPair> out;
    out.reserve(vocab.composition_count());
    for (std::uint32_t a = 0; a < vocab.attr_count(); ++a)
        for (std::uint32_t o = 0; o < vocab.object_count(); ++o) out.push_back({a, o});
    return out;
}

namespace detail {

inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io_error, "cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

inline std::vector<CompPair> read_pairs(const std::string& path, const VocabSpace& vocab) {
    std::vector<CompPair> pairs;
    std::size_t lineno = 0;
    for (const auto& line : read_lines(path)) {
        ++lineno;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            fail(ErrorCode::parse_error,
                 path + ":" + std::to_string(lineno) + ": expected attr<TAB>obj");
        pairs.push_back({vocab.attr_index(line.substr(0, tab)),
                         vocab.object_index(line.substr(tab + 1))});
    }
    return pairs;
}

}  // namespace detail

// Plain-text vocabulary/split metadata, one directory per dataset:
// attributes.txt, objects.txt (one name per line), and
// train/val/test_pairs.txt (lines "attr<TAB>obj"). The seen composition set
// is the content of train_pairs.txt.
inline VocabSpace load_vocab_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    auto attrs = detail::read_lines((fs::path(dir) / "attributes.txt").string());
    auto objs = detail::read_lines((fs::path(dir) / "objects.txt").string());
    VocabSpace names_only(attrs, objs, {});
    auto pairs = detail::read_pairs((fs::path(dir) / "train_pairs.txt").string(), names_only);
    return VocabSpace(std::move(attrs), std::move(objs),
                      std::set<CompPair>(pairs.begin(), pairs.end()));
}

inline void save_vocab_dir(const std::string& dir, const VocabSpace& vocab,
                           const std::vector<CompPair>& val_pairs,
                           const std::vector<CompPair>& test_pairs) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    auto write_list = [&](const char* name, const std::vector<std::string>& items) {
        std::ofstream out(fs::path(dir) / name);
        if (!out) fail(ErrorCode::io_error, std::string("cannot write ") + name);
        for (const auto& s : items) out << s << "\n";
    };
    write_list("attributes.txt", vocab.attributes());
    write_list("objects.txt", vocab.objects());
    auto write_pairs = [&](const char* name, const std::vector<CompPair>& pairs) {
        std::ofstream out(fs::path(dir) / name);
        if (!out) fail(ErrorCode::io_error, std::string("cannot write ") + name);
        for (const auto& [a, o] : pairs)
            out << vocab.attributes()[a] << "\t" << vocab.objects()[o] << "\n";
    };
    std::vector<CompPair> train_pairs(vocab.seen_compositions().begin(),
                                      vocab.seen_compositions().end());
    write_pairs("train_pairs.txt", train_pairs);
    write_pairs("val_pairs.txt", val_pairs);
    write_pairs("test_pairs.txt", test_pairs);
}

}  // namespace asp
