// Word embedding ingestion.
//
// File format: optional first line "<count> <dim>", then one record per
// line: token followed by dim floats, whitespace-separated, UTF-8. Phrase
// tokens use underscores ("patent_leather").
//
// Name resolution, in order:
//   1. exact token match on the name with spaces replaced by underscores;
//   2. mean of per-word token vectors; words missing from the file
//      contribute a zero vector and emit a warning.
// A name whose words are all missing is unresolvable and raises a coverage
// error listing every such name.
#pragma once

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "asp/error.hpp"
#include "asp/io_util.hpp"
#include "asp/tensor.hpp"
#include "asp/vocab.hpp"

namespace asp {

struct EmbeddingTable {
    std::size_t dim = 0;
    std::unordered_map<std::string, std::vector<double>> vectors;  // vocab name -> vector

    const std::vector<double>& vector_of(const std::string& name) const {
        auto it = vectors.find(name);
        if (it == vectors.end())
            fail(ErrorCode::coverage_error, "no embedding for name: " + name);
        return it->second;
    }
};

namespace detail {

inline std::string underscored(const std::string& name) {
    std::string s = name;
    for (char& c : s)
        if (c == ' ') c = '_';
    return s;
}

inline std::vector<std::string> split_words(const std::string& name) {
    std::vector<std::string> words;
    std::istringstream ss(name);
    std::string w;
    while (ss >> w) words.push_back(w);
    return words;
}

}  // namespace detail

inline EmbeddingTable parse_embedding_file(const std::string& path, const VocabSpace& vocab) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io_error, "cannot open embedding file " + path + " (--embeddings)");

    std::unordered_map<std::string, std::vector<double>> raw;
    std::size_t dim = 0;
    std::string line;
    std::size_t lineno = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string token;
        ss >> token;
        std::vector<double> vals;
        std::string field;
        bool bad = false;
        while (ss >> field) {
            try {
                std::size_t used = 0;
                vals.push_back(std::stod(field, &used));
                if (used != field.size()) bad = true;
            } catch (const std::exception&) {
                bad = true;
            }
            if (bad) break;
        }
        if (first) {
            first = false;
            // "<count> <dim>" header: two non-negative integral fields
            if (vals.size() == 1 && !bad) {
                bool token_numeric = !token.empty();
                for (char c : token) token_numeric = token_numeric && c >= '0' && c <= '9';
                const double d = vals[0];
                if (token_numeric && d >= 0 && d == static_cast<double>(static_cast<long>(d)))
                    continue;
            }
        }
        if (bad || vals.empty())
            fail(ErrorCode::parse_error,
                 path + ":" + std::to_string(lineno) + ": malformed embedding line");
        if (dim == 0) dim = vals.size();
        if (vals.size() != dim)
            fail(ErrorCode::format_error, path + ":" + std::to_string(lineno) +
                                              ": expected " + std::to_string(dim) +
                                              " values, got " + std::to_string(vals.size()));
        if (!raw.emplace(token, vals).second) {
            std::cerr << "warning: duplicate token '" << token << "' in " << path
                      << "; last occurrence wins\n";
            raw[token] = vals;
        }
    }
    if (dim == 0) fail(ErrorCode::format_error, path + ": no embedding records");

    EmbeddingTable table;
    table.dim = dim;
    std::vector<std::string> unresolved;
    auto resolve = [&](const std::string& name) {
        if (table.vectors.count(name)) return;
        auto exact = raw.find(detail::underscored(name));
        if (exact != raw.end()) {
            table.vectors[name] = exact->second;
            return;
        }
        const auto words = detail::split_words(name);
        std::vector<double> acc(dim, 0.0);
        std::size_t found = 0;
        for (const auto& w : words) {
            auto it = raw.find(w);
            if (it == raw.end()) {
                std::cerr << "warning: token '" << w << "' of name '" << name
                          << "' missing from " << path << "; using zero vector\n";
                continue;
            }
            ++found;
            for (std::size_t i = 0; i < dim; ++i) acc[i] += it->second[i];
        }
        if (found == 0) {
            unresolved.push_back(name);
            return;
        }
        for (double& v : acc) v /= static_cast<double>(words.size());
        table.vectors[name] = std::move(acc);
    };
    for (const auto& a : vocab.attributes()) resolve(a);
    for (const auto& o : vocab.objects()) resolve(o);
    if (!unresolved.empty()) {
        std::string msg = path + ": unresolvable names:";
        for (const auto& n : unresolved) msg += " '" + n + "'";
        fail(ErrorCode::coverage_error, msg);
    }
    return table;
}

// Writes a resolved table back out in the same text format; names are
// underscored so that re-parsing hits the exact-match path.
inline void save_embedding_table(const std::string& path, const EmbeddingTable& table,
                                 const VocabSpace& vocab) {
    std::ofstream out(path);
    if (!out) fail(ErrorCode::io_error, "cannot write " + path);
    std::vector<std::string> names = vocab.attributes();
    for (const auto& o : vocab.objects())
        if (std::find(names.begin(), names.end(), o) == names.end()) names.push_back(o);
    out << names.size() << " " << table.dim << "\n";
    for (const auto& name : names) {
        out << detail::underscored(name);
        for (double v : table.vector_of(name)) out << " " << io::format_double(v);
        out << "\n";
    }
}

// Dual-embedding policy: concatenate per-name vectors (dim d1 + d2).
inline EmbeddingTable concat_tables(const EmbeddingTable& a, const EmbeddingTable& b) {
    EmbeddingTable out;
    out.dim = a.dim + b.dim;
    for (const auto& [name, va] : a.vectors) {
        const auto& vb = b.vector_of(name);
        std::vector<double> v;
        v.reserve(out.dim);
        v.insert(v.end(), va.begin(), va.end());
        v.insert(v.end(), vb.begin(), vb.end());
        out.vectors[name] = std::move(v);
    }
    return out;
}

inline EmbeddingTable parse_embedding_files(const std::vector<std::string>& paths,
                                            const VocabSpace& vocab) {
    if (paths.empty()) fail(ErrorCode::config_error, "no embedding file given (--embeddings)");
    EmbeddingTable table = parse_embedding_file(paths[0], vocab);
    for (std::size_t i = 1; i < paths.size(); ++i)
        table = concat_tables(table, parse_embedding_file(paths[i], vocab));
    return table;
}

inline Tensor token_matrix(const std::vector<std::string>& names, const EmbeddingTable& table) {
    Tensor t(Shape{names.size(), table.dim});
    for (std::size_t i = 0; i < names.size(); ++i) {
        const auto& v = table.vector_of(names[i]);
        std::copy(v.begin(), v.end(), t.values().begin() + static_cast<std::ptrdiff_t>(i * table.dim));
    }
    return t;
}

}  // namespace asp
