#pragma once

// Text-command frontend: target extraction and the seeded embedding table
// standing in for pretrained word vectors.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mvvin/rng.hpp"
#include "mvvin/tensor.hpp"

namespace mvvin {

struct CommandError : std::runtime_error {
  explicit CommandError(const std::string& m) : std::runtime_error(m) {}
};

inline std::vector<std::string> tokenize_lower(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isalnum(static_cast<unsigned char>(ch)) || ch == '_') {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// Returns the last vocabulary word appearing in the command, case-insensitive.
template <typename VocabContainer>
std::string parse_target(const std::string& command, const VocabContainer& vocabulary) {
  if (command.empty()) throw CommandError("parse_target: empty command");
  const auto tokens = tokenize_lower(command);
  std::string found;
  for (const auto& tok : tokens)
    if (std::find(vocabulary.begin(), vocabulary.end(), tok) != vocabulary.end()) found = tok;
  if (found.empty()) {
    std::ostringstream os;
    os << "parse_target: no target word in \"" << command << "\"; vocabulary:";
    for (const auto& w : vocabulary) os << " " << w;
    throw CommandError(os.str());
  }
  return found;
}

// word -> unit-norm pseudo-random d_t-vector, generated from (seed, word hash)
class EmbeddingTable {
 public:
  EmbeddingTable(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}

  int dim() const { return dim_; }

  // safe for concurrent reads: generated vectors are computed on the fly
  std::vector<double> lookup(const std::string& word) const {
    auto it = loaded_.find(word);
    if (it != loaded_.end()) return it->second;
    if (loaded_only_)
      throw CommandError("EmbeddingTable: unknown word \"" + word + "\"");
    Rng rng(mix_seed(seed_, fnv1a(word)));
    std::vector<double> v(static_cast<size_t>(dim_));
    double norm = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
  }

  TensorPtr embed(const std::string& word) const { return tensor({dim_}, lookup(word)); }

  // plain-text loader: one word per line followed by dim reals
  static EmbeddingTable from_file(const std::string& path, int dim) {
    std::ifstream in(path);
    if (!in) throw CommandError("EmbeddingTable: cannot open " + path);
    EmbeddingTable t(dim, 0);
    t.loaded_only_ = true;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string word;
      ls >> word;
      std::vector<double> v(static_cast<size_t>(dim));
      for (int i = 0; i < dim; ++i)
        if (!(ls >> v[static_cast<size_t>(i)]))
          throw CommandError("EmbeddingTable: " + path + ":" + std::to_string(lineno) +
                             ": expected " + std::to_string(dim) + " values for \"" + word +
                             "\"");
      t.loaded_[word] = std::move(v);
    }
    return t;
  }

 private:
  int dim_;
  std::uint64_t seed_;
  bool loaded_only_ = false;
  std::map<std::string, std::vector<double>> loaded_;
};

}  // namespace mvvin
