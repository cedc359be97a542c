#pragma once

#include <array>
#include <string>
#include <vector>

namespace msg {

using Tokens = std::vector<std::string>;

struct Prf {
  double p = 0.0;
  double r = 0.0;
  double f = 0.0;
  bool empty = false;  // candidate or reference had no n-grams
};

struct RougeScore {
  Prf r1, r2, rl;
};

// Clipped n-gram overlap.
Prf rouge_n(const Tokens& cand, const Tokens& ref, int n);
// Longest common subsequence.
Prf rouge_l(const Tokens& cand, const Tokens& ref);
RougeScore rouge(const Tokens& cand, const Tokens& ref);

struct DuplicationReport {
  std::array<double, 4> ratio{};  // n = 1..4, mean over answers with >= n tokens
  std::array<int, 4> answers{};   // how many answers contributed per n
};

// 1 - distinct / total n-grams of one answer; -1 when shorter than n.
double duplication_ratio(const Tokens& answer, int n);
DuplicationReport duplication(const std::vector<Tokens>& answers);

// First min(3, n) sentences.
std::vector<std::string> lead3(const std::vector<std::string>& sentences);

// Smoothed TF-IDF over a set of token lists: idf = ln((1 + N) / (1 + df)) + 1.
class TfIdf {
 public:
  explicit TfIdf(const std::vector<Tokens>& corpus);
  double cosine(const Tokens& a, const Tokens& b) const;
  double idf(const std::string& term) const;

 private:
  std::vector<std::pair<std::string, double>> weights(const Tokens& t) const;
  std::vector<std::pair<std::string, int>> df_;  // sorted by term
  int docs_ = 0;
};

// Greedy MMR: argmax lambda cos(s, q) - (1 - lambda) max_{s' selected} cos(s, s'),
// ties to the lower index, until k sentences (or all of them) are chosen.
// IDF comes from the question and the document sentences.
std::vector<int> mmr_extract(const Tokens& question, const std::vector<Tokens>& sentences, double lambda = 0.7,
                             int k = 3);

struct ExampleScore {
  std::string id;
  RougeScore rouge;
  std::array<double, 4> duplication{};
};

struct SystemReport {
  std::string name;
  RougeScore mean;
  DuplicationReport duplication;
  std::vector<ExampleScore> rows;
};

SystemReport score_system(const std::string& name, const std::vector<std::string>& ids,
                          const std::vector<Tokens>& candidates, const std::vector<Tokens>& references);

// Structured text: one section per system with corpus means, then per-example rows.
std::string format_report(const std::vector<SystemReport>& systems, bool per_example = true);

}  // namespace msg
