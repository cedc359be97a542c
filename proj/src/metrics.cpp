#include "msg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "msg/error.hpp"

namespace msg {

namespace {

std::map<Tokens, int> ngram_counts(const Tokens& t, int n) {
  std::map<Tokens, int> out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= t.size(); ++i) {
    ++out[Tokens(t.begin() + static_cast<std::ptrdiff_t>(i), t.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  }
  return out;
}

Prf make_prf(double overlap, double cand_total, double ref_total) {
  Prf s;
  if (cand_total == 0 || ref_total == 0) {
    s.empty = true;
    return s;
  }
  s.p = overlap / cand_total;
  s.r = overlap / ref_total;
  s.f = s.p + s.r > 0 ? 2 * s.p * s.r / (s.p + s.r) : 0.0;
  return s;
}

}  // namespace

Prf rouge_n(const Tokens& cand, const Tokens& ref, int n) {
  if (n < 1) throw ConfigError("rouge_n: n must be at least 1");
  const auto c = ngram_counts(cand, n);
  const auto r = ngram_counts(ref, n);
  double overlap = 0;
  for (const auto& [gram, count] : c) {
    const auto it = r.find(gram);
    if (it != r.end()) overlap += std::min(count, it->second);
  }
  const auto total = [n](const Tokens& t) { return t.size() >= static_cast<std::size_t>(n) ? double(t.size() - n + 1) : 0.0; };
  return make_prf(overlap, total(cand), total(ref));
}

Prf rouge_l(const Tokens& cand, const Tokens& ref) {
  std::vector<int> prev(ref.size() + 1, 0), cur(ref.size() + 1, 0);
  for (std::size_t i = 1; i <= cand.size(); ++i) {
    for (std::size_t j = 1; j <= ref.size(); ++j) {
      cur[j] = cand[i - 1] == ref[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return make_prf(prev[ref.size()], static_cast<double>(cand.size()), static_cast<double>(ref.size()));
}

RougeScore rouge(const Tokens& cand, const Tokens& ref) { return {rouge_n(cand, ref, 1), rouge_n(cand, ref, 2), rouge_l(cand, ref)}; }

double duplication_ratio(const Tokens& answer, int n) {
  if (answer.size() < static_cast<std::size_t>(n)) return -1.0;
  const auto c = ngram_counts(answer, n);
  const double total = static_cast<double>(answer.size() - static_cast<std::size_t>(n) + 1);
  return 1.0 - static_cast<double>(c.size()) / total;
}

DuplicationReport duplication(const std::vector<Tokens>& answers) {
  if (answers.empty()) throw DataError("duplication: empty corpus");
  DuplicationReport rep;
  for (int n = 1; n <= 4; ++n) {
    double sum = 0;
    int count = 0;
    for (const auto& a : answers) {
      const double d = duplication_ratio(a, n);
      if (d < 0) continue;
      sum += d;
      ++count;
    }
    rep.ratio[static_cast<std::size_t>(n - 1)] = count > 0 ? sum / count : 0.0;
    rep.answers[static_cast<std::size_t>(n - 1)] = count;
  }
  return rep;
}

std::vector<std::string> lead3(const std::vector<std::string>& sentences) {
  return {sentences.begin(), sentences.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(3, sentences.size()))};
}

TfIdf::TfIdf(const std::vector<Tokens>& corpus) : docs_(static_cast<int>(corpus.size())) {
  std::map<std::string, int> df;
  for (const auto& d : corpus) {
    for (const auto& t : std::set<std::string>(d.begin(), d.end())) ++df[t];
  }
  df_.assign(df.begin(), df.end());
}

double TfIdf::idf(const std::string& term) const {
  const auto it = std::lower_bound(df_.begin(), df_.end(), term, [](const auto& e, const std::string& t) { return e.first < t; });
  const int df = it != df_.end() && it->first == term ? it->second : 0;
  return std::log((1.0 + docs_) / (1.0 + df)) + 1.0;
}

std::vector<std::pair<std::string, double>> TfIdf::weights(const Tokens& t) const {
  std::map<std::string, int> tf;
  for (const auto& w : t) ++tf[w];
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [w, c] : tf) out.emplace_back(w, c * idf(w));
  return out;
}

double TfIdf::cosine(const Tokens& a, const Tokens& b) const {
  const auto wa = weights(a);
  const auto wb = weights(b);
  double dot = 0, na = 0, nb = 0;
  for (const auto& [w, v] : wa) na += v * v;
  for (const auto& [w, v] : wb) nb += v * v;
  std::size_t i = 0, j = 0;
  while (i < wa.size() && j < wb.size()) {
    if (wa[i].first == wb[j].first) {
      dot += wa[i++].second * wb[j++].second;
    } else if (wa[i].first < wb[j].first) {
      ++i;
    } else {
      ++j;
    }
  }
  return na > 0 && nb > 0 ? dot / std::sqrt(na * nb) : 0.0;
}

std::vector<int> mmr_extract(const Tokens& question, const std::vector<Tokens>& sentences, double lambda, int k) {
  std::vector<Tokens> corpus{question};
  corpus.insert(corpus.end(), sentences.begin(), sentences.end());
  const TfIdf tfidf(corpus);
  const int n = static_cast<int>(sentences.size());
  std::vector<double> rel(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) rel[static_cast<std::size_t>(i)] = tfidf.cosine(sentences[static_cast<std::size_t>(i)], question);
  std::vector<int> chosen;
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  while (static_cast<int>(chosen.size()) < std::min(k, n)) {
    int best = -1;
    double best_score = 0;
    for (int i = 0; i < n; ++i) {
      if (used[static_cast<std::size_t>(i)]) continue;
      double red = 0;
      for (int j : chosen) red = std::max(red, tfidf.cosine(sentences[static_cast<std::size_t>(i)], sentences[static_cast<std::size_t>(j)]));
      const double score = lambda * rel[static_cast<std::size_t>(i)] - (1 - lambda) * red;
      if (best < 0 || score > best_score) {
        best = i;
        best_score = score;
      }
    }
    used[static_cast<std::size_t>(best)] = true;
    chosen.push_back(best);
  }
  return chosen;
}

SystemReport score_system(const std::string& name, const std::vector<std::string>& ids,
                          const std::vector<Tokens>& candidates, const std::vector<Tokens>& references) {
  if (candidates.size() != references.size() || ids.size() != candidates.size()) {
    throw DataError("score_system: " + std::to_string(candidates.size()) + " candidates for " +
                    std::to_string(references.size()) + " references");
  }
  if (candidates.empty()) throw DataError("score_system: nothing to score");
  SystemReport rep;
  rep.name = name;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    ExampleScore row{ids[i], rouge(candidates[i], references[i]), {}};
    for (int n = 1; n <= 4; ++n) row.duplication[static_cast<std::size_t>(n - 1)] = duplication_ratio(candidates[i], n);
    for (auto [dst, src] : {std::pair{&rep.mean.r1, &row.rouge.r1}, {&rep.mean.r2, &row.rouge.r2}, {&rep.mean.rl, &row.rouge.rl}}) {
      dst->p += src->p;
      dst->r += src->r;
      dst->f += src->f;
    }
    rep.rows.push_back(row);
  }
  const double n = static_cast<double>(candidates.size());
  for (Prf* p : {&rep.mean.r1, &rep.mean.r2, &rep.mean.rl}) {
    p->p /= n;
    p->r /= n;
    p->f /= n;
  }
  rep.duplication = duplication(candidates);
  return rep;
}

std::string format_report(const std::vector<SystemReport>& systems, bool per_example) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  for (const auto& s : systems) {
    os << "[system " << s.name << "]\n";
    os << "examples = " << s.rows.size() << "\n";
    auto line = [&](const char* key, const Prf& p) {
      os << key << " = P " << p.p << " R " << p.r << " F1 " << p.f << "\n";
    };
    line("rouge_1", s.mean.r1);
    line("rouge_2", s.mean.r2);
    line("rouge_l", s.mean.rl);
    for (int n = 1; n <= 4; ++n) {
      os << "duplication_" << n << " = " << s.duplication.ratio[static_cast<std::size_t>(n - 1)] << " (over "
         << s.duplication.answers[static_cast<std::size_t>(n - 1)] << " answers)\n";
    }
    if (per_example) {
      os << "# id\tr1_f1\tr2_f1\trl_f1\tdup1\tdup2\tdup3\tdup4\n";
      for (const auto& r : s.rows) {
        os << r.id << '\t' << r.rouge.r1.f << '\t' << r.rouge.r2.f << '\t' << r.rouge.rl.f;
        for (double d : r.duplication) {
          if (d < 0) {
            os << "\t-";
          } else {
            os << '\t' << d;
          }
        }
        os << '\n';
      }
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace msg
