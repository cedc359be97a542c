#include "msg/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "json.hpp"
#include "msg/error.hpp"

namespace msg {

namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

const std::array<const char*, 20> kAbbreviations = {"dr", "mr", "mrs", "ms", "prof", "st", "jr", "sr", "vs", "etc",
                                                    "e.g", "i.e", "inc", "ltd", "fig", "no", "co", "approx", "dept",
                                                    "mt"};

bool is_abbreviation(const std::string& word) {
  std::string w;
  for (char c : word) w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return std::any_of(kAbbreviations.begin(), kAbbreviations.end(), [&](const char* a) { return w == a; });
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_word_byte(c)) {
      cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
      continue;
    }
    if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    if (std::isspace(c) == 0) out.emplace_back(1, ch);
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i != 0) s.push_back(' ');
    s += tokens[i];
  }
  return s;
}

std::vector<std::string> split_sentences(const std::string& document) {
  std::vector<std::string> out;
  const std::string text = trim(document);
  if (text.empty()) return out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c != '.' && c != '?' && c != '!') continue;
    std::size_t j = i + 1;
    while (j < text.size() && (text[j] == '"' || text[j] == '\'' || text[j] == ')')) ++j;
    if (j < text.size()) {
      if (std::isspace(static_cast<unsigned char>(text[j])) == 0) continue;
      std::size_t k = j;
      while (k < text.size() && std::isspace(static_cast<unsigned char>(text[k])) != 0) ++k;
      if (k < text.size() && std::isupper(static_cast<unsigned char>(text[k])) == 0) continue;
    }
    if (c == '.') {
      std::size_t w = i;
      while (w > start && std::isspace(static_cast<unsigned char>(text[w - 1])) == 0) --w;
      if (is_abbreviation(text.substr(w, i - w))) continue;
    }
    std::string sentence = trim(text.substr(start, j - start));
    if (!sentence.empty()) out.push_back(std::move(sentence));
    start = j;
    i = j - 1;
  }
  std::string tail = trim(text.substr(std::min(start, text.size())));
  if (!tail.empty()) out.push_back(std::move(tail));
  if (out.empty()) out.push_back(text);
  return out;
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "dev") return Split::kDev;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + name + "'");
}

std::vector<RawExample> load_dataset(const std::string& path, Split split, LoadReport* report) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read dataset '" + path + "'");
  std::vector<RawExample> out;
  LoadReport rep;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++rep.lines;
    try {
      auto j = nlohmann::json::parse(line);
      RawExample ex;
      ex.id = j.contains("id") ? j.at("id").get<std::string>() : "line-" + std::to_string(rep.lines);
      ex.question = trim(j.at("question").get<std::string>());
      const auto& doc = j.at("document");
      if (doc.is_string()) {
        ex.sentences = split_sentences(doc.get<std::string>());
      } else {
        for (const auto& s : doc) {
          std::string t = trim(s.get<std::string>());
          if (!t.empty()) ex.sentences.push_back(std::move(t));
        }
      }
      if (j.contains("answer")) ex.answer = trim(j.at("answer").get<std::string>());
      const bool bad = ex.question.empty() || ex.sentences.empty() || (split == Split::kTrain && ex.answer.empty());
      if (bad) {
        ++rep.malformed;
        continue;
      }
      out.push_back(std::move(ex));
    } catch (const nlohmann::json::exception&) {
      ++rep.malformed;
    }
  }
  rep.loaded = out.size();
  if (report != nullptr) *report = rep;
  if (rep.malformed * 100 > rep.lines) {
    throw DataError("dataset '" + path + "': " + std::to_string(rep.malformed) + " of " + std::to_string(rep.lines) +
                    " lines malformed (more than 1%)");
  }
  return out;
}

void save_dataset(const std::string& path, const std::vector<RawExample>& examples) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset '" + path + "'");
  for (const auto& ex : examples) {
    nlohmann::json j;
    j["id"] = ex.id;
    j["question"] = ex.question;
    j["document"] = ex.sentences;
    j["answer"] = ex.answer;
    out << j.dump() << '\n';
  }
}

TokenizedExample tokenize_example(const RawExample& raw) {
  TokenizedExample t;
  t.id = raw.id;
  t.question = tokenize(raw.question);
  for (const auto& s : raw.sentences) {
    auto toks = tokenize(s);
    if (!toks.empty()) t.sentences.push_back(std::move(toks));
  }
  t.answer = tokenize(raw.answer);
  return t;
}

std::vector<TokenizedExample> tokenize_all(const std::vector<RawExample>& raw) {
  std::vector<TokenizedExample> out;
  out.reserve(raw.size());
  for (const auto& r : raw) out.push_back(tokenize_example(r));
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* t : {"<pad>", "<unk>", "<s>", "</s>"}) append(t, 0);
}

void Vocabulary::append(const std::string& token, std::int64_t count) {
  ids_.emplace(token, size());
  tokens_.push_back(token);
  counts_.push_back(count);
}

int Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary '" + path + "'");
  for (int i = 0; i < size(); ++i) out << tokens_[static_cast<std::size_t>(i)] << '\t' << counts_[static_cast<std::size_t>(i)] << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read vocabulary '" + path + "'");
  Vocabulary v;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("vocabulary line " + std::to_string(row + 1) + " has no tab");
    std::string tok = line.substr(0, tab);
    const std::int64_t count = std::stoll(line.substr(tab + 1));
    if (row < kNumReserved) {
      if (tok != v.tokens_[static_cast<std::size_t>(row)]) {
        throw DataError("vocabulary '" + path + "' does not start with the reserved tokens");
      }
    } else {
      if (v.contains(tok)) throw DataError("duplicate vocabulary token '" + tok + "'");
      v.append(tok, count);
    }
    ++row;
  }
  return v;
}

Vocabulary build_vocab(const std::vector<TokenizedExample>& examples, int max_size) {
  std::map<std::string, std::int64_t> counts;
  auto add = [&](const std::vector<std::string>& toks) {
    for (const auto& t : toks) ++counts[t];
  };
  for (const auto& ex : examples) {
    add(ex.question);
    for (const auto& s : ex.sentences) add(s);
    add(ex.answer);
  }
  std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  std::int64_t total = 0;
  std::int64_t kept = 0;
  const auto room = static_cast<std::size_t>(std::max(0, max_size - kNumReserved));
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    total += ranked[i].second;
    if (i < room) {
      v.append(ranked[i].first, ranked[i].second);
      kept += ranked[i].second;
    }
  }
  v.coverage_ = total == 0 ? 1.0 : static_cast<double>(kept) / static_cast<double>(total);
  return v;
}

std::vector<float> load_embeddings(const std::string& path, const Vocabulary& vocab, int dim, double init_range,
                                   std::uint64_t seed, EmbeddingReport* report) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read embeddings '" + path + "'");
  std::vector<float> table(static_cast<std::size_t>(vocab.size()) * static_cast<std::size_t>(dim));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-init_range, init_range);
  for (auto& v : table) v = static_cast<float>(dist(rng));
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(vocab.size()), 0);
  EmbeddingReport rep;
  std::string line;
  std::vector<float> row;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++rep.lines;
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    row.clear();
    float x = 0;
    while (ss >> x) row.push_back(x);
    if (static_cast<int>(row.size()) != dim || !ss.eof()) {
      ++rep.bad_lines;
      continue;
    }
    if (!vocab.contains(tok)) continue;
    const int id = vocab.id(tok);
    if (seen[static_cast<std::size_t>(id)] == 0) ++rep.matched;
    seen[static_cast<std::size_t>(id)] = 1;
    std::copy(row.begin(), row.end(), table.begin() + static_cast<std::ptrdiff_t>(id) * dim);
  }
  rep.hit_rate = vocab.size() == 0 ? 0.0 : static_cast<double>(rep.matched) / vocab.size();
  if (report != nullptr) *report = rep;
  return table;
}

namespace {

struct Assembled {
  std::vector<std::string> question;
  std::vector<std::vector<std::string>> sentences;
  std::vector<std::string> answer;
  std::vector<std::string> oov;
};

Assembled assemble(const TokenizedExample& ex, const Vocabulary& vocab, const BatchLimits& limits) {
  Assembled a;
  a.question.assign(ex.question.begin(),
                    ex.question.begin() + std::min<std::ptrdiff_t>(limits.question, static_cast<std::ptrdiff_t>(ex.question.size())));
  for (const auto& s : ex.sentences) {
    if (static_cast<int>(a.sentences.size()) >= limits.sentences) break;
    if (s.empty()) continue;
    a.sentences.emplace_back(s.begin(), s.begin() + std::min<std::ptrdiff_t>(limits.sentence_len, static_cast<std::ptrdiff_t>(s.size())));
  }
  if (a.sentences.empty()) throw DataError("example '" + ex.id + "' has no sentences after caps");
  if (a.question.empty()) throw DataError("example '" + ex.id + "' has an empty question");
  a.answer.assign(ex.answer.begin(),
                  ex.answer.begin() + std::min<std::ptrdiff_t>(limits.answer, static_cast<std::ptrdiff_t>(ex.answer.size())));
  auto note = [&](const std::string& t) {
    if (!vocab.contains(t) && std::find(a.oov.begin(), a.oov.end(), t) == a.oov.end()) a.oov.push_back(t);
  };
  for (const auto& t : a.question) note(t);
  for (const auto& s : a.sentences)
    for (const auto& t : s) note(t);
  return a;
}

int ext_id(const std::string& t, const Vocabulary& vocab, const std::vector<std::string>& oov) {
  if (vocab.contains(t)) return vocab.id(t);
  auto it = std::find(oov.begin(), oov.end(), t);
  if (it == oov.end()) return kUnk;
  return vocab.size() + static_cast<int>(it - oov.begin());
}

}  // namespace

Batch make_batch(const std::vector<TokenizedExample>& examples, const Vocabulary& vocab, const BatchLimits& limits) {
  Batch b;
  b.size = static_cast<int>(examples.size());
  b.vocab_size = vocab.size();
  std::vector<Assembled> parts;
  parts.reserve(examples.size());
  for (const auto& ex : examples) {
    parts.push_back(assemble(ex, vocab, limits));
    const auto& a = parts.back();
    b.max_question = std::max(b.max_question, static_cast<int>(a.question.size()));
    b.max_sentences = std::max(b.max_sentences, static_cast<int>(a.sentences.size()));
    for (const auto& s : a.sentences) b.max_sentence_len = std::max(b.max_sentence_len, static_cast<int>(s.size()));
    b.max_target = std::max(b.max_target, static_cast<int>(a.answer.size()) + 1);
  }
  const auto B = static_cast<std::size_t>(b.size);
  const auto Lq = static_cast<std::size_t>(b.max_question);
  const auto N = static_cast<std::size_t>(b.max_sentences);
  const auto Ls = static_cast<std::size_t>(b.max_sentence_len);
  const auto La = static_cast<std::size_t>(b.max_target);
  b.question_ids.assign(B * Lq, kPad);
  b.question_ext.assign(B * Lq, kPad);
  b.question_mask.assign(B * Lq, 0);
  b.doc_ids.assign(B * N * Ls, kPad);
  b.doc_ext.assign(B * N * Ls, kPad);
  b.doc_mask.assign(B * N * Ls, 0);
  b.sentence_mask.assign(B * N, 0);
  b.target.assign(B * La, kPad);
  b.decoder_input.assign(B * La, kPad);
  b.target_mask.assign(B * La, 0);
  for (std::size_t e = 0; e < B; ++e) {
    const auto& a = parts[e];
    b.ids.push_back(examples[e].id);
    b.oov.push_back(a.oov);
    for (std::size_t i = 0; i < a.question.size(); ++i) {
      b.question_ids[e * Lq + i] = vocab.id(a.question[i]);
      b.question_ext[e * Lq + i] = ext_id(a.question[i], vocab, a.oov);
      b.question_mask[e * Lq + i] = 1;
    }
    for (std::size_t s = 0; s < a.sentences.size(); ++s) {
      b.sentence_mask[e * N + s] = 1;
      for (std::size_t w = 0; w < a.sentences[s].size(); ++w) {
        const std::size_t k = (e * N + s) * Ls + w;
        b.doc_ids[k] = vocab.id(a.sentences[s][w]);
        b.doc_ext[k] = ext_id(a.sentences[s][w], vocab, a.oov);
        b.doc_mask[k] = 1;
      }
    }
    b.decoder_input[e * La] = kSos;
    for (std::size_t t = 0; t < a.answer.size(); ++t) {
      b.target[e * La + t] = ext_id(a.answer[t], vocab, a.oov);
      b.decoder_input[e * La + t + 1] = vocab.id(a.answer[t]);
    }
    b.target[e * La + a.answer.size()] = kEos;
    for (std::size_t t = 0; t <= a.answer.size(); ++t) b.target_mask[e * La + t] = 1;
  }
  return b;
}

ExampleView Batch::view(int bi) const {
  ExampleView v;
  const auto e = static_cast<std::size_t>(bi);
  const auto Lq = static_cast<std::size_t>(max_question);
  const auto N = static_cast<std::size_t>(max_sentences);
  const auto Ls = static_cast<std::size_t>(max_sentence_len);
  const auto La = static_cast<std::size_t>(max_target);
  v.id = ids.at(e);
  v.vocab_size = vocab_size;
  v.oov = oov[e];
  for (std::size_t i = 0; i < Lq && question_mask[e * Lq + i]; ++i) {
    v.question_ids.push_back(question_ids[e * Lq + i]);
    v.question_ext.push_back(question_ext[e * Lq + i]);
  }
  std::vector<int> lengths;
  for (std::size_t s = 0; s < N && sentence_mask[e * N + s]; ++s) {
    int len = 0;
    while (static_cast<std::size_t>(len) < Ls && doc_mask[(e * N + s) * Ls + static_cast<std::size_t>(len)]) ++len;
    lengths.push_back(len);
  }
  v.num_sentences = static_cast<int>(lengths.size());
  v.sentence_len = lengths.empty() ? 0 : *std::max_element(lengths.begin(), lengths.end());
  const auto W = static_cast<std::size_t>(v.sentence_len);
  v.doc_ids.assign(lengths.size() * W, kPad);
  v.doc_ext.assign(lengths.size() * W, kPad);
  v.doc_mask.assign(lengths.size() * W, 0);
  v.sentence_mask.assign(lengths.size(), 1);
  for (std::size_t s = 0; s < lengths.size(); ++s) {
    for (std::size_t w = 0; w < static_cast<std::size_t>(lengths[s]); ++w) {
      const std::size_t src = (e * N + s) * Ls + w;
      v.doc_ids[s * W + w] = doc_ids[src];
      v.doc_ext[s * W + w] = doc_ext[src];
      v.doc_mask[s * W + w] = 1;
    }
  }
  for (std::size_t t = 0; t < La && target_mask[e * La + t]; ++t) {
    v.target.push_back(target[e * La + t]);
    v.decoder_input.push_back(decoder_input[e * La + t]);
  }
  return v;
}

std::string extended_token(int id, const Vocabulary& vocab, const std::vector<std::string>& oov) {
  if (id < vocab.size()) return vocab.token(id);
  const auto k = static_cast<std::size_t>(id - vocab.size());
  if (k >= oov.size()) throw DimensionError("extended id " + std::to_string(id) + " outside this example's OOV list");
  return oov[k];
}

}  // namespace msg
