#include "msg/fixtures.hpp"

#include <algorithm>
#include <random>
#include <set>

#include "msg/error.hpp"

namespace msg::fixtures {

namespace {

// mt19937_64 output is fully specified, unlike the standard distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  int below(int n) { return static_cast<int>(gen_() % static_cast<std::uint64_t>(n)); }
  int between(int lo, int hi) { return lo + below(hi - lo + 1); }
  template <class V>
  const typename V::value_type& pick(const V& v) {
    return v[static_cast<std::size_t>(below(static_cast<int>(v.size())))];
  }
  template <class V>
  void shuffle(V& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(below(static_cast<int>(i)))]);
  }

 private:
  std::mt19937_64 gen_;
};

// Pronounceable pseudo-words: consonant-vowel-consonant-vowel.
std::vector<std::string> lexicon(int count, std::uint64_t salt) {
  static const std::string cons = "bdfgklmnprstvz";
  static const std::string vow = "aeiou";
  std::vector<std::string> all;
  for (char a : cons) {
    for (char b : vow) {
      for (char c : cons) {
        for (char d : vow) all.push_back(std::string{a, b, c, d});
      }
    }
  }
  Rng rng(salt);
  rng.shuffle(all);
  if (count < static_cast<int>(all.size())) all.resize(static_cast<std::size_t>(count));
  return all;
}

// Entities and filler words come from disjoint slices of one lexicon.
const std::vector<std::string>& words_pool() {
  static const auto v = lexicon(200, 101);
  return v;
}
const std::vector<std::string>& entities() {
  static const std::vector<std::string> v(words_pool().begin(), words_pool().begin() + 120);
  return v;
}

// Filler words never repeat within one example, so the only lexical overlap
// between sentences is the one a generator puts there on purpose.
class Fillers {
 public:
  explicit Fillers(Rng& rng) : rng_(rng) {}
  std::vector<std::string> draw(int n) {
    const auto& pool = words_pool();
    std::vector<std::string> out;
    while (static_cast<int>(out.size()) < n) {
      const auto& w = pool[static_cast<std::size_t>(120 + rng_.below(static_cast<int>(pool.size()) - 120))];
      if (used_.insert(w).second) out.push_back(w);
    }
    return out;
  }

 private:
  Rng& rng_;
  std::set<std::string> used_;
};

std::string join(const std::vector<std::string>& words) {
  std::string s;
  for (const auto& w : words) s += (s.empty() ? "" : " ") + w;
  return s;
}

// n distinct entities from the first `pool` of them.
std::vector<std::string> draw_entities(Rng& rng, int n, int pool = 120) {
  std::vector<std::string> out;
  while (static_cast<int>(out.size()) < n) {
    const auto& e = entities()[static_cast<std::size_t>(rng.below(pool))];
    if (std::find(out.begin(), out.end(), e) == out.end()) out.push_back(e);
  }
  return out;
}

RawExample copy_example(Rng& rng) {
  const int n = rng.between(3, 4);
  const auto ents = draw_entities(rng, n);
  const int target = rng.below(n);
  Fillers fill(rng);
  RawExample ex;
  for (int i = 0; i < n; ++i) {
    auto words = fill.draw(rng.between(3, 5));
    words.insert(words.begin() + rng.below(static_cast<int>(words.size()) + 1), ents[static_cast<std::size_t>(i)]);
    ex.sentences.push_back(join(words) + " .");
  }
  ex.question = "what about " + ents[static_cast<std::size_t>(target)] + " ?";
  ex.answer = ex.sentences[static_cast<std::size_t>(target)];
  return ex;
}

// A small entity pool, so each entity recurs across many training documents.
constexpr int kChainEntities = 24;

// One document of 2-3 two-sentence chains, asked once per chain. Chain c is
// {head_c, bridge_c} followed somewhere by {bridge_c, payload_c}; the answer
// to "what about head_c ?" is those two sentences in that order. Since every
// document comes with several questions, the answer cannot be read off the
// document alone.
std::vector<RawExample> multihop_examples(Rng& rng) {
  const int chains = rng.between(2, 3);
  const int n = 2 * chains;
  const auto ents = draw_entities(rng, 3 * chains, kChainEntities);
  std::vector<int> slots(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) slots[static_cast<std::size_t>(i)] = i;
  rng.shuffle(slots);
  Fillers fill(rng);
  auto sentence = [&](const std::string& a, const std::string& b) {
    auto words = fill.draw(rng.between(1, 2));
    for (const auto& k : {a, b}) words.insert(words.begin() + rng.below(static_cast<int>(words.size()) + 1), k);
    return join(words) + " .";
  };
  std::vector<std::string> sents(static_cast<std::size_t>(n));
  for (int c = 0; c < chains; ++c) {
    const auto& head = ents[static_cast<std::size_t>(3 * c)];
    const auto& bridge = ents[static_cast<std::size_t>(3 * c + 1)];
    const auto& payload = ents[static_cast<std::size_t>(3 * c + 2)];
    sents[static_cast<std::size_t>(slots[static_cast<std::size_t>(2 * c)])] = sentence(head, bridge);
    sents[static_cast<std::size_t>(slots[static_cast<std::size_t>(2 * c + 1)])] = sentence(bridge, payload);
  }
  std::vector<RawExample> out;
  for (int c = 0; c < chains; ++c) {
    RawExample ex;
    ex.sentences = sents;
    ex.question = "what about " + ents[static_cast<std::size_t>(3 * c)] + " ?";
    ex.answer = sents[static_cast<std::size_t>(slots[static_cast<std::size_t>(2 * c)])] + " " +
                sents[static_cast<std::size_t>(slots[static_cast<std::size_t>(2 * c + 1)])];
    out.push_back(std::move(ex));
  }
  rng.shuffle(out);
  return out;
}

RawExample repeat_example(Rng& rng) {
  // one fact per sentence, all with the same frame: "<entity> is <colour> ."
  static const std::vector<std::string> colours{"red", "blue", "green", "gold", "grey", "pink"};
  const int n = rng.between(3, 4);
  const auto ents = draw_entities(rng, n);
  Fillers fill(rng);
  RawExample ex;
  std::vector<std::string> facts;
  for (int i = 0; i < n; ++i) {
    const std::string fact = "the " + ents[static_cast<std::size_t>(i)] + " is " + rng.pick(colours) + " .";
    facts.push_back(fact);
    auto pre = fill.draw(rng.between(0, 2));
    ex.sentences.push_back(join(pre) + (pre.empty() ? "" : " ") + fact);
  }
  ex.question = "what colour is each thing ?";
  ex.answer = join(facts);
  return ex;
}

std::vector<RawExample> draw(Task task, const std::string& split, int count, Rng& rng) {
  std::vector<RawExample> out;
  while (static_cast<int>(out.size()) < count) {
    std::vector<RawExample> batch;
    if (task == Task::kMultihop) {
      batch = multihop_examples(rng);
    } else {
      batch.push_back(task == Task::kCopy ? copy_example(rng) : repeat_example(rng));
    }
    for (auto& ex : batch) {
      if (static_cast<int>(out.size()) == count) break;
      ex.id = to_string(task) + "-" + split + "-" + std::to_string(out.size());
      out.push_back(std::move(ex));
    }
  }
  return out;
}

}  // namespace

Task parse_task(const std::string& name) {
  if (name == "copy") return Task::kCopy;
  if (name == "multihop") return Task::kMultihop;
  if (name == "repeat") return Task::kRepeat;
  throw ConfigError("unknown fixture task '" + name + "' (expected copy, multihop or repeat)");
}

std::string to_string(Task t) {
  switch (t) {
    case Task::kCopy: return "copy";
    case Task::kMultihop: return "multihop";
    case Task::kRepeat: return "repeat";
  }
  return "?";
}

FixtureSet make_fixture(Task task, int train_size, int eval_size, std::uint64_t seed) {
  if (train_size < 1 || eval_size < 0) throw ConfigError("fixture sizes must be positive");
  Rng rng(seed);
  FixtureSet set;
  set.train = draw(task, "train", train_size, rng);
  set.dev = draw(task, "dev", eval_size, rng);
  set.test = draw(task, "test", eval_size, rng);
  return set;
}

}  // namespace msg::fixtures
