#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msg/corpus.hpp"

// Synthetic corpora for smoke runs and the acceptance suite.
namespace msg::fixtures {

enum class Task {
  kCopy,      // answer is the document sentence that names the question's topic
  kMultihop,  // answer = topic sentence + the sentence linked to it by a bridge word
  kRepeat,    // answers list several near-identical facts
};

Task parse_task(const std::string& name);
std::string to_string(Task t);

struct FixtureSet {
  std::vector<RawExample> train;
  std::vector<RawExample> dev;
  std::vector<RawExample> test;
};

// Depends only on the arguments; ids are "<task>-<split>-<n>".
FixtureSet make_fixture(Task task, int train_size, int eval_size, std::uint64_t seed);

}  // namespace msg::fixtures
