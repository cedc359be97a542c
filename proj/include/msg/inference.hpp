#pragma once

#include <string>
#include <vector>

#include "msg/config.hpp"
#include "msg/corpus.hpp"
#include "msg/model_params.hpp"
#include "msg/multihop.hpp"
#include "msg/params.hpp"

namespace msg {

struct Hypothesis {
  std::vector<int> tokens;  // extended ids, EOS included when finished by it
  std::vector<double> step_log_probs;
  double log_prob = 0.0;
  bool finished = false;

  // Length-normalised score used for the final ranking.
  double score() const { return tokens.empty() ? log_prob : log_prob / static_cast<double>(tokens.size()); }
};

struct Generation {
  std::string id;
  std::vector<int> tokens;  // without EOS, at most max_answer_len
  std::vector<std::string> words;
  std::string answer;
  Hypothesis best;
  HopTrace trace;
  std::vector<std::vector<int>> justification;  // per hop, top sentence indices
  long gate_fallbacks = 0;
};

// beam_size 1 is greedy argmax decoding (ties go to the lower id). Larger
// beams keep the beam_size best partial answers by total log probability and
// rank finished ones by average log probability. Decoding stops at EOS or
// after cfg.max_answer_len tokens.
template <class T>
Generation generate(const ParamStore<T>& store, const ModelParams& mp, const Config& cfg, const Vocabulary& vocab,
                    const ExampleView& ex, int beam_size);

template <class T>
HopTrace trace_hops(const ParamStore<T>& store, const ModelParams& mp, const Config& cfg, const ExampleView& ex);

// Indices of the k largest weights, ties to the lower index.
std::vector<int> top_sentences(const std::vector<double>& weights, int k);

// JSONL helpers.
std::string generation_record(const Generation& g);
std::vector<std::string> trace_records(const std::string& example_id, const HopTrace& trace);

}  // namespace msg
