#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "msg/corpus.hpp"

namespace msg {

enum class Aggregation { kMerge, kLast, kUniform };
enum class GateMode { kSigmoid, kSoftmax };

// Hyperparameters, model sizes and ablation switches. Defaults follow the
// published setup; fixtures override the sizes.
struct Config {
  // optimisation
  double lr = 0.15;
  double init_acc = 0.1;
  double dropout = 0.5;
  int batch_size = 32;
  int vocab_size = 50000;
  double init_range = 0.05;
  int phase1_epochs = 20;
  int phase2_epochs = 5;
  double lambda_cov = 0.1;
  double lambda_mar = 0.5;
  double clip_norm = 2.0;
  std::uint64_t seed = 1;
  int grad_slots = 8;

  // model sizes
  int emb_dim = 300;
  int enc_hidden = 256;  // per direction
  int dec_hidden = 256;
  int attn_dim = 256;

  // multi-hop inference
  int hops = 3;
  bool mar_unit = true;
  bool hop_refiner = true;
  Aggregation aggregation = Aggregation::kMerge;

  // generator
  GateMode gate = GateMode::kSigmoid;
  bool question_pointer = true;
  bool mvc = true;

  // data caps and decoding
  int max_question_len = 30;
  int max_sentences = 25;
  int max_sentence_len = 40;
  int max_answer_len = 50;
  int beam_size = 4;

  int enc_out() const { return 2 * enc_hidden; }
  BatchLimits limits() const { return {max_question_len, max_sentences, max_sentence_len, max_answer_len}; }

  // Throws ConfigError on out-of-range values.
  void validate() const;
};

// One settable field, addressed by its TrainConfig-style key.
struct ConfigField {
  std::string key;
  std::string help;
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

const std::vector<ConfigField>& config_fields();

// Sets key to value; unknown keys and unparsable values throw ConfigError.
void set_config_value(Config& cfg, const std::string& key, const std::string& value);

// Flat "key = value" text, '#' starts a comment.
Config parse_config(const std::string& text);
Config load_config(const std::string& path);
std::string format_config(const Config& cfg);

std::string to_string(Aggregation a);
std::string to_string(GateMode g);

}  // namespace msg
