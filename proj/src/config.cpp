#include "msg/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "msg/error.hpp"

namespace msg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <class V>
V parse_number(const std::string& key, const std::string& text) {
  V v{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  const auto r = std::from_chars(first, last, v);
  if (r.ec != std::errc() || r.ptr != last) {
    throw ConfigError("invalid value '" + text + "' for '" + key + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true" || text == "on" || text == "yes") return true;
  if (text == "0" || text == "false" || text == "off" || text == "no") return false;
  throw ConfigError("invalid boolean '" + text + "' for '" + key + "'");
}

// Shortest text that parses back to the same double.
std::string fmt_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class M>
ConfigField number_field(std::string key, std::string help, M Config::*member) {
  using V = std::remove_reference_t<decltype(std::declval<Config&>().*member)>;
  return {key, std::move(help),
          [key, member](Config& c, const std::string& v) { c.*member = parse_number<V>(key, v); },
          [member](const Config& c) {
            if constexpr (std::is_floating_point_v<V>) return fmt_double(c.*member);
            else return std::to_string(c.*member);
          }};
}

ConfigField bool_field(std::string key, std::string help, bool Config::*member) {
  return {key, std::move(help), [key, member](Config& c, const std::string& v) { c.*member = parse_bool(key, v); },
          [member](const Config& c) { return std::string(c.*member ? "on" : "off"); }};
}

}  // namespace

std::string to_string(Aggregation a) {
  switch (a) {
    case Aggregation::kMerge: return "merge";
    case Aggregation::kLast: return "last";
    case Aggregation::kUniform: return "uniform";
  }
  return "merge";
}

std::string to_string(GateMode g) { return g == GateMode::kSigmoid ? "sigmoid" : "softmax"; }

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    f.push_back(number_field("lr", "learning rate", &Config::lr));
    f.push_back(number_field("init_acc", "initial accumulator value", &Config::init_acc));
    f.push_back(number_field("dropout", "dropout rate on recurrent outputs", &Config::dropout));
    f.push_back(number_field("batch_size", "examples per update", &Config::batch_size));
    f.push_back(number_field("vocab_size", "maximum vocabulary size incl. reserved ids", &Config::vocab_size));
    f.push_back(number_field("init_range", "uniform initialisation half-width", &Config::init_range));
    f.push_back(number_field("phase1_epochs", "epochs without coverage loss", &Config::phase1_epochs));
    f.push_back(number_field("phase2_epochs", "epochs with coverage loss", &Config::phase2_epochs));
    f.push_back(number_field("lambda_cov", "coverage loss weight", &Config::lambda_cov));
    f.push_back(number_field("lambda_mar", "question relevance weight in MAR", &Config::lambda_mar));
    f.push_back(number_field("clip_norm", "global gradient norm cap (0 disables)", &Config::clip_norm));
    f.push_back(number_field("seed", "random seed", &Config::seed));
    f.push_back(number_field("grad_slots", "gradient accumulation slots per batch", &Config::grad_slots));
    f.push_back(number_field("emb_dim", "word embedding size", &Config::emb_dim));
    f.push_back(number_field("enc_hidden", "encoder hidden size per direction", &Config::enc_hidden));
    f.push_back(number_field("dec_hidden", "decoder hidden size", &Config::dec_hidden));
    f.push_back(number_field("attn_dim", "attention projection size", &Config::attn_dim));
    f.push_back(number_field("hops", "number of inference hops", &Config::hops));
    f.push_back(bool_field("mar_unit", "use MAR units for hops after the first", &Config::mar_unit));
    f.push_back(bool_field("hop_refiner", "recurrent refinement before each hop", &Config::hop_refiner));
    f.push_back({"aggregation", "hop aggregation: merge | last | uniform",
                 [](Config& c, const std::string& v) {
                   if (v == "merge") c.aggregation = Aggregation::kMerge;
                   else if (v == "last") c.aggregation = Aggregation::kLast;
                   else if (v == "uniform") c.aggregation = Aggregation::kUniform;
                   else throw ConfigError("invalid value '" + v + "' for 'aggregation'");
                 },
                 [](const Config& c) { return to_string(c.aggregation); }});
    f.push_back({"gate", "sentence gate nonlinearity: sigmoid | softmax",
                 [](Config& c, const std::string& v) {
                   if (v == "sigmoid") c.gate = GateMode::kSigmoid;
                   else if (v == "softmax") c.gate = GateMode::kSoftmax;
                   else throw ConfigError("invalid value '" + v + "' for 'gate'");
                 },
                 [](const Config& c) { return to_string(c.gate); }});
    f.push_back(bool_field("question_pointer", "copy from the question", &Config::question_pointer));
    f.push_back(bool_field("mvc", "multi-view coverage loss in phase 2", &Config::mvc));
    f.push_back(number_field("max_question_len", "question token cap", &Config::max_question_len));
    f.push_back(number_field("max_sentences", "document sentence cap", &Config::max_sentences));
    f.push_back(number_field("max_sentence_len", "tokens per sentence cap", &Config::max_sentence_len));
    f.push_back(number_field("max_answer_len", "answer / generation length cap", &Config::max_answer_len));
    f.push_back(number_field("beam_size", "beam width at decoding", &Config::beam_size));
    return f;
  }();
  return fields;
}

void set_config_value(Config& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : config_fields()) {
    if (f.key == key) {
      f.set(cfg, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void Config::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (!(lr > 0)) fail("lr must be positive");
  if (!(init_acc > 0)) fail("init_acc must be positive");
  if (dropout < 0 || dropout >= 1) fail("dropout must be in [0, 1)");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (vocab_size <= kNumReserved) fail("vocab_size must exceed the reserved ids");
  if (!(init_range > 0)) fail("init_range must be positive");
  if (phase1_epochs < 0 || phase2_epochs < 0) fail("epoch counts must be nonnegative");
  if (lambda_cov < 0 || lambda_cov > 1) fail("lambda_cov must be in [0, 1]");
  if (lambda_mar < 0 || lambda_mar > 1) fail("lambda_mar must be in [0, 1]");
  if (clip_norm < 0) fail("clip_norm must be nonnegative");
  if (grad_slots < 1) fail("grad_slots must be at least 1");
  if (emb_dim < 1 || enc_hidden < 1 || dec_hidden < 1 || attn_dim < 1) fail("model sizes must be positive");
  if (hops < 1) fail("hops must be at least 1");
  if (max_question_len < 1 || max_sentences < 1 || max_sentence_len < 1 || max_answer_len < 1) {
    fail("length caps must be positive");
  }
  if (beam_size < 1) fail("beam_size must be at least 1");
}

Config parse_config(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const Config& cfg) {
  std::string out;
  for (const auto& f : config_fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace msg
