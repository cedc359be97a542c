#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

// Dataset ingestion, tokenisation, vocabulary and batch assembly.

namespace msg {

// --- text -----------------------------------------------------------------

// Lowercased tokens: runs of letters/digits (and any non-ASCII byte) form a
// word, every other non-space character is a token of its own.
std::vector<std::string> tokenize(const std::string& text);
std::string detokenize(const std::vector<std::string>& tokens);

// Rule-based sentence splitter: split after . ? ! when followed by
// whitespace and an uppercase letter (or end of text), unless the word
// before the period is a known abbreviation. Never returns an empty list for
// non-blank input.
std::vector<std::string> split_sentences(const std::string& document);

// --- records --------------------------------------------------------------

struct RawExample {
  std::string id;
  std::string question;
  std::vector<std::string> sentences;  // document, already split
  std::string answer;
};

enum class Split { kTrain, kDev, kTest };
Split parse_split(const std::string& name);

struct LoadReport {
  std::size_t lines = 0;
  std::size_t loaded = 0;
  std::size_t malformed = 0;
};

// One JSON record per line: {"id", "question", "document", "answer"} where
// document is either a string (split with split_sentences) or an array of
// sentences. Malformed lines are skipped and counted; more than 1% malformed
// is a hard failure. "answer" may be absent outside the training split.
std::vector<RawExample> load_dataset(const std::string& path, Split split, LoadReport* report = nullptr);
void save_dataset(const std::string& path, const std::vector<RawExample>& examples);

struct TokenizedExample {
  std::string id;
  std::vector<std::string> question;
  std::vector<std::vector<std::string>> sentences;
  std::vector<std::string> answer;
};

TokenizedExample tokenize_example(const RawExample& raw);
std::vector<TokenizedExample> tokenize_all(const std::vector<RawExample>& raw);

// --- vocabulary -----------------------------------------------------------

inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kSos = 2;
inline constexpr int kEos = 3;
inline constexpr int kNumReserved = 4;

class Vocabulary {
 public:
  Vocabulary();

  int size() const { return static_cast<int>(tokens_.size()); }
  // UNK for unknown tokens.
  int id(const std::string& token) const;
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::int64_t count(int id) const { return counts_.at(static_cast<std::size_t>(id)); }

  // Fraction of corpus token occurrences covered by the kept entries.
  double coverage() const { return coverage_; }

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  friend Vocabulary build_vocab(const std::vector<TokenizedExample>& examples, int max_size);

 private:
  void append(const std::string& token, std::int64_t count);

  std::vector<std::string> tokens_;
  std::vector<std::int64_t> counts_;
  std::unordered_map<std::string, int> ids_;
  double coverage_ = 1.0;
};

// Frequency-ranked (ties lexicographic) over question, document and answer
// tokens. max_size includes the four reserved entries.
Vocabulary build_vocab(const std::vector<TokenizedExample>& examples, int max_size);

struct EmbeddingReport {
  std::size_t lines = 0;
  std::size_t matched = 0;
  std::size_t bad_lines = 0;
  double hit_rate = 0.0;  // matched / vocabulary size
};

// Row-major |V| x dim matrix. Rows of tokens found in the file are copied;
// the rest are drawn from U[-init_range, init_range]. Lines whose value count
// differs from dim are skipped and counted.
std::vector<float> load_embeddings(const std::string& path, const Vocabulary& vocab, int dim, double init_range,
                                   std::uint64_t seed, EmbeddingReport* report = nullptr);

// --- batches --------------------------------------------------------------

struct BatchLimits {
  int question = 30;
  int sentences = 25;
  int sentence_len = 40;
  int answer = 50;
};

// Everything the model needs for one example, trimmed to its own lengths.
struct ExampleView {
  std::string id;
  int vocab_size = 0;
  std::vector<int> question_ids;  // in-vocabulary ids (OOV -> UNK)
  std::vector<int> question_ext;  // extended ids
  int num_sentences = 0;
  int sentence_len = 0;            // padded width of every sentence
  std::vector<int> doc_ids;        // num_sentences x sentence_len
  std::vector<int> doc_ext;
  std::vector<std::uint8_t> doc_mask;
  std::vector<std::uint8_t> sentence_mask;  // all ones after trimming
  std::vector<int> target;         // extended ids, ends with EOS
  std::vector<int> decoder_input;  // SOS-shifted, OOV -> UNK
  std::vector<std::string> oov;

  int extended_size() const { return vocab_size + static_cast<int>(oov.size()); }
  int doc_len() const { return num_sentences * sentence_len; }
};

// Padded B x ... arrays. Masks are 1 for real tokens; every masked position
// holds PAD.
struct Batch {
  int size = 0;
  int vocab_size = 0;
  int max_question = 0;
  int max_sentences = 0;
  int max_sentence_len = 0;
  int max_target = 0;
  std::vector<std::string> ids;
  std::vector<int> question_ids;  // B x Lq
  std::vector<int> question_ext;
  std::vector<std::uint8_t> question_mask;
  std::vector<int> doc_ids;  // B x n x Ls
  std::vector<int> doc_ext;
  std::vector<std::uint8_t> doc_mask;
  std::vector<std::uint8_t> sentence_mask;  // B x n
  std::vector<int> target;                  // B x La (extended ids)
  std::vector<int> decoder_input;           // B x La
  std::vector<std::uint8_t> target_mask;
  std::vector<std::vector<std::string>> oov;

  ExampleView view(int b) const;
};

// Throws DataError naming the example when it has no sentence left after caps.
// Examples without an answer get an EOS-only target.
Batch make_batch(const std::vector<TokenizedExample>& examples, const Vocabulary& vocab, const BatchLimits& limits);

// Maps extended ids back to strings using the example's OOV list.
std::string extended_token(int id, const Vocabulary& vocab, const std::vector<std::string>& oov);

}  // namespace msg
