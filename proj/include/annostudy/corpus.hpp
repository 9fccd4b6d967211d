#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "annostudy/label.hpp"
#include "annostudy/time.hpp"
#include "json.hpp"

namespace annostudy {

struct Document {
  std::string id;
  std::string text;
  std::optional<Timestamp> created_at;
  std::size_t char_len = 0;  // Unicode scalar values in `text`

  // Computes char_len; throws InvalidArgument on malformed UTF-8.
  static Document make(std::string id, std::string text,
                       std::optional<Timestamp> created_at = std::nullopt);
};

struct LabeledDocument {
  Document doc;
  Label label;
};

// Ordered, id-unique document collection. Immutable once built.
class Corpus {
 public:
  Corpus() = default;
  // Throws InvalidArgument naming the first duplicated id.
  explicit Corpus(std::vector<Document> docs);

  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }
  const Document& operator[](std::size_t i) const { return docs_[i]; }
  std::span<const Document> documents() const { return docs_; }
  auto begin() const { return docs_.begin(); }
  auto end() const { return docs_.end(); }

  const Document* find(std::string_view id) const;
  bool contains(std::string_view id) const { return find(id) != nullptr; }

 private:
  std::vector<Document> docs_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class CorpusFormat { jsonl, tsv };

CorpusFormat corpus_format_from_path(const std::filesystem::path& p);

// JSONL: {"id": str, "text": str, "created_at"?: RFC 3339}. TSV: header
// `id<TAB>text<TAB>created_at`; fields escape \t, \n, \r and \\ with a
// backslash. Errors are ParseError carrying the 1-based line number.
Corpus read_corpus(std::istream& in, CorpusFormat format);
Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format);
void write_corpus(std::ostream& out, const Corpus& corpus, CorpusFormat format);

// Labeled JSONL: corpus record plus "label" (category name).
std::vector<LabeledDocument> read_labeled(std::istream& in);
std::vector<LabeledDocument> load_labeled(const std::filesystem::path& path);
void write_labeled(std::ostream& out, std::span<const LabeledDocument> data);

// Crawl filter term list used for the Covid-19 measures corpus.
std::vector<std::string> default_filter_keywords();

struct FilterConfig {
  std::vector<std::string> keywords = default_filter_keywords();
  bool keyword_filter = true;
  std::size_t min_length = 30;
  bool drop_duplicates = true;
  bool drop_retweets = true;

  void validate() const;
};

// Each dropped document is attributed to the first rule it fails, checked
// in the order retweet, keyword, length, duplicate.
struct FilterReport {
  std::size_t input = 0;
  std::size_t output = 0;
  std::size_t dropped_retweet = 0;
  std::size_t dropped_no_keyword = 0;
  std::size_t dropped_too_short = 0;
  std::size_t dropped_duplicate = 0;

  std::size_t dropped_total() const {
    return dropped_retweet + dropped_no_keyword + dropped_too_short + dropped_duplicate;
  }
};

void to_json(nlohmann::json& j, const FilterReport& r);

struct FilterResult {
  Corpus corpus;
  FilterReport report;
};

FilterResult filter_corpus(const Corpus& corpus, const FilterConfig& cfg);

// `n` distinct documents in sampled order. Throws InvalidArgument if n > |c|.
Corpus sample_uniform(const Corpus& corpus, std::size_t n, std::uint64_t seed);

// Normalised text used for duplicate detection: NFC, then trimmed.
std::string dedup_key(std::string_view text);
bool is_retweet(std::string_view text);

}  // namespace annostudy
