#include "annostudy/corpus.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_set>

#include "annostudy/error.hpp"
#include "annostudy/rng.hpp"
#include "annostudy/text.hpp"

namespace annostudy {

using nlohmann::json;

Document Document::make(std::string id, std::string text, std::optional<Timestamp> created_at) {
  Document d;
  d.char_len = text::scalar_count(text);
  d.id = std::move(id);
  d.text = std::move(text);
  d.created_at = created_at;
  return d;
}

Corpus::Corpus(std::vector<Document> docs) : docs_(std::move(docs)) {
  index_.reserve(docs_.size());
  for (std::size_t i = 0; i < docs_.size(); ++i) {
    if (!index_.emplace(docs_[i].id, i).second) {
      throw InvalidArgument("duplicate document id '" + docs_[i].id + "'");
    }
  }
}

const Document* Corpus::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &docs_[it->second];
}

CorpusFormat corpus_format_from_path(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".tsv" || ext == ".tab") return CorpusFormat::tsv;
  return CorpusFormat::jsonl;
}

namespace {

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open '" + path.string() + "'");
  return in;
}

std::string tsv_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\\': out += "\\\\"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string tsv_unescape(std::string_view s, std::size_t line) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out.push_back(s[i]);
      continue;
    }
    if (++i == s.size()) throw ParseError(line, "dangling backslash escape");
    switch (s[i]) {
      case 't': out.push_back('\t'); break;
      case 'n': out.push_back('\n'); break;
      case 'r': out.push_back('\r'); break;
      case '\\': out.push_back('\\'); break;
      default: throw ParseError(line, std::string("unknown escape \\") + s[i]);
    }
  }
  return out;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return fields;
}

Document document_from_json(const json& rec, std::size_t line) {
  if (!rec.is_object()) throw ParseError(line, "record is not a JSON object");
  auto id = rec.find("id");
  if (id == rec.end() || !id->is_string()) throw ParseError(line, "missing string field \"id\"");
  auto txt = rec.find("text");
  if (txt == rec.end() || !txt->is_string()) throw ParseError(line, "missing string field \"text\"");
  std::optional<Timestamp> created;
  if (auto c = rec.find("created_at"); c != rec.end() && !c->is_null()) {
    if (!c->is_string()) throw ParseError(line, "\"created_at\" must be an RFC 3339 string");
    try {
      created = parse_rfc3339(c->get<std::string>());
    } catch (const ParseError& e) {
      throw ParseError(line, e.what());
    }
  }
  try {
    return Document::make(id->get<std::string>(), txt->get<std::string>(), created);
  } catch (const InvalidArgument& e) {
    throw ParseError(line, e.what());
  }
}

json document_to_json(const Document& d) {
  json j = {{"id", d.id}, {"text", d.text}};
  if (d.created_at) j["created_at"] = format_rfc3339(*d.created_at);
  return j;
}

// Calls fn(line_number, parsed_json) for each non-blank JSONL line.
template <typename Fn>
void for_each_jsonl(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(n, std::string("invalid JSON: ") + e.what());
    }
    fn(n, rec);
  }
}

void push_unique(std::vector<Document>& docs, std::unordered_set<std::string>& seen, Document d,
                 std::size_t line) {
  if (!seen.insert(d.id).second) throw ParseError(line, "duplicate id '" + d.id + "'");
  docs.push_back(std::move(d));
}

}  // namespace

Corpus read_corpus(std::istream& in, CorpusFormat format) {
  std::vector<Document> docs;
  std::unordered_set<std::string> seen;
  if (format == CorpusFormat::jsonl) {
    for_each_jsonl(in, [&](std::size_t n, const json& rec) {
      push_unique(docs, seen, document_from_json(rec, n), n);
    });
    return Corpus(std::move(docs));
  }

  std::string line;
  std::size_t n = 0;
  if (!std::getline(in, line)) throw ParseError(1, "missing TSV header");
  ++n;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_tabs(line);
  if (header.size() < 2 || header[0] != "id" || header[1] != "text" ||
      (header.size() == 3 && header[2] != "created_at") || header.size() > 3) {
    throw ParseError(1, "TSV header must be id<TAB>text<TAB>created_at");
  }
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() < 2 || fields.size() > header.size()) {
      throw ParseError(n, "expected " + std::to_string(header.size()) + " tab-separated fields");
    }
    std::optional<Timestamp> created;
    if (fields.size() == 3 && !fields[2].empty()) {
      try {
        created = parse_rfc3339(fields[2]);
      } catch (const ParseError& e) {
        throw ParseError(n, e.what());
      }
    }
    if (fields[0].empty()) throw ParseError(n, "empty id");
    Document d;
    try {
      d = Document::make(tsv_unescape(fields[0], n), tsv_unescape(fields[1], n), created);
    } catch (const InvalidArgument& e) {
      throw ParseError(n, e.what());
    }
    push_unique(docs, seen, std::move(d), n);
  }
  return Corpus(std::move(docs));
}

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format) {
  auto in = open_input(path);
  return read_corpus(in, format);
}

void write_corpus(std::ostream& out, const Corpus& corpus, CorpusFormat format) {
  if (format == CorpusFormat::jsonl) {
    for (const auto& d : corpus) out << document_to_json(d).dump() << '\n';
    return;
  }
  out << "id\ttext\tcreated_at\n";
  for (const auto& d : corpus) {
    out << tsv_escape(d.id) << '\t' << tsv_escape(d.text) << '\t'
        << (d.created_at ? format_rfc3339(*d.created_at) : std::string()) << '\n';
  }
}

std::vector<LabeledDocument> read_labeled(std::istream& in) {
  std::vector<LabeledDocument> out;
  std::unordered_set<std::string> seen;
  for_each_jsonl(in, [&](std::size_t n, const json& rec) {
    Document d = document_from_json(rec, n);
    auto lab = rec.find("label");
    if (lab == rec.end() || !lab->is_string()) throw ParseError(n, "missing string field \"label\"");
    auto label = parse_label(lab->get<std::string>());
    if (!label) throw ParseError(n, "unknown label '" + lab->get<std::string>() + "'");
    if (!seen.insert(d.id).second) throw ParseError(n, "duplicate id '" + d.id + "'");
    out.push_back({std::move(d), *label});
  });
  return out;
}

std::vector<LabeledDocument> load_labeled(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_labeled(in);
}

void write_labeled(std::ostream& out, std::span<const LabeledDocument> data) {
  for (const auto& ld : data) {
    json j = document_to_json(ld.doc);
    j["label"] = ld.label;
    out << j.dump() << '\n';
  }
}

std::vector<std::string> default_filter_keywords() {
  return {"stayhomesavelifes", "wirbleibenzuhause", "bleibdaheim",     "abstandhalten",
          "flatthecurve",      "flattenthecurve",   "sperre",          "verbot",
          "beschraenkung",     "quarantäne",        "quarantaene",     "wirvsvirus",
          "schließung",        "homeoffice",        "infektionsschutz", "ansteckungsrisiko",
          "notbetrieb",        "bleibtzuhause",     "stayhome"};
}

void FilterConfig::validate() const {
  if (keyword_filter && keywords.empty()) {
    throw InvalidArgument("keyword filtering is enabled but no keywords are configured");
  }
  for (const auto& k : keywords) {
    if (k.empty()) throw InvalidArgument("empty filter keyword");
    if (!text::is_valid_utf8(k)) throw InvalidArgument("filter keyword is not valid UTF-8");
  }
}

void to_json(json& j, const FilterReport& r) {
  j = {{"input", r.input},
       {"output", r.output},
       {"dropped",
        {{"retweet", r.dropped_retweet},
         {"no_keyword", r.dropped_no_keyword},
         {"too_short", r.dropped_too_short},
         {"duplicate", r.dropped_duplicate}}}};
}

std::string dedup_key(std::string_view t) { return std::string(text::trim(text::nfc(t))); }

bool is_retweet(std::string_view t) { return text::trim(t).starts_with("RT @"); }

FilterResult filter_corpus(const Corpus& corpus, const FilterConfig& cfg) {
  cfg.validate();
  std::vector<std::string> needles;
  if (cfg.keyword_filter) {
    needles.reserve(cfg.keywords.size());
    for (const auto& k : cfg.keywords) needles.push_back(text::to_lower(text::nfc(k)));
  }

  FilterReport report;
  report.input = corpus.size();
  std::vector<Document> kept;
  std::unordered_set<std::string> seen_texts;
  for (const auto& d : corpus) {
    if (cfg.drop_retweets && is_retweet(d.text)) {
      ++report.dropped_retweet;
      continue;
    }
    const std::string normalized = text::nfc(d.text);
    if (cfg.keyword_filter) {
      const std::string folded = text::to_lower(normalized);
      bool hit = false;
      for (const auto& k : needles) {
        if (folded.find(k) != std::string::npos) {
          hit = true;
          break;
        }
      }
      if (!hit) {
        ++report.dropped_no_keyword;
        continue;
      }
    }
    if (d.char_len < cfg.min_length) {
      ++report.dropped_too_short;
      continue;
    }
    if (cfg.drop_duplicates && !seen_texts.insert(std::string(text::trim(normalized))).second) {
      ++report.dropped_duplicate;
      continue;
    }
    kept.push_back(d);
  }
  report.output = kept.size();
  return {Corpus(std::move(kept)), report};
}

Corpus sample_uniform(const Corpus& corpus, std::size_t n, std::uint64_t seed) {
  if (n > corpus.size()) {
    throw InvalidArgument("cannot sample " + std::to_string(n) + " documents from a corpus of " +
                          std::to_string(corpus.size()));
  }
  std::vector<std::size_t> idx(corpus.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  // Partial Fisher-Yates: the first n slots are a uniform n-permutation.
  std::vector<Document> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t j = i + rng.uniform_index(idx.size() - i);
    std::swap(idx[i], idx[j]);
    out.push_back(corpus[idx[i]]);
  }
  return Corpus(std::move(out));
}

}  // namespace annostudy
