#include "lsr/core_types.hpp"

#include <fstream>
#include <sstream>
#include <unordered_set>

namespace lsr {

TermId Vocabulary::add(std::string_view term) {
  if (auto found = find(term)) return *found;
  const auto id = static_cast<TermId>(terms_.size());
  terms_.emplace_back(term);
  term_to_id_.emplace(terms_.back(), id);
  return id;
}

std::optional<TermId> Vocabulary::find(std::string_view term) const {
  auto it = term_to_id_.find(std::string(term));
  if (it == term_to_id_.end()) return std::nullopt;
  return it->second;
}

TermId Vocabulary::id(std::string_view term) const {
  if (auto found = find(term)) return *found;
  throw ValidationError("term not in vocabulary: '" + std::string(term) + "'");
}

Vocabulary build_vocabulary(std::span<const std::string> tokens) {
  Vocabulary vocab;
  for (const auto& t : tokens) vocab.add(t);
  return vocab;
}

CorpusStats compute_corpus_stats(std::span<const TokenizedText> docs) {
  CorpusStats stats;
  stats.num_docs = docs.size();
  std::size_t total_len = 0;
  std::vector<TermId> seen;
  for (const auto& doc : docs) {
    total_len += doc.length();
    seen.assign(doc.token_ids.begin(), doc.token_ids.end());
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    for (TermId t : seen) {
      if (t >= stats.doc_freq.size()) stats.doc_freq.resize(t + std::size_t{1}, 0);
      ++stats.doc_freq[t];
    }
  }
  if (stats.num_docs > 0) {
    stats.avg_doc_len = static_cast<double>(total_len) / static_cast<double>(stats.num_docs);
  }
  stats.degenerate = !(stats.avg_doc_len > 0.0);
  return stats;
}

void validate_text(const TokenizedText& text, std::size_t vocab_size) {
  for (TermId t : text.token_ids) {
    if (t >= vocab_size) {
      throw ValidationError("token id " + std::to_string(t) + " in '" + text.doc_id +
                            "' is outside the vocabulary (|V|=" + std::to_string(vocab_size) + ")");
    }
  }
}

void validate_vector(const SparseVector& v, std::size_t vocab_size) {
  if (v.extent() > vocab_size) {
    throw ValidationError("sparse vector term id " + std::to_string(v.extent() - 1) +
                          " is outside the vocabulary (|V|=" + std::to_string(vocab_size) + ")");
  }
}

namespace {

std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\r') ++i;
    if (i > start) out.emplace_back(s.substr(start, i - start));
  }
  return out;
}

}  // namespace

std::vector<RawRecord> read_tsv_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<RawRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    RawRecord rec;
    rec.id = line.substr(0, tab);
    if (rec.id.empty()) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": empty record id");
    }
    if (tab != std::string::npos) rec.tokens = split_whitespace(std::string_view(line).substr(tab + 1));
    records.push_back(std::move(rec));
  }
  return records;
}

void write_tsv_records(const std::filesystem::path& path, std::span<const RawRecord> records) {
  std::ostringstream out;
  for (const auto& rec : records) {
    out << rec.id << '\t';
    for (std::size_t i = 0; i < rec.tokens.size(); ++i) out << (i ? " " : "") << rec.tokens[i];
    out << '\n';
  }
  write_file_atomic(path, out.str());
}

TokenizedText tokenize(const RawRecord& record, const Vocabulary& vocab) {
  TokenizedText text{record.id, {}};
  text.token_ids.reserve(record.tokens.size());
  for (const auto& tok : record.tokens) text.token_ids.push_back(vocab.id(tok));
  return text;
}

std::vector<TokenizedText> read_collection(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::vector<TokenizedText> docs;
  for (const auto& rec : read_tsv_records(path)) docs.push_back(tokenize(rec, vocab));
  return docs;
}

Vocabulary read_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Vocabulary vocab;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || vocab.find(line)) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                            ": vocabulary terms must be non-empty and unique");
    }
    vocab.add(line);
  }
  return vocab;
}

void write_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::string out;
  for (const auto& t : vocab.terms()) {
    out += t;
    out += '\n';
  }
  write_file_atomic(path, out);
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace lsr
