#include "lsr/index.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include <json.hpp>

#include "lsr/core_types.hpp"
#include "lsr/error.hpp"

namespace lsr {

bool ranks_before(const ScoredDoc& a, const ScoredDoc& b) {
  return a.score != b.score ? a.score > b.score : a.doc_id < b.doc_id;
}

namespace {

std::vector<ScoredDoc> select_top(std::vector<ScoredDoc> candidates, std::size_t k) {
  k = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k), candidates.end(),
                    ranks_before);
  candidates.resize(k);
  return candidates;
}

std::uint64_t max_impact(int bits) { return (std::uint64_t{1} << bits) - 1; }

}  // namespace

std::uint32_t quantize_impact(double weight, double max_weight, int bits) {
  if (max_weight <= 0.0) return 0;
  const double scaled = weight * static_cast<double>(max_impact(bits)) / max_weight;
  return static_cast<std::uint32_t>(std::floor(scaled + 0.5));
}

double ImpactIndex::dequantize_factor() const {
  if (quantization_.exact || max_weight_ <= 0.0) return 1.0;
  return max_weight_ / static_cast<double>(max_impact(quantization_.bits));
}

std::span<const Posting> ImpactIndex::postings(TermId term) const {
  if (term >= postings_.size()) return {};
  return postings_[term];
}

std::size_t ImpactIndex::total_postings() const {
  std::size_t n = 0;
  for (const auto& list : postings_) n += list.size();
  return n;
}

std::size_t ImpactIndex::bytes_estimate() const {
  std::size_t bytes = total_postings() * sizeof(Posting) + postings_.size() * sizeof(std::vector<Posting>);
  for (const auto& id : doc_table_) bytes += id.size() + sizeof(std::string);
  return bytes;
}

ImpactIndex build_index(std::span<const DocVector> docs, std::size_t vocab_size, Quantization quantization) {
  if (!quantization.exact && (quantization.bits < 1 || quantization.bits > 16)) {
    throw ValidationError("quantization bits must be in [1, 16]");
  }
  ImpactIndex index;
  index.quantization_ = quantization;
  index.postings_.resize(vocab_size);
  std::unordered_set<std::string> seen;
  for (const auto& doc : docs) {
    if (!seen.insert(doc.id).second) throw ValidationError("duplicate doc id '" + doc.id + "' in index input");
    validate_vector(doc.vector, vocab_size);
    for (const auto& [t, w] : doc.vector.entries()) {
      if (!(w > 0.0)) throw ValidationError("non-positive weight in '" + doc.id + "'");
      index.max_weight_ = std::max(index.max_weight_, w);
    }
  }
  for (const auto& doc : docs) {
    const auto ord = static_cast<DocOrdinal>(index.doc_table_.size());
    index.doc_table_.push_back(doc.id);
    for (const auto& [t, w] : doc.vector.entries()) {
      if (quantization.exact) {
        index.postings_[t].push_back({ord, w});
      } else if (auto q = quantize_impact(w, index.max_weight_, quantization.bits); q > 0) {
        index.postings_[t].push_back({ord, static_cast<double>(q)});
      }
    }
  }
  return index;
}

SearchResult index_search(const ImpactIndex& index, const SparseVector& query, std::size_t k) {
  validate_vector(query, index.vocab_size());
  SearchResult out;
  std::vector<double> acc(index.num_docs(), 0.0);
  std::vector<DocOrdinal> touched;
  for (const auto& [t, wq] : query.entries()) {
    const auto list = index.postings(t);
    out.ops_count += list.size();
    for (const auto& p : list) {
      if (acc[p.doc] == 0.0) touched.push_back(p.doc);
      acc[p.doc] += wq * p.impact;
    }
  }
  if (k == 0) return out;
  std::vector<ScoredDoc> candidates;
  candidates.reserve(touched.size());
  for (DocOrdinal d : touched) {
    if (acc[d] > 0.0) candidates.push_back({index.doc_id(d), acc[d]});
  }
  out.ranking = select_top(std::move(candidates), k);
  return out;
}

std::vector<ScoredDoc> exhaustive_search(const SparseVector& query, std::span<const DocVector> docs, std::size_t k) {
  std::vector<ScoredDoc> candidates;
  for (const auto& doc : docs) {
    const double s = dot(query, doc.vector);
    if (s > 0.0) candidates.push_back({doc.id, s});
  }
  return select_top(std::move(candidates), k);
}

// On-disk format ---------------------------------------------------------------
//
// header.json  {"format", "version", "vocab_size", "num_docs", "total_postings",
//               "quantization": {"mode": "exact"|"bits", "bits"}, "max_weight",
//               "doc_table": [ids by ordinal]}
// postings.bin "LSRP" | u32le version | varint list_count |
//              per nonempty list: varint term, varint length,
//                                 length x varint doc gap (first gap is the ordinal),
//                                 length x impact (varint when quantized, f64le when exact)

namespace {

constexpr char kMagic[4] = {'L', 'S', 'R', 'P'};
constexpr std::uint32_t kVersion = 1;

void put_varint(std::string& out, std::uint64_t v) {
  while (v >= 0x80) {
    out.push_back(static_cast<char>((v & 0x7f) | 0x80));
    v >>= 7;
  }
  out.push_back(static_cast<char>(v));
}

void put_u64le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::uint64_t varint() {
    std::uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      const auto byte = static_cast<unsigned char>(next());
      v |= static_cast<std::uint64_t>(byte & 0x7f) << shift;
      if (!(byte & 0x80)) return v;
    }
    throw ValidationError("postings file: varint too long");
  }

  std::uint64_t u64le() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(next())) << (8 * i);
    return v;
  }

  std::uint32_t u32le() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(next())) << (8 * i);
    return v;
  }

  char next() {
    if (pos_ >= data_.size()) throw ValidationError("postings file truncated");
    return data_[pos_++];
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace

void ImpactIndex::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json header;
  header["format"] = "lsr-impact-index";
  header["version"] = kVersion;
  header["vocab_size"] = vocab_size();
  header["num_docs"] = num_docs();
  header["total_postings"] = total_postings();
  header["quantization"] = {{"mode", quantization_.exact ? "exact" : "bits"}, {"bits", quantization_.bits}};
  header["max_weight"] = max_weight_;
  header["doc_table"] = doc_table_;

  std::string bin(kMagic, sizeof kMagic);
  for (int i = 0; i < 4; ++i) bin.push_back(static_cast<char>((kVersion >> (8 * i)) & 0xff));
  std::size_t lists = 0;
  for (const auto& l : postings_) lists += l.empty() ? 0 : 1;
  put_varint(bin, lists);
  for (std::size_t t = 0; t < postings_.size(); ++t) {
    const auto& list = postings_[t];
    if (list.empty()) continue;
    put_varint(bin, t);
    put_varint(bin, list.size());
    DocOrdinal prev = 0;
    for (const auto& p : list) {
      put_varint(bin, p.doc - prev);
      prev = p.doc;
    }
    for (const auto& p : list) {
      if (quantization_.exact) {
        put_u64le(bin, std::bit_cast<std::uint64_t>(p.impact));
      } else {
        put_varint(bin, static_cast<std::uint64_t>(p.impact));
      }
    }
  }
  write_file_atomic(dir / "postings.bin", bin);
  write_file_atomic(dir / "header.json", header.dump(2) + "\n");
}

ImpactIndex ImpactIndex::load(const std::filesystem::path& dir) {
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(read_file(dir / "header.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("index header: " + std::string(e.what()));
  }
  ImpactIndex index;
  try {
    if (header.at("format") != "lsr-impact-index" || header.at("version") != kVersion) {
      throw ValidationError("index header: unsupported format or version");
    }
    index.postings_.resize(header.at("vocab_size").get<std::size_t>());
    index.doc_table_ = header.at("doc_table").get<std::vector<std::string>>();
    const auto& q = header.at("quantization");
    index.quantization_.exact = q.at("mode") == "exact";
    index.quantization_.bits = q.at("bits").get<int>();
    index.max_weight_ = header.at("max_weight").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("index header: " + std::string(e.what()));
  }

  const std::string bin = read_file(dir / "postings.bin");
  Reader r(bin);
  for (char c : kMagic) {
    if (r.next() != c) throw ValidationError("postings file: bad magic");
  }
  if (r.u32le() != kVersion) throw ValidationError("postings file: unsupported version");
  const std::uint64_t lists = r.varint();
  const std::uint64_t limit = index.quantization_.exact ? 0 : max_impact(index.quantization_.bits);
  for (std::uint64_t l = 0; l < lists; ++l) {
    const std::uint64_t term = r.varint();
    if (term >= index.postings_.size()) throw ValidationError("postings file: term id out of range");
    const std::uint64_t len = r.varint();
    auto& list = index.postings_[term];
    list.resize(len);
    std::uint64_t doc = 0;
    for (std::uint64_t i = 0; i < len; ++i) {
      const std::uint64_t gap = r.varint();
      if (i > 0 && gap == 0) throw ValidationError("postings file: doc ordinals not strictly increasing");
      doc += gap;
      if (doc >= index.doc_table_.size()) throw ValidationError("postings file: doc ordinal out of range");
      list[i].doc = static_cast<DocOrdinal>(doc);
    }
    for (std::uint64_t i = 0; i < len; ++i) {
      if (index.quantization_.exact) {
        list[i].impact = std::bit_cast<double>(r.u64le());
      } else {
        const std::uint64_t v = r.varint();
        if (v == 0 || v > limit) throw ValidationError("postings file: impact outside declared bit width");
        list[i].impact = static_cast<double>(v);
      }
      if (!(list[i].impact > 0.0)) throw ValidationError("postings file: non-positive impact");
    }
  }
  if (!r.done()) throw ValidationError("postings file: trailing bytes");
  return index;
}

}  // namespace lsr
