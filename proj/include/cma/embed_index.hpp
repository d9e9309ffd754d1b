#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cma/clsm.hpp"
#include "cma/corpus.hpp"
#include "cma/sha256.hpp"

namespace cma {

inline constexpr std::uint32_t kIndexFormatVersion = 1;

/// Model plus its cached fingerprint.
class FingerprintedModel {
 public:
  explicit FingerprintedModel(ClsmModel m) : model_(std::move(m)), fingerprint_(model_fingerprint(model_)) {}
  const ClsmModel& model() const { return model_; }
  const Digest& fingerprint() const { return fingerprint_; }

 private:
  ClsmModel model_;
  Digest fingerprint_;
};

/// Precomputed ad-title embeddings. Immutable once built or loaded.
class EmbeddingIndex {
 public:
  EmbeddingIndex(Digest fingerprint, std::uint32_t dim, std::vector<std::string> ids, std::vector<float> matrix,
                 std::vector<float> norms)
      : fingerprint_(fingerprint), dim_(dim), ids_(std::move(ids)), matrix_(std::move(matrix)), norms_(std::move(norms)) {
    if (matrix_.size() != ids_.size() * dim_ || norms_.size() != ids_.size())
      throw DataError("index matrix does not match its id table");
    for (std::size_t i = 0; i < ids_.size(); ++i)
      if (!pos_.emplace(ids_[i], i).second) throw DataError("duplicate id in index: " + ids_[i]);
  }

  const Digest& fingerprint() const { return fingerprint_; }
  std::uint32_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  std::span<const float> row(std::size_t i) const { return {matrix_.data() + i * dim_, dim_}; }
  float norm(std::size_t i) const { return norms_[i]; }
  std::optional<std::size_t> find(const std::string& id) const {
    auto it = pos_.find(id);
    if (it == pos_.end()) return std::nullopt;
    return it->second;
  }

  friend bool operator==(const EmbeddingIndex& a, const EmbeddingIndex& b) {
    return a.fingerprint_ == b.fingerprint_ && a.dim_ == b.dim_ && a.ids_ == b.ids_ && a.matrix_ == b.matrix_ &&
           a.norms_ == b.norms_;
  }

 private:
  Digest fingerprint_;
  std::uint32_t dim_;
  std::vector<std::string> ids_;
  std::vector<float> matrix_;
  std::vector<float> norms_;
  std::unordered_map<std::string, std::size_t> pos_;
};

struct IndexBuild {
  EmbeddingIndex index;
  std::vector<std::string> warnings;
};

inline IndexBuild build_index(const FingerprintedModel& fm, const std::vector<Document>& ads) {
  const auto& m = fm.model();
  const std::size_t L = m.dim();
  std::vector<std::string> ids, warnings;
  std::vector<float> matrix, norms;
  for (const auto& ad : ads) {
    if (ad.title.empty()) {
      warnings.push_back("skipped " + ad.id + ": empty title");
      continue;
    }
    const auto e = embed(m, ad.title);
    double nn = 0;
    for (std::size_t l = 0; l < L; ++l) {
      const float v = static_cast<float>(e.y[l]);
      matrix.push_back(v);
      nn += static_cast<double>(v) * v;
    }
    norms.push_back(static_cast<float>(std::sqrt(nn)));
    ids.push_back(ad.id);
  }
  return {EmbeddingIndex(fm.fingerprint(), static_cast<std::uint32_t>(L), std::move(ids), std::move(matrix),
                         std::move(norms)),
          std::move(warnings)};
}

inline std::string serialize_index(const EmbeddingIndex& ix) {
  std::string out = "CMAX";
  detail::put_u32(out, kIndexFormatVersion);
  detail::put_u32(out, ix.dim());
  detail::put_u64(out, ix.size());
  out.append(reinterpret_cast<const char*>(ix.fingerprint().data()), ix.fingerprint().size());
  for (const auto& id : ix.ids()) {
    detail::put_u32(out, static_cast<std::uint32_t>(id.size()));
    out += id;
  }
  for (std::size_t i = 0; i < ix.size(); ++i)
    for (float v : ix.row(i)) detail::put_f32(out, v);
  for (std::size_t i = 0; i < ix.size(); ++i) detail::put_f32(out, ix.norm(i));
  return out;
}

inline EmbeddingIndex parse_index(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (r.bytes(4) != "CMAX") throw DataError("not an embedding index (bad magic)");
  if (r.u32() != kIndexFormatVersion) throw DataError("unsupported index version");
  const std::uint32_t dim = r.u32();
  const std::uint64_t rows = r.u64();
  if (dim == 0 || dim > 65536) throw DataError("index has invalid dimension");
  Digest fp{};
  const auto fpb = r.bytes(fp.size());
  std::memcpy(fp.data(), fpb.data(), fp.size());
  if (rows > bytes.size()) throw DataError("truncated binary file");
  // Each row needs at least 4 id-length bytes plus its vector and norm.
  r.need(rows * (4 + 4 * (static_cast<std::uint64_t>(dim) + 1)));
  std::vector<std::string> ids(rows);
  for (auto& id : ids) id = std::string(r.bytes(r.u32()));
  std::vector<float> matrix(rows * dim), norms(rows);
  for (auto& v : matrix) v = r.f32();
  for (auto& v : norms) v = r.f32();
  if (!r.done()) throw DataError("trailing bytes after index");
  return EmbeddingIndex(fp, dim, std::move(ids), std::move(matrix), std::move(norms));
}

struct CandidateScore {
  std::string ad_id;
  double score = 0;
  std::string error;  // nonempty when the id could not be scored
  bool ok() const { return error.empty(); }
};

/// Cosine of the query against stored rows. The query is embedded once;
/// ad text is never read.
inline std::vector<CandidateScore> score_candidates(const EmbeddingIndex& ix, const FingerprintedModel& fm,
                                                    const Tokens& query, const std::vector<std::string>& candidates) {
  if (fm.fingerprint() != ix.fingerprint()) throw DataError("index was built by a different model");
  if (fm.model().dim() != ix.dim()) throw DataError("index dimension does not match model");
  std::vector<CandidateScore> out;
  if (candidates.empty()) return out;
  const auto q = embed(fm.model(), query);
  double qn = 0;
  for (double v : q.y) qn += v * v;
  qn = std::sqrt(qn);
  out.reserve(candidates.size());
  for (const auto& id : candidates) {
    CandidateScore c{id, 0.0, {}};
    if (auto pos = ix.find(id)) {
      const auto row = ix.row(*pos);
      double dot = 0;
      for (std::size_t l = 0; l < row.size(); ++l) dot += q.y[l] * static_cast<double>(row[l]);
      const double rn = ix.norm(*pos);
      c.score = (qn == 0 || rn == 0) ? 0.0 : std::clamp(dot / (qn * rn), -1.0, 1.0);
    } else {
      c.error = "unknown ad id";
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace cma
