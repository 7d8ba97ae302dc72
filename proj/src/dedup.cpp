#include "dmr/dedup.hpp"

#include <algorithm>
#include <limits>
#include <unordered_map>
#include <unordered_set>

#include "dmr/error.hpp"
#include "dmr/parallel.hpp"
#include "dmr/text.hpp"

namespace dmr {

nlohmann::json to_json(const DedupRemoval& r) {
  return {{"removed_id", r.removed_id}, {"kept_id", r.kept_id}, {"reason", r.reason}};
}

ExactKey parse_exact_key(std::string_view name) {
  if (name == "url") return ExactKey::url;
  if (name == "text_hash" || name == "text") return ExactKey::text_hash;
  fail(ErrorKind::usage, "unknown exact-dedup key '" + std::string(name) + "'");
}

namespace {

DedupResult assemble(const Corpus& corpus, const std::vector<bool>& removed,
                     std::vector<DedupRemoval> removals) {
  std::vector<Passage> kept;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (!removed[i]) kept.push_back(corpus[i]);
  return DedupResult{Corpus(std::move(kept)), std::move(removals)};
}

}  // namespace

DedupResult dedup_exact(const Corpus& corpus, ExactKey key) {
  if (corpus.empty()) fail(ErrorKind::empty_input, "dedup of an empty corpus");
  std::unordered_map<std::string, std::size_t> first;
  std::vector<bool> removed(corpus.size(), false);
  std::vector<DedupRemoval> removals;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& p = corpus[i];
    if (key == ExactKey::url && p.url.empty()) continue;
    const std::string& k = key == ExactKey::url ? p.url : p.text;
    auto [it, inserted] = first.emplace(k, i);
    if (!inserted) {
      removed[i] = true;
      removals.push_back({p.id, corpus[it->second].id, key == ExactKey::url ? "exact_url" : "exact_text"});
    }
  }
  return assemble(corpus, removed, std::move(removals));
}

std::vector<std::uint64_t> shingle_hashes(std::string_view text, std::size_t k) {
  const auto tokens = tokenize(text);
  std::vector<std::uint64_t> out;
  if (tokens.empty()) return out;
  const std::size_t width = std::min(k, tokens.size());
  std::string shingle;
  for (std::size_t i = 0; i + width <= tokens.size(); ++i) {
    shingle.clear();
    for (std::size_t j = 0; j < width; ++j) {
      if (j) shingle.push_back('\x1f');
      shingle += tokens[i + j];
    }
    out.push_back(fnv1a64(shingle));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

double shingle_jaccard(std::string_view a, std::string_view b, std::size_t k) {
  const auto sa = shingle_hashes(a, k);
  const auto sb = shingle_hashes(b, k);
  if (sa.empty() && sb.empty()) return 1.0;
  std::vector<std::uint64_t> common;
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(common));
  const double inter = static_cast<double>(common.size());
  return inter / (static_cast<double>(sa.size() + sb.size()) - inter);
}

std::vector<std::uint64_t> minhash_signature(const std::vector<std::uint64_t>& shingles,
                                             std::size_t length, std::uint64_t seed) {
  std::vector<std::uint64_t> sig(length, std::numeric_limits<std::uint64_t>::max());
  for (std::size_t f = 0; f < length; ++f) {
    const std::uint64_t salt = mix64(seed * 0x632be59bd9b4e019ULL + f + 1);
    for (auto s : shingles) sig[f] = std::min(sig[f], mix64(s ^ salt));
  }
  return sig;
}

double estimated_jaccard(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
  if (a.size() != b.size() || a.empty()) fail(ErrorKind::config, "signature length mismatch");
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
  return static_cast<double>(same) / static_cast<double>(a.size());
}

DedupResult dedup_near_lsh(const Corpus& corpus, const LshConfig& cfg) {
  if (cfg.bands == 0 || cfg.rows == 0 || cfg.bands * cfg.rows != cfg.signature_length)
    fail(ErrorKind::config, "bands x rows must equal the MinHash signature length");
  if (!(cfg.jaccard_threshold > 0.0 && cfg.jaccard_threshold <= 1.0))
    fail(ErrorKind::config, "jaccard_threshold must be in (0, 1]");
  if (corpus.empty()) fail(ErrorKind::empty_input, "dedup of an empty corpus");

  std::vector<std::vector<std::uint64_t>> sigs(corpus.size());
  parallel_for(corpus.size(), [&](std::size_t i) {
    sigs[i] = minhash_signature(shingle_hashes(corpus[i].text, cfg.shingle_size),
                                cfg.signature_length, cfg.seed);
  });

  auto band_key = [&](std::size_t doc, std::size_t band) {
    std::uint64_t h = mix64(band);
    for (std::size_t r = 0; r < cfg.rows; ++r) h = mix64(h ^ sigs[doc][band * cfg.rows + r]);
    return h;
  };

  std::vector<std::unordered_map<std::uint64_t, std::vector<std::size_t>>> buckets(cfg.bands);
  std::vector<bool> removed(corpus.size(), false);
  std::vector<DedupRemoval> removals;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    std::vector<std::uint64_t> keys(cfg.bands);
    std::vector<std::size_t> candidates;
    for (std::size_t b = 0; b < cfg.bands; ++b) {
      keys[b] = band_key(i, b);
      if (auto it = buckets[b].find(keys[b]); it != buckets[b].end())
        candidates.insert(candidates.end(), it->second.begin(), it->second.end());
    }
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    for (std::size_t c : candidates) {
      if (estimated_jaccard(sigs[i], sigs[c]) >= cfg.jaccard_threshold) {
        removed[i] = true;
        removals.push_back({corpus[i].id, corpus[c].id, "near_lsh"});
        break;
      }
    }
    if (removed[i]) continue;
    for (std::size_t b = 0; b < cfg.bands; ++b) buckets[b][keys[b]].push_back(i);
  }
  return assemble(corpus, removed, std::move(removals));
}

DedupResult dedup_near_embedding(const Corpus& corpus, const Embedder& embedder,
                                 double cosine_threshold) {
  if (corpus.empty()) fail(ErrorKind::empty_input, "dedup of an empty corpus");
  std::vector<DenseVector> vecs(corpus.size());
  parallel_for(corpus.size(), [&](std::size_t i) { vecs[i] = embedder.embed_passage(corpus[i]); });
  const auto dim = vecs.front().size();
  for (std::size_t i = 0; i < vecs.size(); ++i) {
    if (vecs[i].size() != dim)
      fail(ErrorKind::embedding, "embedding dim mismatch at passage '" + corpus[i].id + "'");
    const double n = vecs[i].norm();
    if (n > 0.0) vecs[i] /= n;
  }

  std::vector<std::size_t> kept;
  std::vector<bool> removed(corpus.size(), false);
  std::vector<DedupRemoval> removals;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    // Earliest survivor above threshold; the scan over survivors is split in
    // fixed chunks and reduced by minimum index, so lanes never change it.
    const std::size_t none = std::numeric_limits<std::size_t>::max();
    const std::size_t chunks = std::max<std::size_t>(1, std::min<std::size_t>(kept.size(), 16));
    std::vector<std::size_t> hit(chunks, none);
    parallel_chunks(kept.size(), chunks, [&](std::size_t c, std::size_t b, std::size_t e) {
      for (std::size_t j = b; j < e; ++j) {
        if (vecs[i].dot(vecs[kept[j]]) > cosine_threshold) {
          hit[c] = j;
          return;
        }
      }
    });
    std::size_t first = none;
    for (auto h : hit) first = std::min(first, h);
    if (first != none) {
      removed[i] = true;
      removals.push_back({corpus[i].id, corpus[kept[first]].id, "near_embedding"});
    } else {
      kept.push_back(i);
    }
  }
  return assemble(corpus, removed, std::move(removals));
}

}  // namespace dmr
