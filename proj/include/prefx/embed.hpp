#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "prefx/sparse.hpp"
#include "prefx/vectorize.hpp"

namespace prefx {

enum class EmbeddingSource { pifa, label_text_simple, label_text_posweighted };

std::string_view to_string(EmbeddingSource s);
EmbeddingSource embedding_source_from_string(std::string_view s);

// One unit-norm row per label id. Rows listed in `zero_rows` are all-zero
// (their positive inputs summed to nothing) and are excluded from the norm
// invariant.
struct LabelEmbeddings {
  SparseMatrix matrix;
  EmbeddingSource source = EmbeddingSource::pifa;
  std::vector<uint32_t> zero_rows;

  uint32_t num_labels() const { return static_cast<uint32_t>(matrix.rows()); }
  uint64_t dim() const { return matrix.dim(); }
};

// Positive instance feature aggregation: row l is the normalized sum of the
// inputs whose label is l. Contributions are summed in a canonical order, so
// the result is bit-identical under any permutation of the examples.
LabelEmbeddings pifa_embed(const SparseMatrix& inputs, std::span<const uint32_t> label_ids, uint32_t num_labels);

// Character n-gram TF-IDF of each label string, simple or position-weighted
// according to the vocabulary.
LabelEmbeddings label_text_embed(std::span<const std::string> labels, const TfidfVocab& vocab);

}  // namespace prefx
