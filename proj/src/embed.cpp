#include "prefx/embed.hpp"

#include <algorithm>
#include <cmath>

namespace prefx {

std::string_view to_string(EmbeddingSource s) {
  switch (s) {
    case EmbeddingSource::pifa: return "pifa";
    case EmbeddingSource::label_text_simple: return "label_text_simple";
    case EmbeddingSource::label_text_posweighted: return "label_text_posweighted";
  }
  return "?";
}

EmbeddingSource embedding_source_from_string(std::string_view s) {
  if (s == "pifa") return EmbeddingSource::pifa;
  if (s == "label_text_simple") return EmbeddingSource::label_text_simple;
  if (s == "label_text_posweighted") return EmbeddingSource::label_text_posweighted;
  throw Error("unknown embedding source: " + std::string(s));
}

LabelEmbeddings pifa_embed(const SparseMatrix& inputs, std::span<const uint32_t> label_ids, uint32_t num_labels) {
  if (label_ids.size() != inputs.rows()) throw Error("pifa: one label id per input row required");

  // Bucket example ids by label.
  std::vector<uint64_t> start(num_labels + 1, 0);
  for (uint32_t l : label_ids) {
    if (l >= num_labels) throw Error("pifa: label id out of range");
    ++start[l + 1];
  }
  for (uint32_t l = 0; l < num_labels; ++l) {
    if (start[l + 1] == 0) throw Error("pifa: label " + std::to_string(l) + " has no positive training example");
    start[l + 1] += start[l];
  }
  std::vector<uint64_t> fill(start.begin(), start.end() - 1);
  std::vector<uint64_t> by_label(label_ids.size());
  for (uint64_t i = 0; i < label_ids.size(); ++i) by_label[fill[label_ids[i]]++] = i;

  LabelEmbeddings out;
  out.source = EmbeddingSource::pifa;
  out.matrix = SparseMatrix(0, inputs.dim());
  std::vector<std::pair<uint32_t, double>> contrib;
  SparseVector row(static_cast<uint32_t>(inputs.dim()));
  for (uint32_t l = 0; l < num_labels; ++l) {
    contrib.clear();
    for (uint64_t k = start[l]; k < start[l + 1]; ++k) {
      SparseView x = inputs.row(by_label[k]);
      for (size_t j = 0; j < x.size(); ++j) contrib.emplace_back(x.indices[j], x.values[j]);
    }
    std::sort(contrib.begin(), contrib.end());
    row.indices.clear();
    row.values.clear();
    for (size_t i = 0; i < contrib.size();) {
      uint32_t idx = contrib[i].first;
      double s = 0.0;
      for (; i < contrib.size() && contrib[i].first == idx; ++i) s += contrib[i].second;
      if (s != 0.0) {
        row.indices.push_back(idx);
        row.values.push_back(s);
      }
    }
    row.normalize();
    if (row.empty()) out.zero_rows.push_back(l);
    out.matrix.append_row(row);
  }
  return out;
}

LabelEmbeddings label_text_embed(std::span<const std::string> labels, const TfidfVocab& vocab) {
  LabelEmbeddings out;
  out.source = vocab.position_weighted() ? EmbeddingSource::label_text_posweighted : EmbeddingSource::label_text_simple;
  out.matrix = SparseMatrix(0, vocab.dim());
  for (uint32_t l = 0; l < labels.size(); ++l) {
    SparseVector row = vocab.vectorize(labels[l]);
    if (row.empty()) out.zero_rows.push_back(l);
    out.matrix.append_row(row);
  }
  return out;
}

}  // namespace prefx
