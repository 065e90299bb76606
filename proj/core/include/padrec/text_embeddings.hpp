#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "padrec/tensor.hpp"

namespace padrec {

/// On-disk frozen text embeddings: "PADV1", u32 rows, u32 dim, then rows*dim
/// little-endian float32 values. A companion index file lists one item id per
/// line, row order.
struct TextEmbeddingFile {
  std::vector<std::string> ids;
  Tensor values;  // rows x dim, float32-representable
};

void write_text_embeddings(const std::filesystem::path& path, const std::filesystem::path& index_path,
                           const TextEmbeddingFile& file);
TextEmbeddingFile read_text_embeddings(const std::filesystem::path& path, const std::filesystem::path& index_path);

enum class MissingText { strict, zero_fill };

struct AlignedText {
  Tensor matrix;                     // vocabulary.size() x dim
  std::vector<std::string> missing;  // filled with zeros (zero_fill mode only)
};

/// Reorders the rows of an in-memory file to dense vocabulary ids.
AlignedText align_text_embeddings(const TextEmbeddingFile& file, const std::vector<std::string>& vocabulary,
                                  MissingText mode = MissingText::strict, const std::string& source = "<text>");

/// Reorders rows to dense vocabulary ids. In strict mode a missing item is a
/// DataError listing up to 20 offenders.
AlignedText load_text_embeddings(const std::filesystem::path& path, const std::filesystem::path& index_path,
                                 const std::vector<std::string>& vocabulary, MissingText mode = MissingText::strict);

}  // namespace padrec
