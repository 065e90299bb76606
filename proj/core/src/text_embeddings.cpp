#include "padrec/text_embeddings.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "padrec/data.hpp"

namespace padrec {

namespace {

constexpr char kMagic[5] = {'P', 'A', 'D', 'V', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void write_text_embeddings(const std::filesystem::path& path, const std::filesystem::path& index_path,
                           const TextEmbeddingFile& file) {
  const std::size_t rows = file.values.rows(), dim = file.values.cols();
  if (file.ids.size() != rows) throw std::invalid_argument("text embeddings: id count differs from row count");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  put_u32(out, static_cast<std::uint32_t>(rows));
  put_u32(out, static_cast<std::uint32_t>(dim));
  for (double v : file.values.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!out) throw DataError("write failed for " + path.string());

  std::ofstream idx(index_path, std::ios::binary);
  if (!idx) throw DataError("cannot write " + index_path.string());
  for (const auto& id : file.ids) {
    if (id.find('\n') != std::string::npos) throw std::invalid_argument("text embeddings: id contains newline");
    idx << id << '\n';
  }
  if (!idx) throw DataError("write failed for " + index_path.string());
}

TextEmbeddingFile read_text_embeddings(const std::filesystem::path& path, const std::filesystem::path& index_path) {
  const std::vector<unsigned char> bytes = slurp(path);
  const std::string where = path.string();
  if (bytes.size() < 13 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw DataError(where + ": bad magic, expected PADV1 header");
  }
  const std::uint32_t rows = get_u32(bytes.data() + 5);
  const std::uint32_t dim = get_u32(bytes.data() + 9);
  if (dim == 0) throw DataError(where + ": dimension must be > 0");
  const std::uint64_t expected = 13 + static_cast<std::uint64_t>(rows) * dim * 4;
  if (bytes.size() != expected) {
    throw DataError(where + ": payload is " + std::to_string(bytes.size()) + " bytes, header implies " +
                    std::to_string(expected));
  }

  TextEmbeddingFile file;
  std::ifstream idx(index_path);
  if (!idx) throw DataError("cannot open " + index_path.string());
  std::string line;
  while (std::getline(idx, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    file.ids.push_back(line);
  }
  if (file.ids.size() != rows) {
    throw DataError(index_path.string() + ": " + std::to_string(file.ids.size()) + " ids for " + std::to_string(rows) +
                    " embedding rows");
  }
  file.values = Tensor(Shape{rows, dim});
  const unsigned char* p = bytes.data() + 13;
  for (std::size_t i = 0; i < file.values.size(); ++i, p += 4) {
    file.values[i] = static_cast<double>(std::bit_cast<float>(get_u32(p)));
  }
  return file;
}

AlignedText align_text_embeddings(const TextEmbeddingFile& file, const std::vector<std::string>& vocabulary,
                                  MissingText mode, const std::string& source) {
  if (file.ids.size() != file.values.rows()) throw DataError(source + ": id count differs from row count");
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t r = 0; r < file.ids.size(); ++r) {
    if (!row_of.emplace(file.ids[r], r).second) {
      throw DataError(source + ": item '" + file.ids[r] + "' listed more than once");
    }
  }
  const std::size_t dim = file.values.cols();
  AlignedText out{Tensor(Shape{vocabulary.size(), dim}), {}};
  for (std::size_t i = 0; i < vocabulary.size(); ++i) {
    const auto it = row_of.find(vocabulary[i]);
    if (it == row_of.end()) {
      out.missing.push_back(vocabulary[i]);
      continue;
    }
    const auto src = file.values.row(it->second);
    std::copy(src.begin(), src.end(), out.matrix.row(i).begin());
  }
  if (!out.missing.empty() && mode == MissingText::strict) {
    std::string msg = source + ": " + std::to_string(out.missing.size()) + " items have no text embedding:";
    for (std::size_t i = 0; i < out.missing.size() && i < 20; ++i) msg += " " + out.missing[i];
    throw DataError(msg);
  }
  return out;
}

AlignedText load_text_embeddings(const std::filesystem::path& path, const std::filesystem::path& index_path,
                                 const std::vector<std::string>& vocabulary, MissingText mode) {
  return align_text_embeddings(read_text_embeddings(path, index_path), vocabulary, mode, path.string());
}

}  // namespace padrec
