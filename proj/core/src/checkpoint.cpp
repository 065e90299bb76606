#include "padrec/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "padrec/data.hpp"

namespace padrec {

namespace {

constexpr char kMagic[8] = {'P', 'A', 'D', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffu) throw std::invalid_argument(std::string("checkpoint: ") + what + " exceeds 32 bits");
  return static_cast<std::uint32_t>(v);
}

class Reader {
 public:
  Reader(std::string_view bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw DataError(source_ + ": truncated at byte " + std::to_string(pos_) + " while reading " + what);
    }
  }
  std::uint64_t uint(int width, const char* what) {
    need(static_cast<std::size_t>(width), what);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    const auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }
  [[noreturn]] void fail(const std::string& what) const {
    throw DataError(source_ + ": " + what + " (byte " + std::to_string(pos_) + ")");
  }

 private:
  std::string_view bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

}  // namespace

const CheckpointSection* Checkpoint::find(std::string_view name) const {
  for (const auto& s : sections) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, checked_u32(ckpt.sections.size(), "section count"));
  for (const auto& s : ckpt.sections) {
    put_u32(out, checked_u32(s.name.size(), "name length"));
    out += s.name;
    out.push_back(static_cast<char>(s.dtype));
    put_u32(out, checked_u32(s.value.rank(), "rank"));
    for (std::size_t d : s.value.shape()) put_u32(out, checked_u32(d, "dimension"));
    for (double v : s.value.values()) {
      if (s.dtype == Dtype::f64) {
        put_u64(out, std::bit_cast<std::uint64_t>(v));
      } else {
        put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      }
    }
  }
  put_u32(out, checked_u32(ckpt.metadata.size(), "metadata length"));
  out += ckpt.metadata;
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes, const std::string& source) {
  Reader r(bytes, source);
  if (std::memcmp(r.take(sizeof kMagic, "magic").data(), kMagic, sizeof kMagic) != 0) {
    throw DataError(source + ": not a checkpoint (bad magic, expected PADCKPT1)");
  }
  Checkpoint ckpt;
  const std::uint64_t count = r.uint(4, "section count");
  for (std::uint64_t k = 0; k < count; ++k) {
    CheckpointSection s;
    s.name = std::string(r.take(r.uint(4, "name length"), "section name"));
    if (s.name.empty()) r.fail("empty section name");
    if (ckpt.find(s.name)) r.fail("duplicate section '" + s.name + "'");
    const std::uint64_t tag = r.uint(1, "dtype");
    if (tag > 1) r.fail("unknown dtype tag " + std::to_string(tag) + " in section '" + s.name + "'");
    s.dtype = static_cast<Dtype>(tag);
    const std::uint64_t rank = r.uint(4, "rank");
    if (rank > 8) r.fail("implausible rank " + std::to_string(rank) + " in section '" + s.name + "'");
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
      shape.push_back(r.uint(4, "dimension"));
      n *= shape.back();
    }
    const std::uint64_t width = s.dtype == Dtype::f64 ? 8 : 4;
    if (n > (bytes.size() - r.pos()) / width) r.fail("payload of section '" + s.name + "' runs past end of file");
    s.value = Tensor(shape);
    for (std::size_t i = 0; i < s.value.size(); ++i) {
      s.value[i] = s.dtype == Dtype::f64 ? std::bit_cast<double>(r.uint(8, "payload"))
                                         : static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(r.uint(4, "payload"))));
    }
    ckpt.sections.push_back(std::move(s));
  }
  ckpt.metadata = std::string(r.take(r.uint(4, "metadata length"), "metadata"));
  if (!r.done()) r.fail("trailing bytes after metadata");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_checkpoint(bytes, path.string());
}

Checkpoint snapshot(PadModel& model, Dtype dtype, std::string metadata) {
  Checkpoint ckpt;
  ckpt.metadata = std::move(metadata);
  for (Parameter* p : model.all_parameters()) ckpt.sections.push_back({p->name, dtype, p->value});
  return ckpt;
}

void restore(PadModel& model, const Checkpoint& ckpt, std::span<Parameter* const> only) {
  std::vector<std::pair<Parameter*, const CheckpointSection*>> plan;
  for (const auto& s : ckpt.sections) {
    Parameter* p = model.find(s.name);
    if (!p) throw DataError("checkpoint: unknown section '" + s.name + "'");
    if (p->value.shape() != s.value.shape()) {
      throw DataError("checkpoint: section '" + s.name + "' has shape " + shape_string(s.value.shape()) +
                      ", model expects " + shape_string(p->value.shape()));
    }
    if (only.empty() || std::find(only.begin(), only.end(), p) != only.end()) plan.emplace_back(p, &s);
  }
  for (auto [p, s] : plan) {
    if (p == &model.text()) {
      model.set_text(s->value);
    } else {
      p->value = s->value;
    }
  }
}

}  // namespace padrec
