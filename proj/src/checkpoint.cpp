#include "samba/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "samba/errors.hpp"

namespace samba {

namespace {

constexpr char kMagic[4] = {'S', 'M', 'B', 'A'};

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f32(std::ostream& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw CheckpointError("truncated checkpoint");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw CheckpointError("truncated checkpoint");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

std::string get_string(std::istream& in) {
  const uint32_t len = get_u32(in);
  if (len > (1u << 26)) throw CheckpointError("implausible string length in checkpoint");
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw CheckpointError("truncated checkpoint");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_text,
                     const std::vector<Parameter*>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint: " + path);
  out.write(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<uint32_t>(config_text.size()));
  out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
  put_u32(out, static_cast<uint32_t>(params.size()));
  for (const Parameter* p : params) {
    put_u32(out, static_cast<uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put_u32(out, static_cast<uint32_t>(p->value.rank()));
    for (int d : p->value.shape) put_u64(out, static_cast<uint64_t>(d));
    put_u32(out, 0);  // dtype: 32-bit float
    for (double v : *p->value.data) put_f32(out, static_cast<float>(v));
  }
  if (!out) throw Error("short write on checkpoint: " + path);
}

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw CheckpointError("bad checkpoint magic in " + path);

  CheckpointData data;
  data.version = get_u32(in);
  if (data.version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(data.version));
  data.config_text = get_string(in);
  const uint32_t count = get_u32(in);
  data.tensors.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = get_string(in);
    const uint32_t rank = get_u32(in);
    if (rank > 8) throw CheckpointError("implausible tensor rank in " + path);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d)
      shape[d] = static_cast<int>(get_u64(in));
    const uint32_t dtype = get_u32(in);
    if (dtype != 0) throw CheckpointError("unknown dtype code " + std::to_string(dtype));
    const int64_t n = shape_numel(shape);
    std::vector<double> vals(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) {
      const uint32_t bits = get_u32(in);
      float f;
      std::memcpy(&f, &bits, 4);
      vals[static_cast<size_t>(j)] = static_cast<double>(f);
    }
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<double>>(std::move(vals));
    data.tensors.emplace_back(std::move(name), std::move(t));
  }
  return data;
}

void load_parameters(const std::vector<Parameter*>& params, const CheckpointData& data) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : data.tensors) {
    if (!by_name.emplace(name, &t).second)
      throw CheckpointError("duplicate tensor '" + name + "' in checkpoint");
  }
  if (by_name.size() != params.size())
    throw CheckpointError("checkpoint holds " + std::to_string(by_name.size()) +
                          " tensors, model expects " + std::to_string(params.size()));
  for (Parameter* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end())
      throw CheckpointError("checkpoint is missing tensor '" + p->name + "'");
    if (it->second->shape != p->value.shape)
      throw CheckpointError("shape mismatch for '" + p->name + "': " +
                            shape_str(it->second->shape) + " vs " +
                            shape_str(p->value.shape));
    *p->value.data = *it->second->data;
  }
}

}  // namespace samba
