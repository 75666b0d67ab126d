#include "amplify/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace amplify::checkpoint {

namespace {

namespace fs = std::filesystem;

void put_u64_le(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t get_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_f64_le(std::ostream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64_le(os, bits);
}

double get_f64_le(std::istream& is) {
  uint64_t bits = get_u64_le(is);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

constexpr uint32_t kMagic = 0x414d5031;  // "AMP1"

void put_u32_le(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save(const std::string& dir, const std::vector<Parameter>& params,
          const Metadata& meta) {
  fs::create_directories(dir);
  for (const Parameter& p : params) {
    std::ofstream os(fs::path(dir) / (p.name + ".bin"), std::ios::binary);
    if (!os) throw DataError("checkpoint: cannot write " + p.name + " in " + dir);
    put_u32_le(os, kMagic);
    put_u32_le(os, static_cast<uint32_t>(p.tensor.ndim()));
    for (size_t d : p.tensor.shape()) put_u64_le(os, d);
    for (Real v : p.tensor.data()) put_f64_le(os, static_cast<double>(v));
  }
  std::ofstream meta_os(fs::path(dir) / "meta.txt");
  if (!meta_os) throw DataError("checkpoint: cannot write meta.txt in " + dir);
  for (const auto& [key, value] : meta) meta_os << key << "=" << value << "\n";
}

Metadata load_metadata(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "meta.txt");
  if (!is) throw DataError("checkpoint: missing meta.txt in " + dir);
  Metadata meta;
  std::string line;
  while (std::getline(is, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return meta;
}

void load(const std::string& dir, std::vector<Parameter>& params) {
  for (Parameter& p : params) {
    fs::path path = fs::path(dir) / (p.name + ".bin");
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: missing parameter file " + path.string());
    if (get_u32_le(is) != kMagic)
      throw DataError("checkpoint: bad magic in " + path.string());
    const uint32_t rank = get_u32_le(is);
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = get_u64_le(is);
    if (shape != p.tensor.shape())
      throw DataError("checkpoint: " + p.name + " has shape " + shape_str(shape) +
                      ", expected " + shape_str(p.tensor.shape()));
    auto data = p.tensor.mutable_data();
    for (size_t i = 0; i < data.size(); ++i)
      data[i] = static_cast<Real>(get_f64_le(is));
    if (!is) throw DataError("checkpoint: truncated payload in " + path.string());
  }
}

}  // namespace amplify::checkpoint
