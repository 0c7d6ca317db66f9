#include "dynanav/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace dynanav {

namespace {

constexpr char kMagic[4] = {'D', 'N', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamMap& params) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot open " + tmp + " for writing");
    os.write(kMagic, 4);
    write_pod<std::uint32_t>(os, kVersion);
    write_pod<std::uint64_t>(os, params.size());
    for (const auto& [name, t] : params) {
      write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape().size()));
      for (int d : t.shape()) write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(d));
      os.write(reinterpret_cast<const char*>(t.vec().data()),
               static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!os) throw IoError("checkpoint: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

ParamMap load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("checkpoint: bad magic in " + path);
  std::uint32_t version = read_pod<std::uint32_t>(is);
  if (version != kVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  std::uint64_t count = read_pod<std::uint64_t>(is);
  ParamMap params;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t name_len = read_pod<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    std::uint32_t ndim = read_pod<std::uint32_t>(is);
    Shape shape(ndim);
    long long numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      shape[d] = static_cast<int>(read_pod<std::uint64_t>(is));
      numel *= shape[d];
    }
    std::vector<double> data(numel);
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(numel * sizeof(double)));
    if (!is) throw IoError("checkpoint: truncated payload in " + path);
    params.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return params;
}

void atomic_write_file(const std::string& path, const std::string& contents) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot open " + tmp + " for writing");
    os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!os) throw IoError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace dynanav
