#pragma once

#include <map>
#include <string>

#include "dynanav/tensor.hpp"

namespace dynanav {

using ParamMap = std::map<std::string, Tensor>;

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Flat binary container: version header, then one record per parameter path
// with its shape and little-endian float64 payload. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const ParamMap& params);
ParamMap load_checkpoint(const std::string& path);

// Writes to path + ".tmp" then renames, so readers never see partial files.
void atomic_write_file(const std::string& path, const std::string& contents);

}  // namespace dynanav
