#include "common/binary_io.hpp"

#include <fstream>

namespace cvtnet::io {

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<char> bytes(size);
  if (size > 0) in.read(bytes.data(), static_cast<std::streamsize>(size));
  if (!in) fail(ErrorCode::Io, "failed reading " + path);
  return bytes;
}

}  // namespace cvtnet::io
