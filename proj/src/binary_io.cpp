#include "flowpose/binary_io.hpp"

#include <fstream>
#include <iterator>

namespace flowpose::io {

void Writer::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
  if (!out) throw Error("failed writing '" + path + "'");
}

Reader Reader::open(const std::string& path, std::string what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return Reader(std::move(data), std::move(what));
}

}  // namespace flowpose::io
