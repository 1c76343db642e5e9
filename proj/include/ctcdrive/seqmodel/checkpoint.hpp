#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctcdrive/seqmodel/params.hpp"

namespace ctcdrive::model {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Layout:
///   ctcdrive-checkpoint 1 <count>\n
///   <name> f32 <d0>x<d1>...\n        (count lines, manifest order)
///   raw little-endian f32 values, concatenated in manifest order
///   u64 byte length of the raw block
template <class T>
void save_checkpoint(const ModelParams<T>& params, const std::string& path) {
  std::ostringstream manifest;
  std::vector<float> data;
  std::size_t count = 0;
  params.visit([&](const std::string&, const Tensor<T>& t) {
    ++count;
    for (T v : t.values()) data.push_back(static_cast<float>(v));
  });
  manifest << "ctcdrive-checkpoint 1 " << count << '\n';
  params.visit([&](const std::string& name, const Tensor<T>& t) {
    manifest << name << " f32 ";
    for (std::size_t i = 0; i < t.rank(); ++i) manifest << (i ? "x" : "") << t.extent(i);
    manifest << '\n';
  });
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path + " for writing");
  const std::string text = manifest.str();
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  const std::uint64_t bytes = data.size() * sizeof(float);
  out.write(reinterpret_cast<const char*>(&bytes), sizeof(bytes));
  if (!out) throw CheckpointError("write failed for " + path);
}

/// Reads a checkpoint written for `config`; names, dtypes, shapes and the
/// trailing length must all match.
template <class T>
ModelParams<T> load_checkpoint(const std::string& path, const ModelConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError(path + ": empty checkpoint");
  std::istringstream header(line);
  std::string magic;
  int version = 0;
  std::size_t count = 0;
  header >> magic >> version >> count;
  if (magic != "ctcdrive-checkpoint" || version != 1) throw CheckpointError(path + ": not a version-1 checkpoint");

  auto params = zero_params<T>(config);
  std::size_t expected = 0;
  params.visit([&expected](const std::string&, const Tensor<T>&) { ++expected; });
  if (count != expected) {
    throw CheckpointError(path + ": " + std::to_string(count) + " tensors, config expects " + std::to_string(expected));
  }
  params.visit([&](const std::string& name, const Tensor<T>& t) {
    if (!std::getline(in, line)) throw CheckpointError(path + ": truncated manifest");
    std::ostringstream want;
    want << name << " f32 ";
    for (std::size_t i = 0; i < t.rank(); ++i) want << (i ? "x" : "") << t.extent(i);
    if (line != want.str()) throw CheckpointError(path + ": manifest line '" + line + "', expected '" + want.str() + "'");
  });
  const std::size_t total = params.count();
  std::vector<float> data(total);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(total * sizeof(float)));
  std::uint64_t bytes = 0;
  in.read(reinterpret_cast<char*>(&bytes), sizeof(bytes));
  if (!in || bytes != total * sizeof(float)) throw CheckpointError(path + ": truncated or corrupt data block");
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError(path + ": trailing bytes after length");
  std::size_t offset = 0;
  params.visit([&](const std::string&, Tensor<T>& t) {
    for (auto& v : t.mutable_values()) v = static_cast<T>(data[offset++]);
  });
  return params;
}

}  // namespace ctcdrive::model
