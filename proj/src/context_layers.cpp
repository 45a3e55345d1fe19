#include "posdep/context_layers.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "posdep/error.hpp"

namespace posdep::nn {

namespace {

static_assert(std::endian::native == std::endian::little,
              "context layer I/O assumes a little-endian host");

template <typename T>
bool read_le(std::istream& in, T& value) {
  return static_cast<bool>(in.read(reinterpret_cast<char*>(&value), sizeof(T)));
}

template <typename T>
void write_le(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

}  // namespace

ContextLayers read_context_layers(const std::string& path,
                                  std::span<const std::size_t> sentence_lengths) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open context layer file '" + path + "'");
  char magic[4];
  std::uint16_t version = 0, layers = 0;
  std::uint32_t dim = 0;
  if (!in.read(magic, 4) || std::memcmp(magic, "CTXL", 4) != 0) {
    throw ValidationError("'" + path + "' is not a context layer file (bad magic)");
  }
  if (!read_le(in, version) || !read_le(in, layers) || !read_le(in, dim)) {
    throw ValidationError("'" + path + "': truncated header");
  }
  if (version != kContextFormatVersion) {
    throw ValidationError("'" + path + "': unsupported version " + std::to_string(version));
  }
  if (layers == 0 || dim == 0) throw ValidationError("'" + path + "': empty layer shape");

  ContextLayers out;
  out.layer_count = layers;
  out.dim = dim;
  std::vector<std::vector<bool>> seen;
  for (std::size_t len : sentence_lengths) {
    out.sentences.emplace_back(ad::Shape{layers, len, dim});
    seen.emplace_back(len, false);
  }
  std::vector<float> buffer(static_cast<std::size_t>(layers) * dim);
  std::uint32_t sent = 0, tok = 0;
  while (read_le(in, sent)) {
    if (!read_le(in, tok) ||
        !in.read(reinterpret_cast<char*>(buffer.data()),
                 static_cast<std::streamsize>(buffer.size() * sizeof(float)))) {
      throw ValidationError("'" + path + "': truncated record");
    }
    if (sent >= sentence_lengths.size()) continue;
    if (tok >= sentence_lengths[sent]) {
      throw ValidationError("'" + path + "': token " + std::to_string(tok) +
                            " out of range for sentence " + std::to_string(sent));
    }
    auto& t = out.sentences[sent];
    const std::size_t n = sentence_lengths[sent];
    for (std::size_t l = 0; l < layers; ++l) {
      for (std::size_t k = 0; k < dim; ++k) {
        t[(l * n + tok) * dim + k] = static_cast<double>(buffer[l * dim + k]);
      }
    }
    seen[sent][tok] = true;
  }
  for (std::size_t s = 0; s < seen.size(); ++s) {
    for (std::size_t t = 0; t < seen[s].size(); ++t) {
      if (!seen[s][t]) {
        throw ValidationError("'" + path + "': missing vectors for sentence " + std::to_string(s) +
                              " token " + std::to_string(t));
      }
    }
  }
  return out;
}

void write_context_layers(const std::string& path, const ContextLayers& layers) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write context layer file '" + path + "'");
  out.write("CTXL", 4);
  write_le(out, kContextFormatVersion);
  write_le(out, static_cast<std::uint16_t>(layers.layer_count));
  write_le(out, static_cast<std::uint32_t>(layers.dim));
  for (std::size_t s = 0; s < layers.sentences.size(); ++s) {
    const auto& t = layers.sentences[s];
    if (t.rank() != 3 || t.dim(0) != layers.layer_count || t.dim(2) != layers.dim) {
      throw ShapeError("context tensor " + ad::shape_str(t.shape()) + " does not match header");
    }
    const std::size_t n = t.dim(1);
    for (std::size_t tok = 0; tok < n; ++tok) {
      write_le(out, static_cast<std::uint32_t>(s));
      write_le(out, static_cast<std::uint32_t>(tok));
      for (std::size_t l = 0; l < layers.layer_count; ++l) {
        for (std::size_t k = 0; k < layers.dim; ++k) {
          write_le(out, static_cast<float>(t[(l * n + tok) * layers.dim + k]));
        }
      }
    }
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace posdep::nn
