#include "mh2f/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "mh2f/errors.hpp"

namespace mh2f {

namespace {

constexpr char kMagic[8] = {'M', 'H', '2', 'F', 'C', 'K', 'P', 'T'};
constexpr char kTrailer[8] = {'M', 'H', '2', 'F', 'E', 'N', 'D', '.'};
constexpr std::uint32_t kFormatVersion = 1;

// explicit little-endian scalar IO
template <typename T>
void put(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T)))
    throw io_error(std::string("corrupt checkpoint: truncated while reading ") + what);
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is, const char* what) {
  const auto len = get<std::uint64_t>(is, what);
  if (len > (1ULL << 30)) throw io_error("corrupt checkpoint: implausible string length");
  std::string s(len, '\0');
  is.read(s.data(), static_cast<std::streamsize>(len));
  if (is.gcount() != static_cast<std::streamsize>(len))
    throw io_error(std::string("corrupt checkpoint: truncated while reading ") + what);
  return s;
}

void put_blob(std::ostream& os, const TensorF& t) {
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

void get_blob(std::istream& is, TensorF& t, const char* what) {
  is.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (is.gcount() != static_cast<std::streamsize>(t.data.size() * sizeof(float)))
    throw io_error(std::string("corrupt checkpoint: truncated while reading ") + what);
}

struct ManifestEntry {
  std::string name;
  Shape shape;
};

std::vector<ManifestEntry> shape_manifest(const ModelParams<float>& p) {
  std::vector<ManifestEntry> m;
  for_each_param(p, [&](const std::string& name, const TensorF& t, int) {
    m.push_back({name, t.shape});
  });
  return m;
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io_error("cannot open checkpoint for writing: " + path);

  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kFormatVersion);
  put_string(os, to_json_text(c.train_config, -1));

  // the manifest is written before any parameter bytes so a reader can verify
  // shapes up front
  auto manifest = shape_manifest(c.params);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(manifest.size()));
  for (const auto& e : manifest) {
    put_string(os, e.name);
    put<std::int32_t>(os, e.shape.n);
    put<std::int32_t>(os, e.shape.c);
    put<std::int32_t>(os, e.shape.h);
    put<std::int32_t>(os, e.shape.w);
  }
  for_each_param(c.params,
                 [&](const std::string&, const TensorF& t, int) { put_blob(os, t); });

  put<std::uint64_t>(os, c.opt.t);
  for (const auto& t : c.opt.m) put_blob(os, t);
  for (const auto& t : c.opt.v) put_blob(os, t);

  put<std::uint64_t>(os, c.epoch);
  put<std::uint64_t>(os, c.batch_offset);
  put<std::uint64_t>(os, c.global_step);
  put<double>(os, c.best_psnr);
  os.write(kTrailer, sizeof(kTrailer));
  os.flush();
  if (!os.good()) throw io_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open checkpoint: " + path);

  char magic[8];
  is.read(magic, sizeof(magic));
  if (is.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw io_error("not a checkpoint file: " + path);
  const auto version = get<std::uint32_t>(is, "format version");
  if (version != kFormatVersion)
    throw io_error("checkpoint format version mismatch in " + path + ": file has " +
                   std::to_string(version) + ", reader supports " +
                   std::to_string(kFormatVersion));

  Checkpoint c;
  c.format_version = version;
  c.train_config = train_config_from_json_text(get_string(is, "config"));
  c.params = make_params<float>(c.train_config.model);

  const auto n_tensors = get<std::uint32_t>(is, "manifest size");
  auto expected = shape_manifest(c.params);
  if (n_tensors != expected.size())
    throw io_error("corrupt checkpoint: manifest lists " + std::to_string(n_tensors) +
                   " tensors, config implies " + std::to_string(expected.size()));
  for (const auto& e : expected) {
    const std::string name = get_string(is, "manifest entry");
    Shape s;
    s.n = get<std::int32_t>(is, "manifest shape");
    s.c = get<std::int32_t>(is, "manifest shape");
    s.h = get<std::int32_t>(is, "manifest shape");
    s.w = get<std::int32_t>(is, "manifest shape");
    if (name != e.name || !(s == e.shape))
      throw io_error("corrupt checkpoint: shape manifest mismatch at '" + name +
                     "' (expected '" + e.name + "' " + e.shape.str() + ", got " + s.str() +
                     ")");
  }
  for_each_param(c.params,
                 [&](const std::string& n, TensorF& t, int) { get_blob(is, t, n.c_str()); });

  c.opt = make_adam_state(c.params);
  c.opt.t = get<std::uint64_t>(is, "optimizer step");
  for (auto& t : c.opt.m) get_blob(is, t, "optimizer m");
  for (auto& t : c.opt.v) get_blob(is, t, "optimizer v");

  c.epoch = get<std::uint64_t>(is, "epoch");
  c.batch_offset = get<std::uint64_t>(is, "batch offset");
  c.global_step = get<std::uint64_t>(is, "global step");
  c.best_psnr = get<double>(is, "best psnr");

  char trailer[8];
  is.read(trailer, sizeof(trailer));
  if (is.gcount() != sizeof(trailer) ||
      std::memcmp(trailer, kTrailer, sizeof(kTrailer)) != 0)
    throw io_error("corrupt checkpoint: missing trailer in " + path);
  return c;
}

}  // namespace mh2f
