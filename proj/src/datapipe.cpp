#include "mh2f/datapipe.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "mh2f/errors.hpp"
#include "mh2f/image_io.hpp"
#include "mh2f/rainsim.hpp"

namespace fs = std::filesystem;

namespace mh2f {

namespace {

// stream tags keep the permutation and per-item draws independent
constexpr std::uint64_t kOrderTag = 0x6f72646572ULL;
constexpr std::uint64_t kItemTag = 0x6974656dULL;

bool load_pair(PairEntry& e, std::vector<std::string>& warnings) {
  TensorF rainy, clean;
  try {
    rainy = read_png(e.rainy_path);
    clean = read_png(e.clean_path);
  } catch (const io_error& err) {
    warnings.push_back(std::string("skipped pair: ") + err.what());
    return false;
  }
  if (!(rainy.shape == clean.shape)) {
    warnings.push_back("skipped pair with mismatched dimensions: " + e.rainy_path + " " +
                       rainy.shape.str() + " vs " + e.clean_path + " " + clean.shape.str());
    return false;
  }
  e.rainy = std::make_shared<const TensorF>(std::move(rainy));
  e.clean = std::make_shared<const TensorF>(std::move(clean));
  return true;
}

PairIndex index_rain_norain(const std::string& root) {
  std::map<std::string, fs::path> rain_files, norain_files;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const std::string stem = entry.path().stem().string();
    if (entry.path().extension() != ".png") continue;
    if (stem.rfind("norain-", 0) == 0)
      norain_files[stem.substr(7)] = entry.path();
    else if (stem.rfind("rain-", 0) == 0)
      rain_files[stem.substr(5)] = entry.path();
  }
  PairIndex index;
  for (const auto& [id, rain_path] : rain_files) {  // std::map: lexicographic order
    auto it = norain_files.find(id);
    if (it == norain_files.end()) {
      index.warnings.push_back("unpaired rainy file (no norain-" + id + "): " +
                               rain_path.string());
      continue;
    }
    PairEntry e;
    e.rainy_path = rain_path.string();
    e.clean_path = it->second.string();
    if (load_pair(e, index.warnings)) index.entries.push_back(std::move(e));
    norain_files.erase(it);
  }
  for (const auto& [id, path] : norain_files)
    index.warnings.push_back("unpaired clean file (no rain-" + id + "): " + path.string());
  return index;
}

PairIndex index_manifest(const std::string& root) {
  const fs::path manifest = fs::path(root) / "manifest.csv";
  std::ifstream mf(manifest, std::ios::binary);
  if (!mf) throw io_error("cannot read manifest: " + manifest.string());
  std::stringstream buf;
  buf << mf.rdbuf();
  PairIndex index;
  for (const auto& row : parse_manifest_csv(buf.str())) {
    PairEntry e;
    e.rainy_path = (fs::path(root) / row.rainy_file).string();
    e.clean_path = (fs::path(root) / row.clean_file).string();
    if (load_pair(e, index.warnings)) index.entries.push_back(std::move(e));
  }
  return index;
}

}  // namespace

PairIndex index_dataset(const std::string& root, NamingScheme scheme) {
  if (!fs::is_directory(root)) throw io_error("dataset root does not exist: " + root);
  PairIndex index = scheme == NamingScheme::rain_norain ? index_rain_norain(root)
                                                        : index_manifest(root);
  if (index.entries.empty()) {
    std::string msg = "no pairs found in " + root;
    for (const auto& w : index.warnings) msg += "\n  " + w;
    throw precondition_error(msg);
  }
  return index;
}

std::pair<TensorF, TensorF> sample_patch(const TensorF& rainy, const TensorF& clean,
                                         int size, Rng& rng) {
  if (!(rainy.shape == clean.shape))
    throw precondition_error("sample_patch: pair shapes differ");
  const int h = rainy.shape.h, w = rainy.shape.w;
  if (h < size || w < size)
    throw precondition_error("sample_patch: image " + rainy.shape.str() +
                             " smaller than patch size " + std::to_string(size));
  const int y0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(h - size) + 1));
  const int x0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(w - size) + 1));
  auto crop = [&](const TensorF& src) {
    TensorF out({src.shape.n, src.shape.c, size, size});
    for (int n = 0; n < src.shape.n; ++n)
      for (int c = 0; c < src.shape.c; ++c) {
        const float* sp = src.plane(n, c);
        float* dp = out.plane(n, c);
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x) dp[y * size + x] = sp[(y0 + y) * w + x0 + x];
      }
    return out;
  };
  return {crop(rainy), crop(clean)};
}

TensorF flip_horizontal(const TensorF& t) {
  TensorF out(t.shape);
  for (int n = 0; n < t.shape.n; ++n)
    for (int c = 0; c < t.shape.c; ++c) {
      const float* sp = t.plane(n, c);
      float* dp = out.plane(n, c);
      for (int y = 0; y < t.shape.h; ++y)
        for (int x = 0; x < t.shape.w; ++x)
          dp[y * t.shape.w + x] = sp[y * t.shape.w + (t.shape.w - 1 - x)];
    }
  return out;
}

void augment(TensorF& rainy_patch, TensorF& clean_patch, Rng& rng) {
  if (!(rainy_patch.shape == clean_patch.shape))
    throw precondition_error("augment: pair shapes differ");
  if (rng.coin()) {
    rainy_patch = flip_horizontal(rainy_patch);
    clean_patch = flip_horizontal(clean_patch);
  }
}

std::size_t batches_per_epoch(const PairIndex& index, int batch_size) {
  if (batch_size < 1) throw precondition_error("batch_size must be >= 1");
  return index.size() / static_cast<std::size_t>(batch_size);
}

std::vector<std::size_t> epoch_order(std::size_t n_pairs, std::uint64_t seed,
                                     std::uint64_t epoch) {
  std::vector<std::size_t> order(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) order[i] = i;
  Rng rng(mix_seed(mix_seed(seed, kOrderTag), epoch));
  for (std::size_t i = n_pairs; i > 1; --i) {  // Fisher-Yates
    const std::size_t j = rng.uniform_int(i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

Batch make_batch(const PairIndex& index, int batch_size, int patch_size, std::uint64_t seed,
                 std::uint64_t epoch, std::uint64_t batch_idx) {
  const std::size_t per_epoch = batches_per_epoch(index, batch_size);
  if (batch_idx >= per_epoch)
    throw precondition_error("make_batch: batch index out of range");
  const std::vector<std::size_t> order = epoch_order(index.size(), seed, epoch);

  Batch batch{TensorF({batch_size, 3, patch_size, patch_size}),
              TensorF({batch_size, 3, patch_size, patch_size})};
  for (int b = 0; b < batch_size; ++b) {
    const std::uint64_t pos = batch_idx * static_cast<std::uint64_t>(batch_size) + b;
    const PairEntry& e = index.entries[order[pos]];
    Rng rng(mix_seed(mix_seed(mix_seed(seed, kItemTag), epoch), pos));
    auto [rp, cp] = sample_patch(*e.rainy, *e.clean, patch_size, rng);
    augment(rp, cp, rng);
    const std::size_t plane = static_cast<std::size_t>(patch_size) * patch_size;
    for (int c = 0; c < 3; ++c) {
      std::copy_n(rp.plane(0, c), plane, batch.rainy.plane(b, c));
      std::copy_n(cp.plane(0, c), plane, batch.clean.plane(b, c));
    }
  }
  return batch;
}

BatchStream::BatchStream(const PairIndex& index, int batch_size, int patch_size,
                         std::uint64_t seed, std::uint64_t start_epoch,
                         std::uint64_t start_offset)
    : index_(index),
      batch_size_(batch_size),
      patch_size_(patch_size),
      seed_(seed),
      epoch_(start_epoch),
      offset_(start_offset) {}

std::optional<Batch> BatchStream::next() {
  if (offset_ >= batches_per_epoch(index_, batch_size_)) return std::nullopt;
  Batch b = make_batch(index_, batch_size_, patch_size_, seed_, epoch_, offset_);
  ++offset_;
  return b;
}

void BatchStream::advance_epoch() {
  ++epoch_;
  offset_ = 0;
}

}  // namespace mh2f
