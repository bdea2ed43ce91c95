#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mh2f/rng.hpp"
#include "mh2f/tensor.hpp"

// Paired rainy/clean dataset indexing and the patch/batch pipeline. All
// randomness is a pure function of (seed, epoch, position), so any point of
// the stream can be reconstructed exactly when resuming from a checkpoint.

namespace mh2f {

enum class NamingScheme { rain_norain, manifest };

struct PairEntry {
  std::string rainy_path;
  std::string clean_path;
  std::shared_ptr<const TensorF> rainy;  // decoded at index time
  std::shared_ptr<const TensorF> clean;
};

struct PairIndex {
  std::vector<PairEntry> entries;
  std::vector<std::string> warnings;  // skipped/unpaired files

  [[nodiscard]] std::size_t size() const { return entries.size(); }
};

// Scans root for rain-N.* / norain-N.* pairs (or reads manifest.csv), decodes
// both sides and keeps only pairs with matching dimensions. Unpairable or
// invalid files produce warnings; zero usable pairs is an error.
PairIndex index_dataset(const std::string& root, NamingScheme scheme);

struct Batch {
  TensorF rainy;  // (B,3,p,p)
  TensorF clean;
};

// Same crop coordinates applied to both images.
std::pair<TensorF, TensorF> sample_patch(const TensorF& rainy, const TensorF& clean,
                                         int size, Rng& rng);

// With probability 1/2 both patches are mirrored horizontally.
void augment(TensorF& rainy_patch, TensorF& clean_patch, Rng& rng);

TensorF flip_horizontal(const TensorF& t);

std::size_t batches_per_epoch(const PairIndex& index, int batch_size);

// Shuffled pair order for one epoch; pure in (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n_pairs, std::uint64_t seed,
                                     std::uint64_t epoch);

// Batch batch_idx of the given epoch: sampled + augmented patch pairs for the
// next batch_size entries of the epoch order (the trailing partial batch is
// dropped by batches_per_epoch).
Batch make_batch(const PairIndex& index, int batch_size, int patch_size,
                 std::uint64_t seed, std::uint64_t epoch, std::uint64_t batch_idx);

// Iterator over epochs of batches; position (epoch, batch offset) is exposed
// for checkpointing.
class BatchStream {
 public:
  BatchStream(const PairIndex& index, int batch_size, int patch_size, std::uint64_t seed,
              std::uint64_t start_epoch = 0, std::uint64_t start_offset = 0);

  // next batch within the current epoch, or nullopt at epoch end
  std::optional<Batch> next();
  void advance_epoch();

  [[nodiscard]] std::uint64_t epoch() const { return epoch_; }
  [[nodiscard]] std::uint64_t offset() const { return offset_; }

 private:
  const PairIndex& index_;
  int batch_size_, patch_size_;
  std::uint64_t seed_, epoch_, offset_;
};

}  // namespace mh2f
