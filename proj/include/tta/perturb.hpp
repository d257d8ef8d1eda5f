#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "tta/errors.hpp"
#include "tta/tensor.hpp"
#include "tta/util.hpp"

namespace tta {

/// Patch-shuffle settings. patch_size must divide both image dimensions.
/// The permutation is drawn from permutation_seed and, by default, shared by
/// every image in a batch; per_image_permutation re-derives it per image.
struct PatchShuffleSpec {
  std::size_t patch_size = 4;
  std::uint64_t permutation_seed = 0;
  bool per_image_permutation = false;
};

inline std::vector<std::size_t> patch_permutation(std::size_t n_patches,
                                                  std::uint64_t seed) {
  Rng rng = make_rng(mix_seed(seed, 0x9a7c4e));
  return shuffled_indices(n_patches, rng);
}

/// Rearranges patch grid slots: output slot i receives input patch perm[i].
/// The pixel multiset is preserved exactly.
inline Tensor apply_patch_permutation(const Tensor& image,
                                      const std::vector<std::size_t>& perm,
                                      std::size_t patch_size) {
  if (image.rank() != 2)
    throw DimensionError("patch_shuffle: image must be rank 2");
  const std::size_t h = image.dim(0), w = image.dim(1);
  if (patch_size == 0 || h % patch_size != 0 || w % patch_size != 0)
    throw ParameterError("patch_shuffle: patch_size " + std::to_string(patch_size) +
                         " must divide image dims " + shape_str(image.shape()));
  const std::size_t rows = h / patch_size, cols = w / patch_size;
  if (perm.size() != rows * cols)
    throw ParameterError("patch_shuffle: permutation has " +
                         std::to_string(perm.size()) + " entries for " +
                         std::to_string(rows * cols) + " patches");
  std::vector<double> out(h * w);
  const double* src = image.data().data();
  for (std::size_t slot = 0; slot < perm.size(); ++slot) {
    const std::size_t from = perm[slot];
    if (from >= rows * cols)
      throw ParameterError("patch_shuffle: permutation entry out of range");
    const std::size_t dr = (slot / cols) * patch_size, dc = (slot % cols) * patch_size;
    const std::size_t sr = (from / cols) * patch_size, sc = (from % cols) * patch_size;
    for (std::size_t r = 0; r < patch_size; ++r)
      for (std::size_t c = 0; c < patch_size; ++c)
        out[(dr + r) * w + dc + c] = src[(sr + r) * w + sc + c];
  }
  return Tensor::from_data({h, w}, std::move(out));
}

inline std::vector<std::size_t> invert_permutation(
    const std::vector<std::size_t>& perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return inv;
}

inline Tensor patch_shuffle(const Tensor& image, const PatchShuffleSpec& spec) {
  if (image.rank() != 2)
    throw DimensionError("patch_shuffle: image must be rank 2");
  const std::size_t h = image.dim(0), w = image.dim(1);
  if (spec.patch_size == 0 || h % spec.patch_size != 0 || w % spec.patch_size != 0)
    throw ParameterError("patch_shuffle: patch_size must divide image dims");
  const std::size_t n = (h / spec.patch_size) * (w / spec.patch_size);
  return apply_patch_permutation(image, patch_permutation(n, spec.permutation_seed),
                                 spec.patch_size);
}

/// x' = x + delta, exactly; no clamping, the Taylor checks need exact
/// arithmetic.
inline Tensor additive_perturb(const Tensor& image, const Tensor& delta) {
  if (image.shape() != delta.shape())
    throw DimensionError("additive_perturb: delta shape " +
                         shape_str(delta.shape()) + " != image shape " +
                         shape_str(image.shape()));
  std::vector<double> out(image.numel());
  const double* a = image.data().data();
  const double* d = delta.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + d[i];
  return Tensor::from_data(image.shape(), std::move(out));
}

/// Draws a unit direction from direction_seed and returns epsilon * u; the
/// achieved norm matches epsilon to within rounding.
inline Tensor random_direction_delta(const Shape& shape, double epsilon,
                                     std::uint64_t direction_seed) {
  Rng rng = make_rng(mix_seed(direction_seed, 0xd17ec7));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> d(shape_numel(shape));
  double sq = 0.0;
  do {
    sq = 0.0;
    for (double& v : d) {
      v = normal(rng);
      sq += v * v;
    }
  } while (sq == 0.0);
  const double s = epsilon / std::sqrt(sq);
  for (double& v : d) v *= s;
  return Tensor::from_data(shape, std::move(d));
}

inline Tensor additive_perturb(const Tensor& image, double epsilon,
                               std::uint64_t direction_seed) {
  return additive_perturb(image,
                          random_direction_delta(image.shape(), epsilon,
                                                 direction_seed));
}

}  // namespace tta
