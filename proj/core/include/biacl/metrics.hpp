#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "biacl/model.hpp"
#include "biacl/tensor.hpp"

namespace biacl {

// Corpus-level 4-gram BLEU in [0,100]: clipped n-gram precisions combined
// by geometric mean with a brevity penalty. Without smoothing any zero
// precision zeroes the score; with `smooth` every precision gets add-one
// smoothing (clipped+1)/(total+1). Sentences are whitespace-tokenized,
// case-sensitive, one reference per hypothesis.
double corpus_bleu(const std::vector<std::string>& hypotheses,
                   const std::vector<std::string>& references,
                   bool smooth = false);

// Partition function Z(s) = sum_i exp(s^T w_i) evaluated at every
// eigenvector s of W^T W (ascending eigenvalues). Each eigenvector is
// oriented to the sign giving the larger Z — an orientation that depends
// only on the inner products s^T w_i, so it is stable under right
// rotations of W; exact ties fall back to making the largest-magnitude
// component positive. W is [n_vectors, dim], all finite.
std::vector<double> partition_values(const Tensor& w);

// I1 = min Z / max Z over the partition values; 1 means perfectly
// isotropic. Always in (0, 1].
double isotropy_i1(const Tensor& w);

// I2 = sqrt( sum (Z - mean)^2 / (count * mean^2) ): the population
// standard deviation of Z normalized by its mean; 0 means isotropic.
double isotropy_i2(const Tensor& w);

// Pooled (mean over positions) encoder states for up to `n` sentences
// sampled without replacement (seeded); rows stack into [k, d_model].
Tensor sample_encoder_states(const Model& model,
                             const std::vector<std::vector<int>>& sentences,
                             int lang, int64_t n = 128, uint64_t seed = 0);

// Greedy-decodes each sampled sentence (encode with src_lang, generate
// with dec_lang until the end marker or the model window is full), then
// pools the decoder states over the produced positions. Rows stack into
// [k, d_model].
Tensor sample_decoder_states(const Model& model,
                             const std::vector<std::vector<int>>& sentences,
                             int src_lang, int dec_lang, int eos_id,
                             int64_t n = 128, uint64_t seed = 0);

}  // namespace biacl
