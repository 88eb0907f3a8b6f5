// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>

#include "stemfit/ndgrad/ops.hpp"
#include "stemfit/ndgrad/tensor.hpp"

namespace stemfit::model {

using ndgrad::BasicParameterList;
using ndgrad::BasicTensor;

struct EncoderConfig {
  std::size_t embed_dim = 64;
  std::size_t depth = 2;
  std::size_t heads = 2;
  std::size_t mlp_ratio = 4;
  std::size_t patch_dim = 256;
  std::size_t max_patches = 250;

  // Throws ConfigError on inconsistent sizes.
  void validate() const;
};

// Patch-grid geometry of one sequence, frequency-major.
struct PatchGrid {
  std::size_t n_freq = 5;
  std::size_t n_time = 50;
  std::size_t size() const { return n_freq * n_time; }
};

// Fixed 2-D sin-cos table [K x d]: the first d/2 columns encode the frequency
// patch index, the last d/2 the time patch index, each as
// [sin(p w_0) .. sin(p w_{d/4-1}), cos(p w_0) .. cos(p w_{d/4-1})] with
// w_i = 10000^(-i / (d/4)). Row k belongs to grid cell (k / n_time, k % n_time).
template <class T>
BasicTensor<T> positional_table(PatchGrid grid, std::size_t embed_dim);

// Pre-norm ViT over stacked sequences. Parameters are shared handles, so the
// views below and the list returned by parameters() alias the same storage.
template <class T>
class BasicEncoder {
 public:
  struct Linear {
    BasicTensor<T> w;  // [in x out]
    BasicTensor<T> b;  // [out]
  };
  struct Norm {
    BasicTensor<T> gain;
    BasicTensor<T> bias;
  };
  struct Block {
    Norm ln1;
    Linear wq, wk, wv, wo;
    Norm ln2;
    Linear fc1, fc2;
  };

  BasicEncoder(EncoderConfig config, std::uint64_t seed);

  // patches: [n_seq * K x patch_dim], each sequence laid out on `grid`.
  // Returns per-patch embeddings [n_seq * K x d].
  BasicTensor<T> forward(const BasicTensor<T>& patches, std::size_t n_seq, PatchGrid grid) const;

  const EncoderConfig& config() const noexcept { return config_; }
  BasicParameterList<T>& parameters() noexcept { return params_; }
  const BasicParameterList<T>& parameters() const noexcept { return params_; }

  const Linear& patch_projection() const noexcept { return proj_; }
  const Norm& final_norm() const noexcept { return final_; }

  // Independent copy with identical values.
  BasicEncoder clone() const;

 private:
  EncoderConfig config_;
  Linear proj_;
  std::vector<Block> blocks_;
  Norm final_;
  BasicParameterList<T> params_;
};

using Encoder = BasicEncoder<float>;
using Encoder64 = BasicEncoder<double>;

// Mean over the patch axis of each stacked sequence: [n_seq * K x d] -> [n_seq x d].
template <class T>
BasicTensor<T> pool(const BasicTensor<T>& z, std::size_t n_seq);

}  // namespace stemfit::model
