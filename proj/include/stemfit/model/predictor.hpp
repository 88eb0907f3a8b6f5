// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "stemfit/ndgrad/tensor.hpp"

namespace stemfit::model {

using ndgrad::BasicParameterList;
using ndgrad::BasicTensor;

struct PredictorConfig {
  std::size_t layers = 4;    // L linear maps
  std::size_t hidden = 128;  // m
  std::size_t dim = 64;      // d, input and output width
  std::size_t cond_dim = 512;  // p

  void validate() const;
};

// Per-patch MLP conditioned by FiLM:
//   h_1 = W_0 z + b_0
//   h_{l+1} = W_l ReLU(gamma_l(c) * h_l + beta_l(c)) + b_l      l = 1 .. L-1
// so FiLM + ReLU follows each of the first L-1 linear maps and the last one
// is plain. gamma_l and beta_l are affine in c; at initialisation gamma = 1
// and beta = 0, which makes the network an unconditioned ReLU MLP.
template <class T>
class BasicFilmPredictor {
 public:
  struct Linear {
    BasicTensor<T> w;
    BasicTensor<T> b;
  };
  struct Film {
    Linear gamma;  // [p x m], [m]
    Linear beta;
  };

  BasicFilmPredictor(PredictorConfig config, std::uint64_t seed);

  // z: [n_seq * K x d]; cond: [n_seq x p], one conditioning row per sequence.
  BasicTensor<T> forward(const BasicTensor<T>& z, const BasicTensor<T>& cond,
                         std::size_t n_seq) const;

  const PredictorConfig& config() const noexcept { return config_; }
  BasicParameterList<T>& parameters() noexcept { return params_; }
  const BasicParameterList<T>& parameters() const noexcept { return params_; }

  std::vector<Linear>& linears() noexcept { return linears_; }
  std::vector<Film>& films() noexcept { return films_; }

 private:
  PredictorConfig config_;
  std::vector<Linear> linears_;
  std::vector<Film> films_;
  BasicParameterList<T> params_;
};

using FilmPredictor = BasicFilmPredictor<float>;
using FilmPredictor64 = BasicFilmPredictor<double>;

}  // namespace stemfit::model
