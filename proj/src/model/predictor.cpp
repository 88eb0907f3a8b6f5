// SPDX-License-Identifier: Apache-2.0
#include "stemfit/model/predictor.hpp"

#include <cmath>
#include <string>

#include "stemfit/common/error.hpp"
#include "stemfit/common/rng.hpp"
#include "stemfit/ndgrad/ops.hpp"

namespace stemfit::model {

using namespace stemfit::ndgrad;

void PredictorConfig::validate() const {
  if (layers < 2) throw ConfigError("predictor: layers must be at least 2");
  if (hidden == 0 || dim == 0 || cond_dim == 0) {
    throw ConfigError("predictor: hidden, dim and cond_dim must be positive");
  }
}

template <class T>
BasicFilmPredictor<T>::BasicFilmPredictor(PredictorConfig config, std::uint64_t seed)
    : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t m = config_.hidden;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::size_t in = l == 0 ? config_.dim : m;
    const std::size_t out = l + 1 == config_.layers ? config_.dim : m;
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<T> w(in * out);
    for (auto& x : w) x = static_cast<T>(static_cast<float>(rng.uniform(-bound, bound)));
    Linear lin{BasicTensor<T>({in, out}, std::move(w), true), BasicTensor<T>::zeros({out}, true)};
    const std::string name = "layer" + std::to_string(l);
    params_.push_back({name + ".w", lin.w, true});
    params_.push_back({name + ".b", lin.b, false});
    linears_.push_back(lin);
  }
  for (std::size_t l = 0; l + 1 < config_.layers; ++l) {
    Film f;
    f.gamma = {BasicTensor<T>::zeros({config_.cond_dim, m}, true), BasicTensor<T>::full({m}, T(1), true)};
    f.beta = {BasicTensor<T>::zeros({config_.cond_dim, m}, true), BasicTensor<T>::zeros({m}, true)};
    const std::string name = "film" + std::to_string(l);
    params_.push_back({name + ".gamma.w", f.gamma.w, true});
    params_.push_back({name + ".gamma.b", f.gamma.b, false});
    params_.push_back({name + ".beta.w", f.beta.w, true});
    params_.push_back({name + ".beta.b", f.beta.b, false});
    films_.push_back(f);
  }
  require_unique_names(params_);
}

template <class T>
BasicTensor<T> BasicFilmPredictor<T>::forward(const BasicTensor<T>& z, const BasicTensor<T>& cond,
                                              std::size_t n_seq) const {
  if (z.rank() != 2 || z.dim(1) != config_.dim) {
    throw ShapeError("predictor: expected input width " + std::to_string(config_.dim) + ", got " +
                     to_string(z.shape()));
  }
  if (cond.rank() != 2 || cond.dim(0) != n_seq || cond.dim(1) != config_.cond_dim) {
    throw ShapeError("predictor: expected conditioning [" + std::to_string(n_seq) + "x" +
                     std::to_string(config_.cond_dim) + "], got " + to_string(cond.shape()));
  }
  if (n_seq == 0 || z.dim(0) % n_seq != 0) {
    throw ShapeError("predictor: " + to_string(z.shape()) + " does not split into " +
                     std::to_string(n_seq) + " sequences");
  }
  const std::size_t k = z.dim(0) / n_seq;
  auto lin = [](const BasicTensor<T>& x, const Linear& l) { return add(matmul(x, l.w), l.b); };
  BasicTensor<T> h = z;
  for (std::size_t l = 0; l + 1 < linears_.size(); ++l) {
    h = lin(h, linears_[l]);
    const auto gamma = repeat_rows(lin(cond, films_[l].gamma), k);
    const auto beta = repeat_rows(lin(cond, films_[l].beta), k);
    h = relu(add(mul(gamma, h), beta));
  }
  return lin(h, linears_.back());
}

template class BasicFilmPredictor<float>;
template class BasicFilmPredictor<double>;

}  // namespace stemfit::model
