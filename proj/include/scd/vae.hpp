#pragma once

// Gaussian VAE over row embeddings. Its ELBO serves as the plausibility
// regulariser of the DiCE-VAE baseline.

#include <cmath>
#include <functional>

#include "scd/autodiff.hpp"
#include "scd/embedding.hpp"
#include "scd/nn.hpp"
#include "scd/tabular.hpp"

namespace scd {

struct TabularVAE {
  std::size_t input_width = 0;
  std::size_t hidden = 0;
  std::size_t latent = 0;
  Parameters params;

  static TabularVAE create(std::size_t input_width, std::size_t hidden, std::size_t latent, Rng& rng) {
    TabularVAE m{input_width, hidden, latent, {}};
    init_dense(m.params, "enc.hidden", input_width, hidden, rng);
    init_dense(m.params, "enc.mean", hidden, latent, rng);
    init_dense(m.params, "enc.logvar", hidden, latent, rng, /*zero=*/true);
    init_dense(m.params, "dec.hidden", latent, hidden, rng);
    init_dense(m.params, "dec.out", hidden, input_width, rng);
    return m;
  }

  struct Terms {
    ad::Var reconstruction;  // batch mean of -||decode(z) - x||^2
    ad::Var kl;              // batch mean of KL(q(z|x) || N(0, I))
    ad::Var elbo;            // reconstruction - kl
  };

  /// Single-sample reparametrised ELBO; `noise` is B x latent standard normal.
  Terms terms(const Binding& b, const ad::Var& x, const Tensor& noise) const {
    if (x.cols() != input_width)
      throw Error("vae: input width " + std::to_string(x.cols()) + " != " + std::to_string(input_width));
    if (noise.rows() != x.rows() || noise.cols() != latent) throw Error("vae: noise shape mismatch");
    const double inv_batch = 1.0 / double(x.rows());
    const ad::Var h = ad::gelu(dense(b, "enc.hidden", x));
    const ad::Var mu = dense(b, "enc.mean", h);
    const ad::Var logvar = dense(b, "enc.logvar", h);
    const ad::Var z = ad::add(mu, ad::mul(ad::exp(ad::scale(logvar, 0.5)), ad::constant(noise)));
    const ad::Var recon = dense(b, "dec.out", ad::gelu(dense(b, "dec.hidden", z)));
    const ad::Var rec = ad::scale(ad::squared_distance(recon, x), -inv_batch);
    // 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar)
    const ad::Var kl_sum = ad::add_scalar(
        ad::sub(ad::add(ad::squared_norm(mu), ad::sum(ad::exp(logvar))), ad::sum(logvar)), -double(mu.size()));
    const ad::Var kl = ad::scale(kl_sum, 0.5 * inv_batch);
    return {rec, kl, ad::sub(rec, kl)};
  }
};

inline double vae_elbo(const Tensor& z, const TabularVAE& model, Rng& rng) {
  const Tensor x = z.reshaped({z.rows(), z.cols()});
  const Binding b = bind_parameters(model.params, false);
  return model.terms(b, ad::constant(x), gaussian_like({x.rows(), model.latent}, rng)).elbo.value().data[0];
}

/// Fits the VAE on frozen row embeddings by maximising the ELBO.
inline TabularVAE train_vae(const Dataset& data, const EmbeddingDictionary& dict, std::size_t hidden, std::size_t latent,
                            const TrainConfig& cfg, TrainingLog* log = nullptr,
                            const std::function<void(std::size_t, double)>& on_epoch = {}) {
  if (data.rows.empty()) throw Error("train_vae: empty dataset");
  Rng rng(cfg.seed);
  TabularVAE model = TabularVAE::create(dict.row_width(), hidden, latent, rng);
  Optimizer opt(cfg.optimizer);
  const Tensor all = embed_rows(data.rows, dict);
  const std::size_t width = dict.row_width();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& batch : minibatches(data.size(), cfg.batch, rng)) {
      Tensor x = Tensor::matrix(batch.size(), width);
      for (std::size_t i = 0; i < batch.size(); ++i)
        std::copy_n(all.data.data() + batch[i] * width, width, x.data.data() + i * width);
      const Binding b = bind_parameters(model.params, true);
      const auto t = model.terms(b, ad::constant(std::move(x)), gaussian_like({batch.size(), latent}, rng));
      const ad::Var loss = ad::scale(t.elbo, -1.0);
      opt.step(model.params, gradients(loss, b));
      total += loss.value().data[0] * double(batch.size());
      count += batch.size();
    }
    const double mean_loss = total / double(count);
    if (log) log->epoch_loss.push_back(mean_loss);
    if (on_epoch) on_epoch(epoch, mean_loss);
  }
  return model;
}

}  // namespace scd
