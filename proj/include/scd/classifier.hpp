#pragma once

// The black-box classifier f: a two-layer perceptron over concatenated row
// embeddings.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "scd/autodiff.hpp"
#include "scd/embedding.hpp"
#include "scd/nn.hpp"
#include "scd/tabular.hpp"

namespace scd {

struct ClassifierNet {
  std::size_t input_width = 0;
  std::size_t hidden = 0;
  std::size_t classes = 0;
  Parameters params;
  std::string label_name;
  std::vector<std::string> class_names;

  static ClassifierNet create(std::size_t input_width, std::size_t hidden, std::size_t classes, Rng& rng) {
    ClassifierNet f{input_width, hidden, classes, {}, {}, {}};
    init_dense(f.params, "hidden", input_width, hidden, rng);
    init_dense(f.params, "logits", hidden, classes, rng);
    return f;
  }

  ad::Var forward(const Binding& b, const ad::Var& z) const {
    if (z.cols() != input_width)
      throw Error("classifier: input width " + std::to_string(z.cols()) + " != " + std::to_string(input_width));
    return dense(b, "logits", ad::gelu(dense(b, "hidden", z)));
  }
};

/// Logits for a batch of embeddings {B, C, d}, shape {B, K}.
inline Tensor classifier_forward(const Tensor& z, const ClassifierNet& f) {
  if (z.size() == 0) return Tensor({0, f.classes});
  const Binding b = bind_parameters(f.params, false);
  return f.forward(b, ad::constant(z.reshaped({z.rows(), z.cols()}))).value();
}

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  const double mx = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (double& v : p) z += (v = std::exp(v - mx));
  for (double& v : p) v /= z;
  return p;
}

inline std::vector<std::size_t> predict_classes(const Tensor& z, const ClassifierNet& f) {
  const Tensor logits = classifier_forward(z, f);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto r = logits.row(i);
    out.push_back(static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin()));
  }
  return out;
}

inline std::vector<std::size_t> predict_classes(const std::vector<EncodedRow>& rows, const ClassifierNet& f,
                                                const EmbeddingDictionary& dict) {
  return predict_classes(embed_rows(rows, dict), f);
}

/// Fits f on frozen embeddings of the dataset rows with mean cross-entropy.
inline ClassifierNet train_classifier(const Dataset& data, const EmbeddingDictionary& dict, std::size_t hidden,
                                      const TrainConfig& cfg, TrainingLog* log = nullptr,
                                      const std::function<void(std::size_t, double)>& on_epoch = {}) {
  if (data.rows.empty()) throw Error("train_classifier: empty dataset");
  Rng rng(cfg.seed);
  ClassifierNet f = ClassifierNet::create(dict.row_width(), hidden, data.class_count(), rng);
  f.label_name = data.label_name;
  f.class_names = data.class_names;
  Optimizer opt(cfg.optimizer);
  const Tensor all = embed_rows(data.rows, dict);
  const std::size_t width = dict.row_width();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& batch : minibatches(data.size(), cfg.batch, rng)) {
      Tensor z = Tensor::matrix(batch.size(), width);
      std::vector<std::size_t> targets;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        std::copy_n(all.data.data() + batch[i] * width, width, z.data.data() + i * width);
        targets.push_back(data.labels[batch[i]]);
      }
      const Binding b = bind_parameters(f.params, true);
      const ad::Var loss = ad::cross_entropy(f.forward(b, ad::constant(std::move(z))), std::move(targets));
      opt.step(f.params, gradients(loss, b));
      total += loss.value().data[0] * double(batch.size());
      count += batch.size();
    }
    const double mean_loss = total / double(count);
    if (log) log->epoch_loss.push_back(mean_loss);
    if (on_epoch) on_epoch(epoch, mean_loss);
  }
  return f;
}

inline double classifier_accuracy(const Dataset& data, const ClassifierNet& f, const EmbeddingDictionary& dict) {
  const auto pred = predict_classes(data.rows, f, dict);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == data.labels[i];
  return pred.empty() ? 0.0 : double(ok) / double(pred.size());
}

}  // namespace scd
