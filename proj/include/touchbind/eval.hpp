#pragma once

// Evaluation protocols over frozen touch embeddings: zero-shot prompt
// classification, zero-shot grasp prediction, linear probing and
// cross-modal retrieval mAP.

#include <Eigen/Dense>
#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "touchbind/anchor.hpp"
#include "touchbind/checkpoint.hpp"
#include "touchbind/common.hpp"
#include "touchbind/datagen.hpp"
#include "touchbind/encoder.hpp"
#include "touchbind/prompts.hpp"

namespace touchbind {

inline constexpr std::string_view kDefaultTemplate = "This feels like [CLS]";

/// Index of the largest entry; ties go to the lowest index.
inline int argmax_lowest(const Eigen::Ref<const Eigen::VectorXd>& scores) {
  int best = 0;
  for (Eigen::Index i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = static_cast<int>(i);
  return best;
}

inline double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return a.dot(b) / (a.norm() * b.norm()); }

struct ZeroShotResult {
  int prediction = 0;
  Eigen::VectorXd scores;
};

/// Text-prompt embedding of every class under one template (rows).
inline Eigen::MatrixXd class_text_matrix(const AnchorSpace& anchor, std::span<const std::string> class_names,
                                         std::string_view template_text, const PromptTemplateRegistry& registry) {
  require(class_names.size() >= 2, "zero-shot: need at least 2 classes");
  Eigen::MatrixXd t(static_cast<Eigen::Index>(class_names.size()), anchor.dim());
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    t.row(static_cast<Eigen::Index>(c)) =
        anchor.text(template_text, anchor.class_index(class_names[c]), registry).transpose();
  }
  return t;
}

inline ZeroShotResult zero_shot_classify(const Eigen::VectorXd& touch_embedding,
                                         std::span<const std::string> class_names, std::string_view template_text,
                                         const PromptTemplateRegistry& registry, const AnchorSpace& anchor) {
  const Eigen::MatrixXd text = class_text_matrix(anchor, class_names, template_text, registry);
  ZeroShotResult r;
  r.scores = text * touch_embedding / touch_embedding.norm();  // text rows are unit
  r.prediction = argmax_lowest(r.scores);
  return r;
}

/// 0 = stable ("lifted in the air"), 1 = slip ("falling on the ground").
inline int zero_shot_grasp(const Eigen::VectorXd& touch_embedding, const AnchorSpace& anchor) {
  Eigen::Vector2d s(anchor.grasp_text(0).dot(touch_embedding), anchor.grasp_text(1).dot(touch_embedding));
  return argmax_lowest(s);
}

// --- linear probe -------------------------------------------------------------

struct ProbeConfig {
  int iterations = 500;
  double learning_rate = 0.1;
  double l2 = 1e-4;
};

struct ProbeResult {
  double accuracy = 0.0;
  double train_accuracy = 0.0;
  int unseen_test_samples = 0;  // test labels absent from training; always counted wrong
};

/// Multinomial logistic regression by full-batch gradient descent on frozen
/// features (rows), starting from zero weights.
inline ProbeResult linear_probe(const Eigen::MatrixXd& train_x, std::span<const int> train_y,
                                const Eigen::MatrixXd& test_x, std::span<const int> test_y,
                                const ProbeConfig& cfg = {}) {
  require(train_x.rows() == static_cast<Eigen::Index>(train_y.size()) &&
              test_x.rows() == static_cast<Eigen::Index>(test_y.size()),
          "probe: features and labels differ in count");
  require(train_x.cols() == test_x.cols(), "probe: train/test feature dims differ");
  require(!train_y.empty() && !test_y.empty(), "probe: empty split");
  int n_classes = 0;
  for (int y : train_y) n_classes = std::max(n_classes, y + 1);
  for (int y : test_y) n_classes = std::max(n_classes, y + 1);
  std::vector<bool> seen(n_classes, false);
  for (int y : train_y) {
    require(y >= 0, "probe: negative label");
    seen[y] = true;
  }
  require(std::count(seen.begin(), seen.end(), true) >= 2, "probe: need at least 2 classes in training labels");

  const Eigen::Index n = train_x.rows(), d = train_x.cols();
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d, n_classes);
  Eigen::RowVectorXd bias = Eigen::RowVectorXd::Zero(n_classes);
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, n_classes);
  for (Eigen::Index i = 0; i < n; ++i) onehot(i, train_y[i]) = 1.0;

  auto predict = [&](const Eigen::MatrixXd& x) {
    Eigen::MatrixXd logits = (x * w).rowwise() + bias;
    std::vector<int> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      int best = -1;
      for (int c = 0; c < n_classes; ++c)
        if (seen[c] && (best < 0 || logits(i, c) > logits(i, best))) best = c;
      out[static_cast<std::size_t>(i)] = best;
    }
    return out;
  };

  for (int it = 0; it < cfg.iterations; ++it) {
    Eigen::MatrixXd logits = (train_x * w).rowwise() + bias;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mx = logits.row(i).maxCoeff();
      logits.row(i) = (logits.row(i).array() - mx).exp();
      logits.row(i) /= logits.row(i).sum();
    }
    const Eigen::MatrixXd g = (logits - onehot) / static_cast<double>(n);
    w -= cfg.learning_rate * (train_x.transpose() * g + cfg.l2 * w);
    bias -= cfg.learning_rate * g.colwise().sum();
  }

  ProbeResult r;
  const auto test_pred = predict(test_x);
  int correct = 0;
  for (std::size_t i = 0; i < test_y.size(); ++i) {
    if (test_y[i] >= n_classes || !seen[test_y[i]]) {
      ++r.unseen_test_samples;
      continue;
    }
    correct += test_pred[i] == test_y[i];
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(test_y.size());
  const auto train_pred = predict(train_x);
  int train_correct = 0;
  for (std::size_t i = 0; i < train_y.size(); ++i) train_correct += train_pred[i] == train_y[i];
  r.train_accuracy = static_cast<double>(train_correct) / static_cast<double>(train_y.size());
  return r;
}

// --- retrieval ----------------------------------------------------------------

/// (1/R) * sum over positive ranks k of precision@k. nullopt when there are
/// no positives.
inline std::optional<double> average_precision(std::span<const std::uint8_t> ranked_relevance) {
  double sum = 0;
  int hits = 0;
  for (std::size_t k = 0; k < ranked_relevance.size(); ++k) {
    if (!ranked_relevance[k]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  if (hits == 0) return std::nullopt;
  return sum / hits;
}

struct RetrievalTask {
  Eigen::MatrixXd queries;  // rows
  std::vector<int> query_labels;
  Eigen::MatrixXd gallery;  // rows
  std::vector<int> gallery_labels;
};

struct RetrievalResult {
  double mean_ap = 0.0;
  int scored_queries = 0;
  int excluded_queries = 0;  // no positive in the gallery
};

/// Gallery order for one query: cosine descending, ties by gallery index.
inline std::vector<std::size_t> rank_gallery(const Eigen::VectorXd& scores) {
  std::vector<std::size_t> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[static_cast<Eigen::Index>(a)] > scores[static_cast<Eigen::Index>(b)]; });
  return order;
}

inline RetrievalResult cross_modal_retrieval(const RetrievalTask& task) {
  require(task.gallery.rows() > 0, "retrieval: empty gallery");
  require(task.queries.rows() == static_cast<Eigen::Index>(task.query_labels.size()) &&
              task.gallery.rows() == static_cast<Eigen::Index>(task.gallery_labels.size()),
          "retrieval: embeddings and labels differ in count");
  require(task.queries.cols() == task.gallery.cols(), "retrieval: query and gallery dims differ");
  Eigen::VectorXd gnorm = task.gallery.rowwise().norm();
  const Eigen::MatrixXd scores = (task.queries * task.gallery.transpose()).array().rowwise() / gnorm.transpose().array();
  RetrievalResult r;
  double sum = 0;
  std::vector<std::uint8_t> rel(static_cast<std::size_t>(task.gallery.rows()));
  for (Eigen::Index q = 0; q < task.queries.rows(); ++q) {
    const auto order = rank_gallery(scores.row(q).transpose());
    for (std::size_t k = 0; k < order.size(); ++k) rel[k] = task.gallery_labels[order[k]] == task.query_labels[q];
    if (const auto ap = average_precision(rel)) {
      sum += *ap;
      ++r.scored_queries;
    } else {
      ++r.excluded_queries;
    }
  }
  r.mean_ap = r.scored_queries ? sum / r.scored_queries : 0.0;
  return r;
}

// --- checkpoint-level harness ------------------------------------------------

inline AnchorSpace anchor_from_checkpoint(const Checkpoint& ck) { return AnchorSpace(ck.anchor, ck.class_names); }

/// Touch embeddings of one split, in dataset order. Sensor blocks come from
/// prototype resolution unless `true_sensors` is set.
struct SplitEmbeddings {
  std::vector<std::size_t> samples;
  std::vector<int> sensors;
  Eigen::MatrixXd touch;
};

inline SplitEmbeddings embed_split(const Checkpoint& ck, const Dataset& ds, Split split, bool true_sensors = false) {
  require(ck.encoder().height == ds.manifest.height && ck.encoder().width == ds.manifest.width,
          "checkpoint image size does not match dataset");
  require(ck.class_names == ds.manifest.class_names, "checkpoint and dataset disagree on class names");
  SplitEmbeddings out;
  out.samples = ds.indices_in(split);
  std::vector<const Image*> imgs;
  for (std::size_t i : out.samples) {
    const auto& s = ds.samples[i];
    imgs.push_back(&s.touch);
    int k = true_sensors ? s.touch.sensor_id : resolve_sensor(s.touch, ck.prototypes);
    if (k >= ck.encoder().num_sensors) k = 0;
    out.sensors.push_back(k);
  }
  out.touch = encode_batch<float>(ck.params, imgs, out.sensors);
  return out;
}

inline std::vector<int> material_labels(const Dataset& ds, std::span<const std::size_t> samples) {
  std::vector<int> y;
  for (std::size_t i : samples) y.push_back(ds.samples[i].latent.material_class);
  return y;
}

inline double zero_shot_accuracy(const Eigen::MatrixXd& touch, std::span<const int> labels, const AnchorSpace& anchor,
                                 std::string_view template_text, const PromptTemplateRegistry& registry) {
  require(touch.rows() == static_cast<Eigen::Index>(labels.size()) && !labels.empty(),
          "zero-shot: embeddings and labels differ in count");
  const Eigen::MatrixXd text = class_text_matrix(anchor, anchor.class_names(), template_text, registry);
  const Eigen::MatrixXd scores = touch * text.transpose();
  int correct = 0;
  for (Eigen::Index i = 0; i < touch.rows(); ++i) correct += argmax_lowest(scores.row(i).transpose()) == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

inline double grasp_accuracy(const Eigen::MatrixXd& touch, const Dataset& ds, std::span<const std::size_t> samples,
                             const AnchorSpace& anchor) {
  require(!samples.empty(), "grasp: empty split");
  int correct = 0;
  for (std::size_t r = 0; r < samples.size(); ++r) {
    const int pred = zero_shot_grasp(touch.row(static_cast<Eigen::Index>(r)).transpose(), anchor);
    correct += (pred == 0) == ds.samples[samples[r]].latent.grasp_stable;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

/// Gallery embeddings of the given samples in another modality.
inline Eigen::MatrixXd gallery_embeddings(const Dataset& ds, std::span<const std::size_t> samples,
                                          const AnchorSpace& anchor, Modality modality,
                                          const PromptTemplateRegistry& registry,
                                          std::string_view template_text = kDefaultTemplate) {
  Eigen::MatrixXd g(static_cast<Eigen::Index>(samples.size()), anchor.dim());
  for (std::size_t r = 0; r < samples.size(); ++r) {
    const LatentSample& l = ds.samples[samples[r]].latent;
    Embedding e;
    switch (modality) {
      case Modality::kVision: e = anchor.vision(l); break;
      case Modality::kAudio: e = anchor.audio(l); break;
      case Modality::kText: e = anchor.text(template_text, l.material_class, registry); break;
      case Modality::kTouch: throw ValidationError("retrieval gallery must be vision, text or audio");
    }
    g.row(static_cast<Eigen::Index>(r)) = e.transpose();
  }
  return g;
}

inline RetrievalResult touch_retrieval(const Eigen::MatrixXd& touch, const Dataset& ds,
                                       std::span<const std::size_t> samples, const AnchorSpace& anchor,
                                       Modality modality, const PromptTemplateRegistry& registry) {
  RetrievalTask task;
  task.queries = touch;
  task.gallery = gallery_embeddings(ds, samples, anchor, modality, registry);
  for (std::size_t i : samples) {
    task.query_labels.push_back(ds.samples[i].latent.object_id);
    task.gallery_labels.push_back(ds.samples[i].latent.object_id);
  }
  return cross_modal_retrieval(task);
}

}  // namespace touchbind
