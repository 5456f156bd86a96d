#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "morelab/data_gen.hpp"
#include "morelab/model.hpp"

namespace morelab {

// ---------------------------------------------------------------- optimizer

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// In-place AdamW update with decoupled decay: w <- w - lr*wd*w, then
/// w <- w - lr * mhat / (sqrt(vhat) + eps). A non-finite gradient rejects the
/// whole step (parameters and state untouched) with an EvaluationError.
void adamw_step(std::span<Tensor* const> params, std::span<const std::vector<double>> grads, AdamWState& state,
                const AdamWConfig& config);
/// Same, reading each parameter's accumulated gradient (missing = zero).
void adamw_step(ParameterStore& store, AdamWState& state, const AdamWConfig& config);

// ---------------------------------------------------------------- training

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 32;
  double dropout = 0.5;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  FeatureFlags features;
  /// Also score the training set after every epoch.
  bool track_train_f1 = false;
  /// Stop once train micro-F1 reaches this value (requires track_train_f1).
  std::optional<double> target_train_f1;
  /// Evaluation workers; 0 = MORE_LAB_THREADS or the hardware count.
  std::size_t threads = 0;

  void validate() const;
  AdamWConfig optimizer() const { return {lr, beta1, beta2, eps, weight_decay}; }
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double dev_f1 = 0.0;
  std::optional<double> train_f1;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_dev_f1 = 0.0;

  /// epoch,loss,dev_f1[,train_f1]
  std::string csv() const;
};

/// Mini-batch training over every (entity, object) pair. Keeps the best-dev
/// parameters in `model` at return and, when `checkpoint` is set, saves them
/// there each time dev micro-F1 improves. A non-finite loss restores the last
/// good parameters and throws DivergenceError.
TrainResult train(MoreFormer& model, std::span<const PreparedInstance> train_set,
                  std::span<const PreparedInstance> dev_set, const TrainConfig& config,
                  const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

/// Mean cross-entropy of a set of pairs in one tape (no dropout).
double mean_loss(const MoreFormer& model, std::span<const PreparedInstance> instances);

std::size_t worker_threads(std::size_t requested = 0);

// ---------------------------------------------------------------- metrics

struct PairRecord {
  std::size_t instance = 0;
  std::size_t entity = 0;
  std::size_t object = 0;
  std::size_t gold = 0;
  std::size_t predicted = 0;
  Cell cell = Cell::kOneOne;
  std::size_t num_objects = 1;
};

/// Predictions for every pair, instance-parallel.
std::vector<PairRecord> predict_pairs(const MoreFormer& model, std::span<const PreparedInstance> instances,
                                      std::size_t threads = 0);

/// Gold-labelled records for every candidate pair (predicted = gold).
std::vector<PairRecord> gold_records(std::span<const Instance> instances, const RelationSchema& schema);

/// One JSON line per instance: {"id", "triples": [{entity_id, object_id, relation}]}.
void write_predictions(const std::filesystem::path& path, std::span<const PairRecord> records,
                       std::span<const Instance> instances, const RelationSchema& schema);
/// Aligns a prediction file with every candidate pair of `gold`. Unknown ids,
/// duplicate or missing pairs are InputErrors; unknown labels SchemaErrors.
std::vector<PairRecord> read_predictions(const std::filesystem::path& path, std::span<const Instance> gold,
                                         const RelationSchema& schema);

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Ratios with 0 for empty denominators; f1 = 2PR/(P+R) or 0.
Prf prf(std::size_t true_positive, std::size_t predicted, std::size_t gold);

struct PairCounts {
  std::size_t pairs = 0;
  std::size_t correct = 0;
  std::size_t predicted_positive = 0;  // non-none predictions
  std::size_t gold_positive = 0;       // non-none golds
  std::size_t true_positive = 0;       // non-none and equal
};

struct CellMetrics {
  Cell cell = Cell::kOneOne;
  PairCounts counts;
  std::size_t gold_none = 0;
  double none_ratio = 0.0;
  double accuracy = 0.0;
  Prf micro;
};

struct DisambiguationCounts {
  std::size_t true_positive = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;
  Prf scores;
};

struct DisambiguationReport {
  DisambiguationCounts full;
  DisambiguationCounts multi_object;
};

struct MetricsReport {
  std::vector<std::string> labels;
  PairCounts counts;
  double accuracy = 0.0;
  Prf micro;
  Prf macro;
  std::vector<Prf> per_label;  // non-none labels only
  std::vector<CellMetrics> cells;
  DisambiguationReport disambiguation;
  std::vector<std::vector<std::size_t>> confusion;  // [gold][predicted]

  std::string to_json() const;
  std::string to_table() const;
};

/// Counts-only evaluation of aligned label indices.
MetricsReport evaluate(std::span<const std::size_t> predicted, std::span<const std::size_t> gold,
                       const RelationSchema& schema);
/// Full report including the cardinality table and disambiguation scores.
MetricsReport evaluate(std::span<const PairRecord> records, const RelationSchema& schema);

struct Triple {
  std::size_t instance = 0;
  std::size_t entity = 0;
  std::size_t object = 0;
  std::size_t relation = 0;
};

/// A prediction counts iff its (instance, entity, object) has a gold triple and
/// both relations are non-none. `objects_per_instance` selects the Obj>1 subset.
DisambiguationReport disambiguation_eval(std::span<const Triple> predicted, std::span<const Triple> gold,
                                         std::span<const std::size_t> objects_per_instance, std::size_t none_index);

enum class KappaWeights { kLinear, kUnweighted };

/// 1 - sum(w*O) / sum(w*E) over a num_labels x num_labels table. Throws
/// InputError for mismatched/short inputs and EvaluationError when the
/// expected disagreement is zero.
double cohen_kappa_weighted(std::span<const std::size_t> a, std::span<const std::size_t> b, std::size_t num_labels,
                            KappaWeights weights = KappaWeights::kLinear);

// ---------------------------------------------------------------- ablation

enum class Feature { kPosition, kAttribute, kDepth };
inline constexpr std::array<Feature, 3> kAllFeatures{Feature::kPosition, Feature::kAttribute, Feature::kDepth};
std::string to_string(Feature feature);
bool enabled(const FeatureFlags& flags, Feature feature);

/// Copy of `prepared` whose `feature` input is randomized: position features,
/// caption words (re-tokenized from `instance`), or depth crops.
PreparedInstance mutate_feature(const PreparedInstance& prepared, const Instance& instance, Feature feature,
                                const Vocabulary& vocab, const RelationSchema& schema, const ModelConfig& config,
                                Rng& rng);

/// Counts mutations (out of `trials`) that change any logit bit.
std::size_t sensitive_mutations(const MoreFormer& model, const Instance& instance, Feature feature,
                                const Vocabulary& vocab, const RelationSchema& schema, std::size_t trials,
                                std::uint64_t seed);

/// Rows ordered as none, P, A, D, PA, PD, AD, PAD.
std::vector<FeatureFlags> ablation_grid();

struct AblationRow {
  FeatureFlags flags;
  std::vector<double> dev_f1;  // per seed
  double median_dev_f1 = 0.0;
  double test_accuracy = 0.0;  // of the median-dev seed
  double test_f1 = 0.0;
  bool purity_verified = false;
};

struct AblationReport {
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;

  std::string to_table() const;
  std::string to_json() const;
  const AblationRow& row(const FeatureFlags& flags) const;
};

/// One model per (cell, seed) with identical seeds across cells. Before
/// training, every disabled feature of the cell is checked to leave logits
/// bitwise unchanged under mutation; a violation throws EvaluationError.
AblationReport ablate(const Corpus& corpus, const Vocabulary& vocab, const RelationSchema& schema,
                      const ModelConfig& base, const TrainConfig& train_config, std::span<const FeatureFlags> grid,
                      std::span<const std::uint64_t> seeds, std::ostream* progress = nullptr);

}  // namespace morelab
