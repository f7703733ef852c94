#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "latentseg/tensor.hpp"

namespace latentseg {

// ---------------------------------------------------------------------------
// Errors

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Input data violates a declared invariant (label range, probability range).
struct ValidationError : Error {
  using Error::Error;
};
// Per-pixel channel sums deviate from 1 beyond tolerance.
struct NormalizationError : ValidationError {
  using ValidationError::ValidationError;
};
// Entry outside the admissible range (e.g. negative probability).
struct RangeError : ValidationError {
  using ValidationError::ValidationError;
};
// Tensor shapes do not agree.
struct DimensionError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
// Operation requested in a state that cannot serve it.
struct StateError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Class spaces

struct ClassSpace {
  int semantic_count = 0;                    // |C|
  int latent_count = 0;                      // |L|
  int ignore_index = 255;                    // excluded from every statistic
  std::vector<std::string> names;            // optional, |C| entries when set
  bool allow_latent_overflow = false;        // permit |L| > |C|

  ClassSpace() = default;
  ClassSpace(int semantic, int latent, int ignore = 255,
             std::vector<std::string> class_names = {},
             bool allow_overflow = false)
      : semantic_count(semantic),
        latent_count(latent),
        ignore_index(ignore),
        names(std::move(class_names)),
        allow_latent_overflow(allow_overflow) {
    validate();
  }

  void validate() const {
    if (semantic_count < 2)
      throw ConfigError("ClassSpace: semantic class count must be >= 2, got " +
                        std::to_string(semantic_count));
    if (latent_count < 1)
      throw ConfigError("ClassSpace: latent class count must be >= 1, got " +
                        std::to_string(latent_count));
    if (ignore_index >= 0 && ignore_index < semantic_count)
      throw ConfigError("ClassSpace: ignore_index " + std::to_string(ignore_index) +
                        " collides with semantic label range [0," +
                        std::to_string(semantic_count) + ")");
    if (latent_count > semantic_count && !allow_latent_overflow)
      throw ConfigError("ClassSpace: latent count " + std::to_string(latent_count) +
                        " exceeds semantic count " + std::to_string(semantic_count) +
                        "; set the latent-overflow override to allow this");
    if (!names.empty() && static_cast<int>(names.size()) != semantic_count)
      throw ConfigError("ClassSpace: names list has " + std::to_string(names.size()) +
                        " entries, expected " + std::to_string(semantic_count));
  }

  std::string class_name(int c) const {
    if (c >= 0 && c < static_cast<int>(names.size())) return names[c];
    return "class" + std::to_string(c);
  }
};

// ---------------------------------------------------------------------------
// Maps

enum class MapKind { semantic, latent };

inline const char* to_string(MapKind k) {
  return k == MapKind::semantic ? "semantic" : "latent";
}

// Per-pixel distribution over semantic or latent classes. `one_hot_rows`
// marks maps produced from labels, whose ignored pixels carry all-zero rows
// that downstream statistics must skip.
template <typename T>
struct ProbMap {
  Tensor<T> values;
  MapKind kind = MapKind::semantic;
  bool one_hot_rows = false;

  ProbMap() = default;
  ProbMap(Tensor<T> v, MapKind k, bool one_hot = false)
      : values(std::move(v)), kind(k), one_hot_rows(one_hot) {}

  int channels() const { return values.c(); }
};

constexpr double kProbSumTolerance = 1e-5;

template <typename T>
void validate_probmap(const ProbMap<T>& p, double tol = kProbSumTolerance) {
  const Tensor<T>& v = p.values;
  if (v.empty()) throw DimensionError("validate_probmap: empty map");
  double max_dev = 0.0;
  for (int n = 0; n < v.n(); ++n)
    for (int h = 0; h < v.h(); ++h)
      for (int w = 0; w < v.w(); ++w) {
        double sum = 0.0;
        for (int c = 0; c < v.c(); ++c) {
          double x = static_cast<double>(v(n, h, w, c));
          if (x < 0.0 || x > 1.0 + tol)
            throw RangeError("validate_probmap: entry " + std::to_string(x) +
                             " outside [0,1] at pixel (" + std::to_string(n) + "," +
                             std::to_string(h) + "," + std::to_string(w) + "," +
                             std::to_string(c) + ")");
          sum += x;
        }
        if (p.one_hot_rows && sum == 0.0) continue;  // ignored pixel
        max_dev = std::max(max_dev, std::abs(sum - 1.0));
      }
  if (max_dev > tol)
    throw NormalizationError(
        "validate_probmap: channel sums deviate from 1 by up to " +
        std::to_string(max_dev) + " (tolerance " + std::to_string(tol) + ")");
}

// Integer semantic labels, entries in [0,|C|) or ignore_index.
struct LabelMap {
  int n = 0, h = 0, w = 0;
  std::vector<std::int32_t> labels;

  LabelMap() = default;
  LabelMap(int n_, int h_, int w_)
      : n(n_), h(h_), w(w_),
        labels(static_cast<std::size_t>(n_) * h_ * w_, 0) {}

  std::int32_t& at(int ni, int hi, int wi) {
    return labels[(static_cast<std::size_t>(ni) * h + hi) * w + wi];
  }
  std::int32_t at(int ni, int hi, int wi) const {
    return labels[(static_cast<std::size_t>(ni) * h + hi) * w + wi];
  }
  std::size_t size() const { return labels.size(); }
};

template <typename T>
ProbMap<T> one_hot(const LabelMap& labels, const ClassSpace& space) {
  Tensor<T> out(labels.n, labels.h, labels.w, space.semantic_count);
  for (int n = 0; n < labels.n; ++n)
    for (int h = 0; h < labels.h; ++h)
      for (int w = 0; w < labels.w; ++w) {
        const std::int32_t v = labels.at(n, h, w);
        if (v == space.ignore_index) continue;  // all-zero row
        if (v < 0 || v >= space.semantic_count)
          throw ValidationError("one_hot: label " + std::to_string(v) +
                                " at pixel (" + std::to_string(n) + "," +
                                std::to_string(h) + "," + std::to_string(w) +
                                ") outside [0," +
                                std::to_string(space.semantic_count) +
                                ") and != ignore_index " +
                                std::to_string(space.ignore_index));
        out(n, h, w, v) = T(1);
      }
  return ProbMap<T>(std::move(out), MapKind::semantic, /*one_hot=*/true);
}

// Argmax over the channel axis; ties resolve to the lowest index.
template <typename T>
LabelMap argmax_map(const Tensor<T>& probs) {
  LabelMap out(probs.n(), probs.h(), probs.w());
  for (int n = 0; n < probs.n(); ++n)
    for (int h = 0; h < probs.h(); ++h)
      for (int w = 0; w < probs.w(); ++w) {
        int best = 0;
        T best_v = probs(n, h, w, 0);
        for (int c = 1; c < probs.c(); ++c)
          if (probs(n, h, w, c) > best_v) {
            best_v = probs(n, h, w, c);
            best = c;
          }
        out.at(n, h, w) = best;
      }
  return out;
}

// ---------------------------------------------------------------------------
// Batches

template <typename T>
struct Batch {
  Tensor<T> images;                 // (N,H,W,3), values in [0,1]
  std::optional<LabelMap> labels;   // present iff labeled
  bool labeled = false;

  void check() const {
    if (labeled && !labels)
      throw ValidationError("Batch: labeled batch without labels");
    if (!labeled && labels)
      throw ValidationError("Batch: unlabeled batch must not carry labels");
    if (labels && (labels->n != images.n() || labels->h != images.h() ||
                   labels->w != images.w()))
      throw DimensionError("Batch: image/label shape mismatch");
  }
};

// ---------------------------------------------------------------------------
// Run configuration

enum class ConsistencyVariant { cross_entropy, symmetric_kl };
enum class LatentMode { learned, manual, identity };
enum class Reduction { mean, sum };

inline std::string to_string(ConsistencyVariant v) {
  return v == ConsistencyVariant::cross_entropy ? "cross_entropy" : "symmetric_kl";
}
inline std::string to_string(LatentMode m) {
  switch (m) {
    case LatentMode::learned: return "learned";
    case LatentMode::manual: return "manual";
    default: return "identity";
  }
}
inline std::string to_string(Reduction r) {
  return r == Reduction::mean ? "mean" : "sum";
}

inline ConsistencyVariant consistency_variant_from_string(const std::string& s) {
  if (s == "cross_entropy") return ConsistencyVariant::cross_entropy;
  if (s == "symmetric_kl") return ConsistencyVariant::symmetric_kl;
  throw ConfigError("unknown consistency_variant: " + s);
}
inline LatentMode latent_mode_from_string(const std::string& s) {
  if (s == "learned") return LatentMode::learned;
  if (s == "manual") return LatentMode::manual;
  if (s == "identity") return LatentMode::identity;
  throw ConfigError("unknown latent_mode: " + s);
}
inline Reduction reduction_from_string(const std::string& s) {
  if (s == "mean") return Reduction::mean;
  if (s == "sum") return Reduction::sum;
  throw ConfigError("unknown reduction: " + s);
}

// Every hyperparameter, weight, schedule and seed of a training run.
// Defaults follow the published configuration where one exists; sizes and
// iteration counts default to the desk-scale setup.
struct RunConfig {
  // Objective weights and term switches.
  double lambda_adv = 0.01;
  double lambda_unlabeled = 0.1;
  bool use_latent_loss = true;
  bool use_cons_loss = true;
  bool use_adv_labeled = true;
  bool use_adv_unlabeled = true;

  // Latent class space.
  int max_latent = 20;
  bool allow_latent_overflow = false;
  LatentMode latent_mode = LatentMode::learned;
  std::string manual_map;  // CSV path, required for latent_mode=manual

  // Co-occurrence statistics. ema_alpha <= 0 means "auto"
  // (batch size / dataset size).
  double ema_alpha = -1.0;

  // Optimization.
  int warmup_iters = 500;
  double lr0 = 2.5e-4;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double disc_lr = 1e-4;
  int max_iters = 2000;
  int batch_size = 8;
  int seeds = 1;
  int seed0 = 0;
  ConsistencyVariant consistency_variant = ConsistencyVariant::cross_entropy;
  Reduction reduction = Reduction::mean;

  // Models.
  int backbone_width = 16;
  int disc_base_channels = 64;
  std::vector<int> aspp_dilations = {1, 2, 4, 8};

  // Data pipeline.
  double labeled_fraction = 0.125;
  int crop = 64;
  double scale_min = 0.5;
  double scale_max = 1.5;
  bool augment = true;

  // Discriminator training set composition: when true the fake term also
  // sees unlabeled predictions.
  bool disc_unlabeled_fakes = true;

  // Bookkeeping.
  int checkpoint_every = 0;  // 0 = final checkpoint only
  int log_every = 1;

  void validate() const {
    if (lambda_adv < 0 || lambda_unlabeled < 0)
      throw ConfigError("RunConfig: loss weights must be >= 0");
    if (batch_size < 1) throw ConfigError("RunConfig: batch_size must be >= 1");
    if (seeds < 1) throw ConfigError("RunConfig: seeds must be >= 1");
    if (max_iters < 1) throw ConfigError("RunConfig: max_iters must be >= 1");
    if (warmup_iters < 0) throw ConfigError("RunConfig: warmup_iters must be >= 0");
    if (max_latent < 1) throw ConfigError("RunConfig: max_latent must be >= 1");
    if (ema_alpha > 0 && ema_alpha >= 1.0)
      throw ConfigError("RunConfig: ema_alpha must lie in (0,1) or be auto");
    if (labeled_fraction <= 0 || labeled_fraction > 1)
      throw ConfigError("RunConfig: labeled_fraction must lie in (0,1]");
    if (scale_min <= 0 || scale_max < scale_min)
      throw ConfigError("RunConfig: invalid scale range");
    if (crop < 8) throw ConfigError("RunConfig: crop must be >= 8");
    if (latent_mode == LatentMode::manual && manual_map.empty())
      throw ConfigError("RunConfig: latent_mode=manual requires manual_map");
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{
      {"lambda_adv", c.lambda_adv},
      {"lambda_unlabeled", c.lambda_unlabeled},
      {"use_latent_loss", c.use_latent_loss},
      {"use_cons_loss", c.use_cons_loss},
      {"use_adv_labeled", c.use_adv_labeled},
      {"use_adv_unlabeled", c.use_adv_unlabeled},
      {"max_latent", c.max_latent},
      {"allow_latent_overflow", c.allow_latent_overflow},
      {"latent_mode", to_string(c.latent_mode)},
      {"manual_map", c.manual_map},
      {"ema_alpha", c.ema_alpha > 0 ? nlohmann::json(c.ema_alpha)
                                    : nlohmann::json("auto")},
      {"warmup_iters", c.warmup_iters},
      {"lr0", c.lr0},
      {"momentum", c.momentum},
      {"weight_decay", c.weight_decay},
      {"disc_lr", c.disc_lr},
      {"max_iters", c.max_iters},
      {"batch_size", c.batch_size},
      {"seeds", c.seeds},
      {"seed0", c.seed0},
      {"consistency_variant", to_string(c.consistency_variant)},
      {"reduction", to_string(c.reduction)},
      {"backbone_width", c.backbone_width},
      {"disc_base_channels", c.disc_base_channels},
      {"aspp_dilations", c.aspp_dilations},
      {"labeled_fraction", c.labeled_fraction},
      {"crop", c.crop},
      {"scale_min", c.scale_min},
      {"scale_max", c.scale_max},
      {"augment", c.augment},
      {"disc_unlabeled_fakes", c.disc_unlabeled_fakes},
      {"checkpoint_every", c.checkpoint_every},
      {"log_every", c.log_every}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  RunConfig d;
  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) j.at(key).get_to(dst);
  };
  c = d;
  get("lambda_adv", c.lambda_adv);
  get("lambda_unlabeled", c.lambda_unlabeled);
  get("use_latent_loss", c.use_latent_loss);
  get("use_cons_loss", c.use_cons_loss);
  get("use_adv_labeled", c.use_adv_labeled);
  get("use_adv_unlabeled", c.use_adv_unlabeled);
  get("max_latent", c.max_latent);
  get("allow_latent_overflow", c.allow_latent_overflow);
  if (j.contains("latent_mode"))
    c.latent_mode = latent_mode_from_string(j.at("latent_mode").get<std::string>());
  get("manual_map", c.manual_map);
  if (j.contains("ema_alpha")) {
    const auto& a = j.at("ema_alpha");
    c.ema_alpha = a.is_string() ? -1.0 : a.get<double>();
  }
  get("warmup_iters", c.warmup_iters);
  get("lr0", c.lr0);
  get("momentum", c.momentum);
  get("weight_decay", c.weight_decay);
  get("disc_lr", c.disc_lr);
  get("max_iters", c.max_iters);
  get("batch_size", c.batch_size);
  get("seeds", c.seeds);
  get("seed0", c.seed0);
  if (j.contains("consistency_variant"))
    c.consistency_variant =
        consistency_variant_from_string(j.at("consistency_variant").get<std::string>());
  if (j.contains("reduction"))
    c.reduction = reduction_from_string(j.at("reduction").get<std::string>());
  get("backbone_width", c.backbone_width);
  get("disc_base_channels", c.disc_base_channels);
  get("aspp_dilations", c.aspp_dilations);
  get("labeled_fraction", c.labeled_fraction);
  get("crop", c.crop);
  get("scale_min", c.scale_min);
  get("scale_max", c.scale_max);
  get("augment", c.augment);
  get("disc_unlabeled_fakes", c.disc_unlabeled_fakes);
  get("checkpoint_every", c.checkpoint_every);
  get("log_every", c.log_every);
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  nlohmann::json j;
  in >> j;
  return j.get<RunConfig>();
}

inline void save_run_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config file: " + path);
  nlohmann::json j = cfg;
  out << j.dump(2) << "\n";
}

}  // namespace latentseg
