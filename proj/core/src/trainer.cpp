#include "crcfp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "crcfp/ops.hpp"

namespace crcfp {
namespace {

// Per-pixel max probability and argmax of a {1,1,N,C} tensor.
void confidence_and_label(const Tensor& probs, std::vector<double>& conf, std::vector<int>& label) {
  const std::size_t n = probs.shape().pixels();
  const int c = probs.c();
  conf.resize(n);
  label.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = probs.data() + i * c;
    const int best = static_cast<int>(std::max_element(p, p + c) - p);
    conf[i] = p[best];
    label[i] = best;
  }
}

// Sample index at position `k` of the endless stream of per-cycle shuffles.
std::size_t stream_index(std::uint64_t seed, Stream stream, std::size_t n, std::int64_t k) {
  const std::int64_t cycle = k / static_cast<std::int64_t>(n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = derive_rng(seed, stream, static_cast<std::uint64_t>(cycle));
  std::shuffle(order.begin(), order.end(), rng);
  return order[static_cast<std::size_t>(k % static_cast<std::int64_t>(n))];
}

struct BankRows {
  std::vector<double> values;
  std::vector<int> labels;
  std::vector<double> conf;
};

void collect_confident(const Tensor& vectors, const std::vector<double>& conf,
                       const std::vector<int>& labels, double threshold, BankRows& rows) {
  const int dim = vectors.c();
  for (std::size_t i = 0; i < conf.size(); ++i) {
    if (conf[i] <= threshold) continue;
    rows.values.insert(rows.values.end(), vectors.data() + i * dim, vectors.data() + (i + 1) * dim);
    rows.labels.push_back(labels[i]);
    rows.conf.push_back(conf[i]);
  }
}

std::string describe(const LossBreakdown& b) {
  std::ostringstream out;
  out << "l_sup=" << b.sup << " l_cont=" << b.cont << " l_cross=" << b.cross
      << " l_ent=" << b.ent << " total=" << b.total;
  return out.str();
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw Error("train.epochs must be at least 1");
  if (warmup_epochs < 0 || warmup_epochs >= epochs) {
    throw Error("train.warmup_epochs must lie in [0, train.epochs)");
  }
  if (batch_labeled < 1 || batch_unlabeled < 1) throw Error("batch sizes must be positive");
  if (input_size < 1) throw Error("data.input_size must be positive");
  if (!(base_lr > 0.0)) throw Error("train.base_lr must be positive");
  if (!(lr_power > 0.0)) throw Error("train.lr_power must be positive");
  if (seeds.empty()) throw Error("train.seeds must not be empty");
  if (!(threshold > 0.0 && threshold < 1.0)) throw Error("loss.threshold must lie in (0, 1)");
  if (!(temperature > 0.0)) throw Error("loss.temperature must be positive");
  if (!(0.0 <= overlap.lo && overlap.lo <= overlap.hi && overlap.hi <= 1.0)) {
    throw Error("data.overlap range must satisfy 0 <= lo <= hi <= 1");
  }
  if (!(0.0 < crop.scale_lo && crop.scale_lo <= crop.scale_hi && crop.scale_hi <= 1.0)) {
    throw Error("data.crop_scale range must satisfy 0 < lo <= hi <= 1");
  }
  if (bank_capacity < 1) throw Error("bank.capacity must be positive");
  if (checkpoint_every < 0) throw Error("train.checkpoint_every must be nonnegative");
  weights.validate();
  perturb.validate();
}

Schedule Schedule::make(const TrainConfig& config, std::size_t labeled_count,
                        std::size_t unlabeled_count) {
  if (labeled_count == 0) throw Error("training needs at least one labelled sample");
  Schedule s;
  const bool semi = unlabeled_count > 0;
  const std::size_t n = semi ? unlabeled_count : labeled_count;
  const std::size_t b = static_cast<std::size_t>(semi ? config.batch_unlabeled : config.batch_labeled);
  s.steps_per_epoch = static_cast<std::int64_t>((n + b - 1) / b);
  s.warmup_steps = s.steps_per_epoch * config.warmup_epochs;
  s.max_steps = s.steps_per_epoch * config.epochs;
  return s;
}

Sample fit_to_input(const Sample& sample, int size, bool augment_enabled,
                    const AugmentPolicy& policy, Rng& rng) {
  Sample s = augment_enabled ? augment(sample, policy, rng) : sample;
  const int h = s.image.h();
  const int w = s.image.w();
  if (h >= size && w >= size) {
    const int y = std::uniform_int_distribution<int>(0, h - size)(rng);
    const int x = std::uniform_int_distribution<int>(0, w - size)(rng);
    s.image = crop(s.image, x, y, size, size);
    if (s.mask) s.mask = crop(*s.mask, x, y, size, size);
  } else {
    s.image = ops::resize_bilinear(s.image, size, size);
    if (s.mask) s.mask = resize_nearest(*s.mask, size, size);
  }
  return s;
}

LabeledBatch make_labeled_batch(std::span<const Sample> samples, const TrainConfig& config,
                                Rng& rng) {
  std::vector<Tensor> images;
  std::vector<LabelMap> masks;
  for (const Sample& s : samples) {
    if (!s.mask) throw Error("labelled batch contains unlabelled sample " + s.source_id);
    Sample fitted = fit_to_input(s, config.input_size, config.augment, config.augment_policy, rng);
    images.push_back(std::move(fitted.image));
    masks.push_back(std::move(*fitted.mask));
  }
  return {stack_batch(images), stack_labels(masks)};
}

UnlabeledBatch make_unlabeled_batch(std::span<const Sample> samples, const TrainConfig& config,
                                    Rng& augment_rng, Rng& crop_rng) {
  std::vector<Tensor> images, crops1, crops2;
  UnlabeledBatch batch;
  for (const Sample& s : samples) {
    Sample plain = s;
    plain.mask.reset();
    if (config.augment) plain = augment(plain, config.augment_policy, augment_rng);
    CropPair pair = sample_crop_pair(plain.image, config.overlap, config.input_size,
                                     config.input_size, crop_rng, config.crop);
    images.push_back(fit_to_input(plain, config.input_size, false, config.augment_policy,
                                  augment_rng).image);
    crops1.push_back(std::move(pair.crop1));
    crops2.push_back(std::move(pair.crop2));
    batch.rects1.push_back(pair.rect1);
    batch.rects2.push_back(pair.rect2);
  }
  batch.images = stack_batch(images);
  batch.crops1 = stack_batch(crops1);
  batch.crops2 = stack_batch(crops2);
  return batch;
}

StepRecord train_step(const LabeledBatch& labeled, const UnlabeledBatch* unlabeled,
                      TrainState& state, std::int64_t step, const Schedule& schedule,
                      const TrainConfig& config, std::uint64_t seed) {
  SegmentationModel& model = state.model;
  StepRecord rec;
  rec.step = step;
  rec.epoch = schedule.steps_per_epoch > 0 ? step / schedule.steps_per_epoch : 0;
  rec.warmup = schedule.warmup(step);
  rec.lr = poly_lr(step, schedule.max_steps, config.base_lr, config.lr_power);
  state.optimizer.zero_grad();

  LossParts parts;
  const FeatureMap fl = model.extract_features(labeled.images);
  parts.sup = supervised_ce(model.classify(fl, true), labeled.masks, config.ignore_index,
                            &rec.diagnostics);

  const LossWeights& w = config.weights;
  if (!rec.warmup && unlabeled != nullptr) {
    if (w.ent > 0.0 || w.cross > 0.0) {
      const FeatureMap fu = model.extract_features(unlabeled->images);
      const PredictionMap main = model.classify(fu, false);
      if (w.ent > 0.0) {
        parts.ent = entropy_loss(main);
        rec.has_ent = true;
      }
      if (w.cross > 0.0) {
        Rng rng = derive_rng(seed, Stream::kPerturb, static_cast<std::uint64_t>(step));
        std::vector<PredictionMap> aux;
        for (PerturbationType type : kPerturbationTypes) {
          for (int k = 0; k < config.perturb.k; ++k) {
            aux.push_back(model.aux_classify(perturb(fu, type, config.perturb, rng), k, type));
          }
        }
        parts.cross = cross_consistency(main, aux, !config.cross_through_main);
        rec.has_cross = true;
      }
    }
    if (w.cont > 0.0) {
      const FeatureMap f1 = model.extract_features(unlabeled->crops1);
      const FeatureMap f2 = model.extract_features(unlabeled->crops2);
      const ProjectionMap z1 = model.project(f1);
      const ProjectionMap z2 = model.project(f2);
      Tensor probs1, probs2;
      {
        NoGradGuard no_grad;
        probs1 = model.classify(f1, false).probs.value();
        probs2 = model.classify(f2, false).probs.value();
      }
      Rng bank_rng = derive_rng(seed, Stream::kBank, static_cast<std::uint64_t>(step));
      const int dim = z1.values.shape().c;
      const std::vector<BankEntry> drawn_fwd = state.bank.sample(config.negatives, bank_rng);
      const std::vector<BankEntry> drawn_bwd = state.bank.sample(config.negatives, bank_rng);
      const NegativeSet neg_fwd = pack_negatives(drawn_fwd, dim);
      const NegativeSet neg_bwd = pack_negatives(drawn_bwd, dim);

      std::vector<Var> terms;
      BankRows rows;
      const int batch = z1.values.shape().n;
      for (int b = 0; b < batch; ++b) {
        AlignedPair ap = align_overlap(z1.values, z2.values, b, unlabeled->rects1[b],
                                       unlabeled->rects2[b], model.stride());
        if (ap.skipped) {
          ++rec.diagnostics.skipped_pairs;
          continue;
        }
        ContrastiveContext fwd;
        confidence_and_label(ops::sample_bilinear(probs1, b, ap.points1), fwd.anchor_conf,
                             fwd.anchor_label);
        confidence_and_label(ops::sample_bilinear(probs2, b, ap.points2), fwd.target_conf,
                             fwd.target_label);
        fwd.anchor = ap.first;
        fwd.target = ap.second;
        fwd.threshold = config.threshold;
        fwd.temperature = config.temperature;
        fwd.options = config.contrastive;
        ContrastiveContext bwd = fwd;
        std::swap(bwd.anchor, bwd.target);
        std::swap(bwd.anchor_conf, bwd.target_conf);
        std::swap(bwd.anchor_label, bwd.target_label);
        fwd.negatives = neg_fwd.vectors;
        fwd.negative_labels = neg_fwd.labels;
        bwd.negatives = neg_bwd.vectors;
        bwd.negative_labels = neg_bwd.labels;
        terms.push_back(directional_contrastive(fwd, bwd));
        collect_confident(ap.first.value(), fwd.anchor_conf, fwd.anchor_label, config.threshold,
                          rows);
        collect_confident(ap.second.value(), fwd.target_conf, fwd.target_label,
                          config.threshold, rows);
      }
      if (!terms.empty()) {
        const std::vector<double> mean_weights(terms.size(), 1.0 / static_cast<double>(terms.size()));
        parts.cont = ops::weighted_sum(terms, mean_weights);
        rec.has_cont = true;
      }
      if (!rows.labels.empty()) {
        const Tensor pushed(Shape{1, 1, static_cast<int>(rows.labels.size()), dim},
                            std::move(rows.values));
        state.bank.push(pushed, rows.labels, rows.conf, step, config.bank_push_cap, bank_rng);
      }
    }
  }

  TotalLoss total = total_loss(parts, rec.warmup ? LossWeights{w.sup, 0.0, 0.0, 0.0} : w);
  rec.losses = total.breakdown;
  if (!std::isfinite(rec.losses.total)) {
    throw Error("non-finite loss at step " + std::to_string(step) + ": " + describe(rec.losses));
  }
  backward(total.total);
  state.optimizer.step(rec.lr);
  return rec;
}

std::string step_json(const StepRecord& r) {
  auto part = [](bool has, double v) { return has ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json j;
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["l_sup"] = r.losses.sup;
  j["l_cont"] = part(r.has_cont, r.losses.cont);
  j["l_cross"] = part(r.has_cross, r.losses.cross);
  j["l_ent"] = part(r.has_ent, r.losses.ent);
  j["total"] = r.losses.total;
  j["lr"] = r.lr;
  j["warmup"] = r.warmup;
  return j.dump();
}

FitResult fit(SegmentationModel& model, const SplitResult& data, const TrainConfig& config,
              std::uint64_t seed, const FitOptions& options) {
  config.validate();
  const Schedule schedule = Schedule::make(config, data.labeled.size(), data.unlabeled.size());
  MemoryBank bank(config.bank_capacity);
  Sgd optimizer(model.parameters(), config.sgd);
  TrainState state{model, bank, optimizer};

  std::int64_t start = 0;
  if (options.resume) {
    model.load_parameters(options.resume->parameters, true);
    optimizer.load_state(options.resume->optimizer_state);
    bank.restore(options.resume->bank);
    start = options.resume->step;
  }

  const bool write = !options.run_dir.empty();
  const std::filesystem::path ckpt_dir = options.run_dir / "checkpoints";
  std::ofstream log;
  if (write) {
    std::filesystem::create_directories(ckpt_dir);
    log.open(options.run_dir / "metrics.log", start > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw Error("cannot open metrics.log in " + options.run_dir.string());
  }
  auto save = [&](const std::filesystem::path& file, std::int64_t epoch, std::int64_t step) {
    Checkpoint ckpt;
    ckpt.epoch = epoch;
    ckpt.step = step;
    ckpt.config_yaml = options.config_yaml;
    for (const Parameter& p : model.parameters()) ckpt.parameters.emplace_back(p.name, p.var.value());
    ckpt.optimizer_state = optimizer.state();
    ckpt.bank_capacity = bank.capacity();
    ckpt.bank.assign(bank.entries().begin(), bank.entries().end());
    save_checkpoint(file, ckpt);
  };

  FitResult result;
  const std::size_t nl = data.labeled.size();
  const std::size_t nu = data.unlabeled.size();
  const bool semi = nu > 0;
  std::int64_t end = schedule.max_steps;
  if (config.step_limit > 0) end = std::min(end, config.step_limit);
  std::vector<std::size_t> epoch_order;
  std::int64_t order_epoch = -1;

  for (std::int64_t step = start; step < end; ++step) {
    const std::int64_t epoch = step / schedule.steps_per_epoch;
    const std::int64_t pos = step % schedule.steps_per_epoch;

    std::vector<Sample> batch_l;
    for (int i = 0; i < config.batch_labeled; ++i) {
      const std::int64_t k = step * config.batch_labeled + i;
      batch_l.push_back(data.labeled[stream_index(seed, Stream::kLabeledOrder, nl, k)]);
    }
    Rng label_rng = derive_rng(seed, Stream::kLabeledAugment, static_cast<std::uint64_t>(step));
    const LabeledBatch lb = make_labeled_batch(batch_l, config, label_rng);

    std::optional<UnlabeledBatch> ub;
    const LossWeights& w = config.weights;
    const bool needs_unlabeled = w.cont > 0.0 || w.cross > 0.0 || w.ent > 0.0;
    if (semi && needs_unlabeled && !schedule.warmup(step)) {
      if (order_epoch != epoch) {
        epoch_order.resize(nu);
        std::iota(epoch_order.begin(), epoch_order.end(), 0);
        Rng order_rng = derive_rng(seed, Stream::kUnlabeledOrder, static_cast<std::uint64_t>(epoch));
        std::shuffle(epoch_order.begin(), epoch_order.end(), order_rng);
        order_epoch = epoch;
      }
      std::vector<Sample> batch_u;
      const std::size_t first = static_cast<std::size_t>(pos) * config.batch_unlabeled;
      for (std::size_t i = first; i < std::min(nu, first + config.batch_unlabeled); ++i) {
        batch_u.push_back(data.unlabeled[epoch_order[i]]);
      }
      Rng aug_rng = derive_rng(seed, Stream::kUnlabeledAugment, static_cast<std::uint64_t>(step));
      Rng crop_rng = derive_rng(seed, Stream::kCrop, static_cast<std::uint64_t>(step));
      ub = make_unlabeled_batch(batch_u, config, aug_rng, crop_rng);
    }

    StepRecord rec = train_step(lb, ub ? &*ub : nullptr, state, step, schedule, config, seed);
    if (write) log << step_json(rec) << "\n" << std::flush;
    if (options.on_step) options.on_step(rec);
    result.history.push_back(rec);

    const bool epoch_done = pos == schedule.steps_per_epoch - 1;
    if (epoch_done && write && config.checkpoint_every > 0 &&
        (epoch + 1) % config.checkpoint_every == 0) {
      save(ckpt_dir / ("epoch_" + std::to_string(epoch + 1) + ".ckpt"), epoch + 1, step + 1);
    }
    if (epoch_done && !options.validation.empty()) {
      const Metrics m = compute_metrics(evaluate(model, options.validation, {config.ignore_index}));
      if (m.defined && (!result.best_miou || m.miou > *result.best_miou)) {
        result.best_miou = m.miou;
        result.best_epoch = epoch + 1;
        if (write) save(ckpt_dir / "best.ckpt", epoch + 1, step + 1);
      }
    }
  }
  if (write) save(ckpt_dir / "last.ckpt", end / schedule.steps_per_epoch, end);
  return result;
}

}  // namespace crcfp
