#include "crcfp/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>

namespace crcfp {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double safe_ratio(double num, double den) { return den > 0.0 ? num / den : kNaN; }

}  // namespace

ConfusionMatrix::ConfusionMatrix(int classes)
    : classes_(classes), counts_(static_cast<std::size_t>(classes) * classes, 0) {
  if (classes < 1) throw Error("confusion matrix needs at least one class");
}

ConfusionMatrix ConfusionMatrix::from_rows(const std::vector<std::vector<std::int64_t>>& rows) {
  ConfusionMatrix cm(static_cast<int>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows.size()) throw Error("confusion matrix rows must be square");
    for (std::size_t c = 0; c < rows.size(); ++c) {
      if (rows[r][c] < 0) throw Error("confusion matrix counts must be nonnegative");
      cm.counts_[cm.index(static_cast<int>(r), static_cast<int>(c))] = rows[r][c];
    }
  }
  return cm;
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (std::int64_t v : counts_) t += v;
  return t;
}

void ConfusionMatrix::accumulate(const LabelMap& pred, const LabelMap& truth, int ignore_index) {
  if (pred.n != truth.n || pred.h != truth.h || pred.w != truth.w) {
    throw Error("accumulate: prediction and ground truth differ in shape");
  }
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth.labels[i];
    if (t == ignore_index) {
      ++ignored_;
      continue;
    }
    const int p = pred.labels[i];
    if (t < 0 || t >= classes_ || p < 0 || p >= classes_) {
      throw Error("accumulate: label outside [0, " + std::to_string(classes_) + ")");
    }
    ++counts_[index(t, p)];
  }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw Error("cannot merge confusion matrices of different size");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  ignored_ += other.ignored_;
  return *this;
}

std::vector<int> Metrics::absent_classes() const {
  std::vector<int> out;
  for (std::size_t c = 0; c < present.size(); ++c) {
    if (!present[c]) out.push_back(static_cast<int>(c));
  }
  return out;
}

Metrics compute_metrics(const ConfusionMatrix& cm) {
  const int n = cm.classes();
  Metrics m;
  m.iou.assign(n, kNaN);
  m.dice.assign(n, kNaN);
  m.class_accuracy.assign(n, kNaN);
  m.present.assign(n, false);
  const double total = static_cast<double>(cm.total());
  if (total == 0.0) {
    m.miou = m.mean_dice = m.accuracy = m.mean_class_accuracy = kNaN;
    return m;
  }
  m.defined = true;
  double trace = 0.0, iou_sum = 0.0, dice_sum = 0.0, acc_sum = 0.0;
  int present = 0, with_truth = 0;
  for (int c = 0; c < n; ++c) {
    double row = 0.0, col = 0.0;
    for (int k = 0; k < n; ++k) {
      row += static_cast<double>(cm.at(c, k));
      col += static_cast<double>(cm.at(k, c));
    }
    const double tp = static_cast<double>(cm.at(c, c));
    const double fn = row - tp;
    const double fp = col - tp;
    trace += tp;
    if (row > 0.0) {
      m.class_accuracy[c] = tp / row;
      acc_sum += m.class_accuracy[c];
      ++with_truth;
    }
    if (tp + fp + fn > 0.0) {
      m.present[c] = true;
      m.iou[c] = tp / (tp + fp + fn);
      m.dice[c] = 2.0 * tp / (2.0 * tp + fp + fn);
      iou_sum += m.iou[c];
      dice_sum += m.dice[c];
      ++present;
    }
  }
  m.accuracy = trace / total;
  m.miou = safe_ratio(iou_sum, present);
  m.mean_dice = safe_ratio(dice_sum, present);
  m.mean_class_accuracy = safe_ratio(acc_sum, with_truth);
  return m;
}

ConfusionMatrix evaluate(const SegmentationModel& model, std::span<const Sample> samples,
                         const EvalOptions& options) {
  NoGradGuard no_grad;
  ConfusionMatrix cm(model.config().classes);
  auto predict = [&](const Tensor& image) {
    const FeatureMap f = model.extract_features(image);
    return argmax_labels(model.classify(f, true).logits.value());
  };
  for (const Sample& s : samples) {
    if (!s.mask) continue;
    const int h = s.image.h();
    const int w = s.image.w();
    const int tile = options.tile;
    if (tile <= 0 || (h <= tile && w <= tile)) {
      cm.accumulate(predict(s.image), *s.mask, options.ignore_index);
      continue;
    }
    for (int y = 0; y < h; y += tile) {
      for (int x = 0; x < w; x += tile) {
        const int th = std::min(tile, h - y);
        const int tw = std::min(tile, w - x);
        cm.accumulate(predict(crop(s.image, x, y, tw, th)), crop(*s.mask, x, y, tw, th),
                      options.ignore_index);
      }
    }
  }
  return cm;
}

std::string format_metrics(const Metrics& m, const std::vector<std::string>& class_names) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "class        IoU      Dice     Acc\n";
  for (std::size_t c = 0; c < m.iou.size(); ++c) {
    const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
    out << std::left << std::setw(10) << name << std::right;
    if (!m.present[c]) {
      out << "   absent\n";
      continue;
    }
    out << std::setw(9) << m.iou[c] << std::setw(9) << m.dice[c] << std::setw(9)
        << m.class_accuracy[c] << "\n";
  }
  if (!m.defined) {
    out << "no evaluated pixels; metrics undefined\n";
    return out.str();
  }
  out << "mIoU " << m.miou << "  mDice " << m.mean_dice << "  accuracy " << m.accuracy
      << "  class-mean accuracy " << m.mean_class_accuracy << "\n";
  return out.str();
}

std::string metrics_json(const Metrics& m, const ConfusionMatrix& cm) {
  auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  auto vec = [&](const std::vector<double>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (double x : v) a.push_back(num(x));
    return a;
  };
  nlohmann::json j;
  j["defined"] = m.defined;
  j["miou"] = num(m.miou);
  j["mean_dice"] = num(m.mean_dice);
  j["accuracy"] = num(m.accuracy);
  j["mean_class_accuracy"] = num(m.mean_class_accuracy);
  j["iou"] = vec(m.iou);
  j["dice"] = vec(m.dice);
  j["class_accuracy"] = vec(m.class_accuracy);
  j["absent_classes"] = m.absent_classes();
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < cm.classes(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < cm.classes(); ++c) row.push_back(cm.at(r, c));
    rows.push_back(row);
  }
  j["confusion"] = rows;
  j["ignored_pixels"] = cm.ignored();
  return j.dump(2);
}

void write_report(const std::filesystem::path& dir, const std::string& stem, const Metrics& m,
                  const ConfusionMatrix& cm) {
  std::filesystem::create_directories(dir);
  std::ofstream txt(dir / (stem + ".txt"));
  std::ofstream json(dir / (stem + ".json"));
  if (!txt || !json) throw Error("cannot write report into " + dir.string());
  txt << format_metrics(m);
  json << metrics_json(m, cm) << "\n";
}

}  // namespace crcfp
