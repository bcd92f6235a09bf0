#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <map>
#include <set>

#include "crcfp/toy_corpus.hpp"

using namespace crcfp;

namespace {

// Area under the ROC curve of `scores` for positives vs negatives.
double auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0.0;
  for (double p : pos)
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return wins / (static_cast<double>(pos.size()) * neg.size());
}

}  // namespace

TEST(ToyCorpus, WritesCountsAndAllClasses) {
  const auto dir = std::filesystem::temp_directory_path() / "crcfp_toy_test";
  std::filesystem::remove_all(dir);
  ToyCorpusOptions opts;
  opts.images = 24;
  opts.test_images = 6;
  opts.size = 48;
  const ToyCorpus corpus = generate_toy_corpus(dir, opts);
  const auto train = load_corpus(corpus.manifest);
  const auto test = load_corpus(corpus.test_manifest);
  ASSERT_EQ(train.size(), 24u);
  ASSERT_EQ(test.size(), 6u);
  EXPECT_EQ(corpus.class_names.size(), 4u);
  std::set<int> classes;
  std::set<std::string> centers;
  for (const Sample& s : train) {
    ASSERT_TRUE(s.labeled());
    EXPECT_EQ(s.image.shape(), (Shape{1, 48, 48, 3}));
    classes.insert(s.mask->labels.begin(), s.mask->labels.end());
    centers.insert(*s.center_id);
  }
  EXPECT_EQ(classes, (std::set<int>{0, 1, 2, 3}));
  EXPECT_EQ(centers.size(), 8u);
  std::set<std::string> ids;
  for (const auto* part : {&train, &test})
    for (const Sample& s : *part) EXPECT_TRUE(ids.insert(s.source_id).second);
}

TEST(ToyCorpus, Deterministic) {
  ToyCorpusOptions opts;
  const Sample a = generate_toy_sample(opts, 2, 17);
  const Sample b = generate_toy_sample(opts, 2, 17);
  EXPECT_EQ(a.image.storage(), b.image.storage());
  EXPECT_EQ(a.mask->labels, b.mask->labels);
  EXPECT_NE(generate_toy_sample(opts, 2, 18).image.storage(), a.image.storage());
}

TEST(ToyCorpus, CentreShiftsAreLinearlySeparable) {
  ToyCorpusOptions opts;
  std::map<int, std::vector<Eigen::Vector3d>> means;
  for (int i = 0; i < 160; ++i) {
    const int c = i % opts.centers;
    const Sample s = generate_toy_sample(opts, c, static_cast<std::uint64_t>(i));
    Eigen::Vector3d m = Eigen::Vector3d::Zero();
    for (std::size_t p = 0; p < s.image.shape().pixels(); ++p)
      for (int k = 0; k < 3; ++k) m[k] += s.image[p * 3 + k];
    means[c].push_back(m / static_cast<double>(s.image.shape().pixels()));
  }
  // One-vs-rest least-squares linear probe on the mean colours.
  for (const auto& [target, _] : means) {
    std::vector<Eigen::Vector4d> xs;
    std::vector<double> ys;
    for (const auto& [c, vs] : means)
      for (const auto& v : vs) {
        xs.emplace_back(v[0], v[1], v[2], 1.0);
        ys.push_back(c == target ? 1.0 : -1.0);
      }
    Eigen::MatrixXd X(xs.size(), 4);
    Eigen::VectorXd y(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      X.row(i) = xs[i].transpose();
      y[i] = ys[i];
    }
    const Eigen::VectorXd w = X.colPivHouseholderQr().solve(y);
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < xs.size(); ++i) (ys[i] > 0 ? pos : neg).push_back(xs[i].dot(w));
    EXPECT_GT(auc(pos, neg), 0.9) << "centre " << target;
  }
}

TEST(ToyCorpus, ClassNames) {
  const auto names = toy_class_names(5);
  ASSERT_EQ(names.size(), 5u);
  EXPECT_EQ(names[0], "background");
  EXPECT_EQ(std::set<std::string>(names.begin(), names.end()).size(), 5u);
}
