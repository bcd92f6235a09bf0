#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "crcfp/random.hpp"
#include "crcfp/tensor.hpp"

namespace crcfp {

/// Snapshot of one projected pixel.
struct BankEntry {
  std::vector<double> vector;
  int pseudo_label = 0;
  double confidence = 0.0;
  std::int64_t step = 0;
};

/// Bounded FIFO of past projections used as extra contrastive negatives.
/// Single writer; not safe for concurrent mutation.
class MemoryBank {
 public:
  explicit MemoryBank(std::size_t capacity = 1200);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::deque<BankEntry>& entries() const { return entries_; }

  /// Appends up to `sample_cap` rows of `projections` ({1,1,N,P} or any
  /// tensor with N pixels), chosen uniformly without replacement and kept in
  /// their original order, then evicts the oldest entries beyond capacity.
  /// Values are copied, so stored vectors never see later gradient updates.
  void push(const Tensor& projections, std::span<const int> pseudo_labels,
            std::span<const double> confidences, std::int64_t step, std::size_t sample_cap,
            Rng& rng);

  /// Uniform sample without replacement among entries whose pseudo label
  /// differs from `positive_label`. Returns every such entry when fewer
  /// than `count` exist.
  std::vector<BankEntry> sample_negatives(int positive_label, std::size_t count, Rng& rng) const;

  /// Uniform sample without replacement regardless of label.
  std::vector<BankEntry> sample(std::size_t count, Rng& rng) const;

  void clear() { entries_.clear(); }
  /// Replaces the contents, keeping only the newest `capacity` entries.
  void restore(std::vector<BankEntry> entries);

 private:
  std::size_t capacity_;
  std::deque<BankEntry> entries_;
};

/// Packs entries into a {1,1,N,P} tensor plus their labels.
struct NegativeSet {
  Tensor vectors;
  std::vector<int> labels;
};
NegativeSet pack_negatives(std::span<const BankEntry> entries, int dim);

}  // namespace crcfp
