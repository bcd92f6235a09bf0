#include "crcfp/memory_bank.hpp"

#include <algorithm>
#include <numeric>

namespace crcfp {

MemoryBank::MemoryBank(std::size_t capacity) : capacity_(capacity) {}

void MemoryBank::push(const Tensor& projections, std::span<const int> pseudo_labels,
                      std::span<const double> confidences, std::int64_t step,
                      std::size_t sample_cap, Rng& rng) {
  const std::size_t n = projections.shape().pixels();
  if (pseudo_labels.size() != n || confidences.size() != n) {
    throw Error("MemoryBank::push: " + std::to_string(n) + " vectors but " +
                std::to_string(pseudo_labels.size()) + " labels and " +
                std::to_string(confidences.size()) + " confidences");
  }
  const int dim = projections.c();
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  std::vector<std::size_t> picked;
  picked.reserve(std::min(n, sample_cap));
  std::sample(all.begin(), all.end(), std::back_inserter(picked), sample_cap, rng);
  for (std::size_t i : picked) {
    BankEntry e;
    e.vector.assign(projections.data() + i * dim, projections.data() + (i + 1) * dim);
    e.pseudo_label = pseudo_labels[i];
    e.confidence = confidences[i];
    e.step = step;
    entries_.push_back(std::move(e));
  }
  while (entries_.size() > capacity_) entries_.pop_front();
}

std::vector<BankEntry> MemoryBank::sample_negatives(int positive_label, std::size_t count,
                                                    Rng& rng) const {
  std::vector<const BankEntry*> pool;
  for (const BankEntry& e : entries_) {
    if (e.pseudo_label != positive_label) pool.push_back(&e);
  }
  std::vector<const BankEntry*> picked;
  std::sample(pool.begin(), pool.end(), std::back_inserter(picked), count, rng);
  std::vector<BankEntry> out;
  out.reserve(picked.size());
  for (const BankEntry* e : picked) out.push_back(*e);
  return out;
}

std::vector<BankEntry> MemoryBank::sample(std::size_t count, Rng& rng) const {
  std::vector<BankEntry> out;
  out.reserve(std::min(count, entries_.size()));
  std::sample(entries_.begin(), entries_.end(), std::back_inserter(out), count, rng);
  return out;
}

void MemoryBank::restore(std::vector<BankEntry> entries) {
  entries_.assign(std::make_move_iterator(entries.begin()), std::make_move_iterator(entries.end()));
  while (entries_.size() > capacity_) entries_.pop_front();
}

NegativeSet pack_negatives(std::span<const BankEntry> entries, int dim) {
  NegativeSet set;
  set.vectors = Tensor(Shape{1, 1, static_cast<int>(entries.size()), dim});
  set.labels.reserve(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].vector.size() != static_cast<std::size_t>(dim)) {
      throw Error("bank entry has dimension " + std::to_string(entries[i].vector.size()) +
                  ", expected " + std::to_string(dim));
    }
    std::copy(entries[i].vector.begin(), entries[i].vector.end(), set.vectors.data() + i * dim);
    set.labels.push_back(entries[i].pseudo_label);
  }
  return set;
}

}  // namespace crcfp
