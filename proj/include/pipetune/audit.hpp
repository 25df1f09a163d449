#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "pipetune/corpus.hpp"

namespace pipetune {

// Hash of (dataset id, configuration, score bits) identifying one run record.
std::uint64_t record_fingerprint(const RunRecord& record);

// Collects fingerprints of every record a model fit consumes.
class FitAudit {
 public:
  void consume(const RunRecord& record);
  void consume(const DatasetGroup& group);

  const std::set<std::uint64_t>& fingerprints() const { return fingerprints_; }
  const std::set<std::string>& dataset_ids() const { return dataset_ids_; }
  std::size_t records() const { return records_; }

  // Throws LeakageError if any held-out record or the held-out dataset id
  // was consumed.
  void assert_disjoint(const DatasetGroup& heldout) const;

 private:
  std::set<std::uint64_t> fingerprints_;
  std::set<std::string> dataset_ids_;
  std::size_t records_ = 0;
};

}  // namespace pipetune
