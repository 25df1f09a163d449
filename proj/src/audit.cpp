#include "pipetune/audit.hpp"

#include <bit>

#include "pipetune/error.hpp"
#include "pipetune/rng.hpp"

namespace pipetune {

std::uint64_t record_fingerprint(const RunRecord& record) {
  std::uint64_t h = mix64(hash_text(record.dataset_id));
  for (auto i : record.config.indices()) h = mix64(h ^ i);
  return mix64(h ^ std::bit_cast<std::uint64_t>(record.final_score));
}

void FitAudit::consume(const RunRecord& record) {
  fingerprints_.insert(record_fingerprint(record));
  dataset_ids_.insert(record.dataset_id);
  ++records_;
}

void FitAudit::consume(const DatasetGroup& group) {
  for (const auto& r : group.records) consume(r);
}

void FitAudit::assert_disjoint(const DatasetGroup& heldout) const {
  if (dataset_ids_.count(heldout.dataset_id))
    throw LeakageError("held-out dataset '" + heldout.dataset_id + "' was consumed by a fit");
  for (const auto& r : heldout.records)
    if (fingerprints_.count(record_fingerprint(r)))
      throw LeakageError("a record of held-out dataset '" + heldout.dataset_id + "' was consumed by a fit");
}

}  // namespace pipetune
