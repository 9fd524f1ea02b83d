#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "vmt/rng.hpp"
#include "vmt/tensor.hpp"

namespace vmt {

enum class Domain : uint8_t { source, target };
enum class Split : uint8_t { train, test };
enum class Generator : uint8_t { two_moons, gaussian_clusters };
enum class Standardize : uint8_t { none, per_sample, per_domain };

const char* domain_name(Domain d);
const char* split_name(Split s);
const char* generator_name(Generator g);
const char* standardize_name(Standardize m);
Generator generator_from_string(const std::string& s);
Standardize standardize_from_string(const std::string& s);

// Rigid-ish shift applied to the target domain: rotation and scaling about
// the data centroid, then translation.  p' = c + s * R(theta) (p - c) + t.
struct Shift {
  double rotation_deg = 0.0;  // [0, 360)
  double translate_x = 0.0;
  double translate_y = 0.0;
  double scale = 1.0;
  bool operator==(const Shift&) const = default;
};

// Recipe for one synthetic adaptation task. n counts samples per domain;
// each domain is cut 80/20 into train/test after generation.
struct TaskSpec {
  Generator generator = Generator::two_moons;
  int64_t n = 1200;
  int64_t classes = 2;  // gaussian-clusters only; two-moons is fixed at 2
  double noise = 0.08;
  Shift shift;  // target domain only
  Standardize normalization = Standardize::none;
  uint64_t seed = 0;

  void validate() const;
  std::string echo() const;  // one-line key=value summary for file headers
  bool operator==(const TaskSpec&) const = default;
};

// Samples of one domain and split, immutable once built. Label access is
// deliberately split so the training path cannot reach what it must not see:
//   labels()       training labels; present on source splits only
//   eval_labels()  test-split labels, for accuracy reporting only
// The held-aside labeled 10% of target train lives in ValidationView.
class DomainDataset {
 public:
  DomainDataset() = default;

  static DomainDataset make(Domain domain, Split split, Tensor inputs, Tensor train_labels,
                            Tensor eval_labels, int64_t classes,
                            Standardize normalization = Standardize::none);

  Domain domain() const { return domain_; }
  Split split() const { return split_; }
  int64_t size() const { return inputs_.rows(); }
  int64_t dim() const { return inputs_.cols(); }
  int64_t classes() const { return classes_; }
  const Tensor& inputs() const { return inputs_; }

  bool has_labels() const { return train_labels_.size() > 0; }
  const Tensor& labels() const;  // throws ValueError when absent

  bool has_eval_labels() const { return eval_labels_.size() > 0; }
  const Tensor& eval_labels() const;  // throws ValueError when absent

  Standardize normalization() const { return normalization_; }

 private:
  Domain domain_ = Domain::source;
  Split split_ = Split::train;
  Tensor inputs_;
  Tensor train_labels_;  // empty when the training path may not see labels
  Tensor eval_labels_;   // empty only on the target train split
  int64_t classes_ = 2;
  Standardize normalization_ = Standardize::none;
};

// Labeled subset of the target train split (10%), for hyperparameter
// selection only; the trainer never touches it.
struct ValidationView {
  std::vector<int64_t> indices;  // rows of the train split
  Tensor labels;                 // one-hot rows aligned with indices
  int64_t size() const { return static_cast<int64_t>(indices.size()); }
};

struct DomainSplits {
  DomainDataset train;
  DomainDataset test;
  ValidationView validation;  // populated for the target domain only
};

// two-moons: two interleaving unit half-circles, moon 0 centered at the
// origin (upper half), moon 1 at (1, 0.5) (lower half), plus isotropic
// Gaussian noise. gaussian-clusters: K isotropic blobs centered on the unit
// circle at angles 2*pi*k/K. Both splits keep labels.
DomainSplits gen_source(const TaskSpec& spec);

// Fresh draw from the same generator on a derived stream, then the shift
// applied about the centroid of the freshly drawn points. Train split drops
// its labels (10% survive in the validation view); test keeps eval labels.
DomainSplits gen_target(const TaskSpec& source_spec);

// none: bit-identical passthrough. per-sample: each row to mean 0 and unit
// population std (std clamped at 1e-8); needs d >= 2. per-domain is only
// meaningful with both splits, so the single-dataset overload rejects it.
DomainDataset standardize(const DomainDataset& ds, Standardize mode);

// per-domain: column statistics from the train split applied to both splits.
DomainSplits standardize(const DomainSplits& splits, Standardize mode);

// Shuffled index stream over [0, n): each pass consumes one fresh uniform
// permutation, so every index appears exactly once per pass.
struct ShuffleCursor {
  RngStream rng{0};
  std::vector<int64_t> order;
  int64_t pos = 0;
  int64_t n = 0;

  std::vector<int64_t> take(int64_t k);
  std::string serialize() const;
  static ShuffleCursor deserialize(std::istream& is);
};

// Endless paired batches: labeled source rows alongside unlabeled target
// rows. Domains reshuffle and recycle independently, so unequal sizes are
// fine and a batch may straddle an epoch boundary. Holds views; the datasets
// must outlive the iterator. State round-trips through serialize().
class BatchIter {
 public:
  BatchIter(const DomainDataset& src, const DomainDataset& tgt, int64_t batch, RngStream rng);

  struct Batch {
    Tensor x_src;
    Tensor y_src;
    Tensor x_tgt;
  };
  Batch next();

  int64_t batch() const { return batch_; }
  std::string serialize() const;
  void restore(const std::string& blob);

 private:
  const DomainDataset* src_;
  const DomainDataset* tgt_;
  int64_t batch_;
  ShuffleCursor src_cur_;
  ShuffleCursor tgt_cur_;
};

// Single-domain variant, used for target-only refinement batches.
class CycleIter {
 public:
  CycleIter(const DomainDataset& ds, int64_t batch, RngStream rng);

  Tensor next();

  std::string serialize() const;
  void restore(const std::string& blob);

 private:
  const DomainDataset* ds_;
  int64_t batch_;
  ShuffleCursor cur_;
};

// Delimited dump, one row per sample: domain, split, label-or-empty,
// features. First line echoes the TaskSpec, second names the columns.
void dump_datasets(std::ostream& os, const TaskSpec& spec,
                   const std::vector<const DomainDataset*>& sets);

}  // namespace vmt
