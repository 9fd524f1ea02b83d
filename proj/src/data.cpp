#include "vmt/data.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "vmt/errors.hpp"

namespace vmt {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

Tensor gather(const Tensor& m, const std::vector<int64_t>& rows) {
  const int64_t d = m.cols();
  Tensor out = Tensor::zeros({static_cast<int64_t>(rows.size()), d});
  for (size_t r = 0; r < rows.size(); ++r) {
    for (int64_t c = 0; c < d; ++c) out.at(static_cast<int64_t>(r), c) = m.at(rows[r], c);
  }
  return out;
}

struct RawDraw {
  Tensor x;                 // [n, 2]
  std::vector<int64_t> y;   // class ids, balanced within +-1
};

// Points come out in a uniformly shuffled order, so any prefix is a uniform
// random subset and the 80/20 cut needs no further care.
RawDraw draw_points(const TaskSpec& spec, RngStream& rng) {
  const int64_t n = spec.n;
  const int64_t k = spec.generator == Generator::two_moons ? 2 : spec.classes;
  std::vector<int64_t> cls(static_cast<size_t>(n));
  {
    const int64_t base = n / k;
    const int64_t rem = n % k;
    size_t at = 0;
    for (int64_t c = 0; c < k; ++c) {
      const int64_t count = base + (c < rem ? 1 : 0);
      for (int64_t i = 0; i < count; ++i) cls[at++] = c;
    }
  }

  Tensor x = Tensor::zeros({n, 2});
  for (int64_t i = 0; i < n; ++i) {
    double px = 0.0;
    double py = 0.0;
    if (spec.generator == Generator::two_moons) {
      const double t = kPi * rng.uniform();
      if (cls[static_cast<size_t>(i)] == 0) {
        px = std::cos(t);
        py = std::sin(t);
      } else {
        px = 1.0 - std::cos(t);
        py = 0.5 - std::sin(t);
      }
    } else {
      const double ang = 2.0 * kPi * static_cast<double>(cls[static_cast<size_t>(i)]) /
                         static_cast<double>(k);
      px = std::cos(ang);
      py = std::sin(ang);
    }
    x.at(i, 0) = px + spec.noise * rng.normal();
    x.at(i, 1) = py + spec.noise * rng.normal();
  }

  const std::vector<int64_t> perm = rng.permutation(n);
  RawDraw out;
  out.x = gather(x, perm);
  out.y.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out.y[static_cast<size_t>(i)] = cls[static_cast<size_t>(perm[i])];
  return out;
}

Tensor one_hot(const std::vector<int64_t>& cls, int64_t first, int64_t count, int64_t k) {
  Tensor out = Tensor::zeros({count, k});
  for (int64_t i = 0; i < count; ++i) out.at(i, cls[static_cast<size_t>(first + i)]) = 1.0;
  return out;
}

Tensor slice(const Tensor& m, int64_t first, int64_t count) {
  Tensor out = Tensor::zeros({count, m.cols()});
  for (int64_t i = 0; i < count; ++i) {
    for (int64_t c = 0; c < m.cols(); ++c) out.at(i, c) = m.at(first + i, c);
  }
  return out;
}

}  // namespace

const char* domain_name(Domain d) { return d == Domain::source ? "source" : "target"; }
const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

const char* generator_name(Generator g) {
  return g == Generator::two_moons ? "two-moons" : "gaussian-clusters";
}

const char* standardize_name(Standardize m) {
  switch (m) {
    case Standardize::none: return "none";
    case Standardize::per_sample: return "per-sample";
    case Standardize::per_domain: return "per-domain";
  }
  return "?";
}

Generator generator_from_string(const std::string& s) {
  if (s == "two-moons" || s == "two_moons") return Generator::two_moons;
  if (s == "gaussian-clusters" || s == "gaussian_clusters") return Generator::gaussian_clusters;
  throw ValueError("task: unknown generator '" + s + "' (two-moons | gaussian-clusters)");
}

Standardize standardize_from_string(const std::string& s) {
  if (s == "none") return Standardize::none;
  if (s == "per-sample" || s == "per_sample") return Standardize::per_sample;
  if (s == "per-domain" || s == "per_domain") return Standardize::per_domain;
  throw ValueError("task: unknown normalization '" + s + "' (none | per-sample | per-domain)");
}

void TaskSpec::validate() const {
  if (n < 10) throw ValueError("task: n must be at least 10, got " + std::to_string(n));
  if (!(noise >= 0.0)) throw ValueError("task: noise must be nonnegative");
  if (!(shift.rotation_deg >= 0.0 && shift.rotation_deg < 360.0)) {
    throw ValueError("task: rotation must lie in [0, 360), got " + fmt_g(shift.rotation_deg));
  }
  if (classes < 2) throw ValueError("task: classes must be at least 2");
  if (generator == Generator::two_moons && classes != 2) {
    throw ValueError("task: two-moons has exactly 2 classes");
  }
}

std::string TaskSpec::echo() const {
  std::ostringstream os;
  os << "generator=" << generator_name(generator) << " n=" << n << " classes=" << classes
     << " noise=" << fmt_g(noise) << " rotation=" << fmt_g(shift.rotation_deg)
     << " translate_x=" << fmt_g(shift.translate_x) << " translate_y=" << fmt_g(shift.translate_y)
     << " scale=" << fmt_g(shift.scale) << " normalization=" << standardize_name(normalization)
     << " seed=" << seed;
  return os.str();
}

DomainDataset DomainDataset::make(Domain domain, Split split, Tensor inputs, Tensor train_labels,
                                  Tensor eval_labels, int64_t classes, Standardize normalization) {
  if (inputs.rank() != 2) throw ShapeError("dataset: inputs must be rank-2");
  for (const Tensor* labels : {&train_labels, &eval_labels}) {
    if (labels->size() == 0) continue;
    if (labels->rank() != 2 || labels->rows() != inputs.rows() || labels->cols() != classes) {
      throw ShapeError("dataset: labels must be [n, classes] one-hot rows");
    }
  }
  DomainDataset ds;
  ds.domain_ = domain;
  ds.split_ = split;
  ds.inputs_ = std::move(inputs);
  ds.train_labels_ = std::move(train_labels);
  ds.eval_labels_ = std::move(eval_labels);
  ds.classes_ = classes;
  ds.normalization_ = normalization;
  return ds;
}

const Tensor& DomainDataset::labels() const {
  if (!has_labels()) {
    throw ValueError(std::string("dataset: ") + domain_name(domain_) + " " + split_name(split_) +
                     " split carries no training labels");
  }
  return train_labels_;
}

const Tensor& DomainDataset::eval_labels() const {
  if (!has_eval_labels()) {
    throw ValueError(std::string("dataset: ") + domain_name(domain_) + " " + split_name(split_) +
                     " split carries no evaluation labels");
  }
  return eval_labels_;
}

DomainSplits gen_source(const TaskSpec& spec) {
  spec.validate();
  RngStream rng = RngStream(spec.seed).derive("gen/source");
  RawDraw raw = draw_points(spec, rng);
  const int64_t k = spec.generator == Generator::two_moons ? 2 : spec.classes;
  const int64_t n_test = spec.n / 5;
  const int64_t n_train = spec.n - n_test;

  DomainSplits out;
  Tensor y_train = one_hot(raw.y, 0, n_train, k);
  Tensor y_test = one_hot(raw.y, n_train, n_test, k);
  out.train = DomainDataset::make(Domain::source, Split::train, slice(raw.x, 0, n_train), y_train,
                                  y_train, k);
  out.test = DomainDataset::make(Domain::source, Split::test, slice(raw.x, n_train, n_test),
                                 y_test, y_test, k);
  return out;
}

DomainSplits gen_target(const TaskSpec& source_spec) {
  source_spec.validate();
  RngStream rng = RngStream(source_spec.seed).derive("gen/target");
  RawDraw raw = draw_points(source_spec, rng);
  const int64_t n = source_spec.n;
  const int64_t k = source_spec.generator == Generator::two_moons ? 2 : source_spec.classes;

  double cx = 0.0;
  double cy = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    cx += raw.x.at(i, 0);
    cy += raw.x.at(i, 1);
  }
  cx /= static_cast<double>(n);
  cy /= static_cast<double>(n);

  const Shift& sh = source_spec.shift;
  const double th = sh.rotation_deg * kPi / 180.0;
  const double c = std::cos(th);
  const double s = std::sin(th);
  for (int64_t i = 0; i < n; ++i) {
    const double dx = raw.x.at(i, 0) - cx;
    const double dy = raw.x.at(i, 1) - cy;
    raw.x.at(i, 0) = cx + sh.scale * (c * dx - s * dy) + sh.translate_x;
    raw.x.at(i, 1) = cy + sh.scale * (s * dx + c * dy) + sh.translate_y;
  }

  const int64_t n_test = n / 5;
  const int64_t n_train = n - n_test;

  DomainSplits out;
  out.train = DomainDataset::make(Domain::target, Split::train, slice(raw.x, 0, n_train),
                                  Tensor(), Tensor(), k);
  Tensor y_test = one_hot(raw.y, n_train, n_test, k);
  out.test = DomainDataset::make(Domain::target, Split::test, slice(raw.x, n_train, n_test),
                                 Tensor(), y_test, k);

  // Rows are already uniformly shuffled, so the prefix is a uniform 10%.
  const int64_t n_val = n_train / 10;
  out.validation.indices.resize(static_cast<size_t>(n_val));
  for (int64_t i = 0; i < n_val; ++i) out.validation.indices[static_cast<size_t>(i)] = i;
  out.validation.labels = one_hot(raw.y, 0, n_val, k);
  return out;
}

namespace {

Tensor standardize_rows(const Tensor& inputs) {
  const int64_t n = inputs.rows();
  const int64_t d = inputs.cols();
  Tensor out = Tensor::zeros({n, d});
  for (int64_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (int64_t c = 0; c < d; ++c) mean += inputs.at(i, c);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t c = 0; c < d; ++c) {
      const double dev = inputs.at(i, c) - mean;
      var += dev * dev;
    }
    const double std_ = std::max(std::sqrt(var / static_cast<double>(d)), 1e-8);
    for (int64_t c = 0; c < d; ++c) out.at(i, c) = (inputs.at(i, c) - mean) / std_;
  }
  return out;
}

DomainDataset rebuilt(const DomainDataset& ds, Tensor inputs, Standardize mode) {
  return DomainDataset::make(ds.domain(), ds.split(), std::move(inputs),
                             ds.has_labels() ? ds.labels() : Tensor(),
                             ds.has_eval_labels() ? ds.eval_labels() : Tensor(), ds.classes(),
                             mode);
}

}  // namespace

DomainDataset standardize(const DomainDataset& ds, Standardize mode) {
  switch (mode) {
    case Standardize::none:
      return ds;
    case Standardize::per_sample:
      if (ds.dim() < 2) throw ValueError("standardize: per-sample mode needs d >= 2");
      return rebuilt(ds, standardize_rows(ds.inputs()), mode);
    case Standardize::per_domain:
      throw ValueError("standardize: per-domain mode needs both splits; pass the DomainSplits");
  }
  throw ValueError("standardize: unknown mode");
}

DomainSplits standardize(const DomainSplits& splits, Standardize mode) {
  DomainSplits out;
  out.validation = splits.validation;
  if (mode != Standardize::per_domain) {
    out.train = standardize(splits.train, mode);
    out.test = standardize(splits.test, mode);
    return out;
  }

  const Tensor& x = splits.train.inputs();
  const int64_t n = x.rows();
  const int64_t d = x.cols();
  std::vector<double> mean(static_cast<size_t>(d), 0.0);
  std::vector<double> std_(static_cast<size_t>(d), 0.0);
  for (int64_t c = 0; c < d; ++c) {
    double m = 0.0;
    for (int64_t i = 0; i < n; ++i) m += x.at(i, c);
    m /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double dev = x.at(i, c) - m;
      var += dev * dev;
    }
    mean[static_cast<size_t>(c)] = m;
    std_[static_cast<size_t>(c)] = std::max(std::sqrt(var / static_cast<double>(n)), 1e-8);
  }

  auto apply = [&](const DomainDataset& ds) {
    Tensor y = Tensor::zeros({ds.size(), d});
    for (int64_t i = 0; i < ds.size(); ++i) {
      for (int64_t c = 0; c < d; ++c) {
        y.at(i, c) =
            (ds.inputs().at(i, c) - mean[static_cast<size_t>(c)]) / std_[static_cast<size_t>(c)];
      }
    }
    return rebuilt(ds, std::move(y), mode);
  };
  out.train = apply(splits.train);
  out.test = apply(splits.test);
  return out;
}

std::vector<int64_t> ShuffleCursor::take(int64_t k) {
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(k));
  while (static_cast<int64_t>(out.size()) < k) {
    if (pos >= static_cast<int64_t>(order.size())) {
      order = rng.permutation(n);
      pos = 0;
    }
    out.push_back(order[static_cast<size_t>(pos++)]);
  }
  return out;
}

std::string ShuffleCursor::serialize() const {
  std::ostringstream os;
  os << "cursor " << n << ' ' << pos << ' ' << order.size();
  for (int64_t i : order) os << ' ' << i;
  os << '\n' << rng.serialize() << '\n';
  return os.str();
}

ShuffleCursor ShuffleCursor::deserialize(std::istream& is) {
  std::string tag;
  size_t count = 0;
  ShuffleCursor cur;
  is >> tag >> cur.n >> cur.pos >> count;
  if (!is || tag != "cursor") throw IoError("batch_iter: malformed cursor state");
  cur.order.resize(count);
  for (size_t i = 0; i < count; ++i) is >> cur.order[i];
  std::string line;
  std::getline(is, line);  // trailing newline of the cursor row
  std::getline(is, line);
  if (!is) throw IoError("batch_iter: malformed cursor state");
  cur.rng = RngStream::deserialize(line);
  return cur;
}

namespace {

void check_batch(const char* who, int64_t batch, int64_t n, const char* domain) {
  if (batch < 2) throw ValueError(std::string(who) + ": batch must be at least 2 (mixup pairs)");
  if (batch > n) {
    throw ValueError(std::string(who) + ": batch " + std::to_string(batch) + " exceeds " +
                     domain + " dataset size " + std::to_string(n));
  }
}

}  // namespace

BatchIter::BatchIter(const DomainDataset& src, const DomainDataset& tgt, int64_t batch,
                     RngStream rng)
    : src_(&src), tgt_(&tgt), batch_(batch) {
  check_batch("batch_iter", batch, src.size(), "source");
  check_batch("batch_iter", batch, tgt.size(), "target");
  if (!src.has_labels()) throw ValueError("batch_iter: source split carries no labels");
  src_cur_ = ShuffleCursor{rng.derive("src"), {}, 0, src.size()};
  tgt_cur_ = ShuffleCursor{rng.derive("tgt"), {}, 0, tgt.size()};
}

BatchIter::Batch BatchIter::next() {
  const std::vector<int64_t> si = src_cur_.take(batch_);
  const std::vector<int64_t> ti = tgt_cur_.take(batch_);
  Batch b;
  b.x_src = gather(src_->inputs(), si);
  b.y_src = gather(src_->labels(), si);
  b.x_tgt = gather(tgt_->inputs(), ti);
  return b;
}

std::string BatchIter::serialize() const {
  return "batchiter 1\n" + src_cur_.serialize() + tgt_cur_.serialize();
}

void BatchIter::restore(const std::string& blob) {
  std::istringstream is(blob);
  std::string tag;
  int version = 0;
  is >> tag >> version;
  if (!is || tag != "batchiter" || version != 1) throw IoError("batch_iter: malformed state blob");
  ShuffleCursor src_cur = ShuffleCursor::deserialize(is);
  ShuffleCursor tgt_cur = ShuffleCursor::deserialize(is);
  if (src_cur.n != src_->size() || tgt_cur.n != tgt_->size()) {
    throw ValueError("batch_iter: state blob does not match the dataset sizes");
  }
  src_cur_ = std::move(src_cur);
  tgt_cur_ = std::move(tgt_cur);
}

CycleIter::CycleIter(const DomainDataset& ds, int64_t batch, RngStream rng)
    : ds_(&ds), batch_(batch) {
  check_batch("cycle_iter", batch, ds.size(), "the");
  cur_ = ShuffleCursor{std::move(rng), {}, 0, ds.size()};
}

Tensor CycleIter::next() { return gather(ds_->inputs(), cur_.take(batch_)); }

std::string CycleIter::serialize() const { return "cycleiter 1\n" + cur_.serialize(); }

void CycleIter::restore(const std::string& blob) {
  std::istringstream is(blob);
  std::string tag;
  int version = 0;
  is >> tag >> version;
  if (!is || tag != "cycleiter" || version != 1) throw IoError("cycle_iter: malformed state blob");
  ShuffleCursor cur = ShuffleCursor::deserialize(is);
  if (cur.n != ds_->size()) throw ValueError("cycle_iter: state blob does not match dataset size");
  cur_ = std::move(cur);
}

void dump_datasets(std::ostream& os, const TaskSpec& spec,
                   const std::vector<const DomainDataset*>& sets) {
  os << "# " << spec.echo() << '\n';
  int64_t d = 0;
  for (const DomainDataset* ds : sets) d = std::max(d, ds->dim());
  os << "domain,split,label";
  for (int64_t c = 0; c < d; ++c) os << ",x" << c;
  os << '\n';
  for (const DomainDataset* ds : sets) {
    for (int64_t i = 0; i < ds->size(); ++i) {
      os << domain_name(ds->domain()) << ',' << split_name(ds->split()) << ',';
      if (ds->has_eval_labels()) {
        const Tensor& y = ds->eval_labels();
        int64_t cls = 0;
        for (int64_t c = 1; c < y.cols(); ++c) {
          if (y.at(i, c) > y.at(i, cls)) cls = c;
        }
        os << cls;
      }
      for (int64_t c = 0; c < ds->dim(); ++c) os << ',' << fmt_g(ds->inputs().at(i, c));
      os << '\n';
    }
  }
  if (!os) throw IoError("dump_datasets: write failed");
}

}  // namespace vmt
