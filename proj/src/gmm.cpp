// qmsv/gmm.cpp

// Copyright 2026  The qmsv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "qmsv/gmm.hpp"

#include <algorithm>
#include <random>
#include <sstream>

#include "qmsv/io.hpp"
#include "qmsv/stats.hpp"

namespace qmsv {

namespace {

constexpr Index kBlock = 4096;

struct EmAccumulator {
  VectorXd n;
  MatrixXd f;
  MatrixXd s;
  double loglik = 0;
};

EmAccumulator EStep(const GmmModel& model,
                    const Eigen::Ref<const RowMatrixXd>& data) {
  EmAccumulator acc;
  acc.n = VectorXd::Zero(model.num_components());
  acc.f = MatrixXd::Zero(model.num_components(), model.dim());
  acc.s = MatrixXd::Zero(model.num_components(), model.dim());
  for (Index start = 0; start < data.rows(); start += kBlock) {
    const Index len = std::min(kBlock, data.rows() - start);
    const auto block = data.middleRows(start, len);
    MatrixXd post = LogJointLikelihoods(model, block);
    for (Index r = 0; r < len; ++r) {
      const double lse = LogSumExp(post.row(r));
      acc.loglik += lse;
      post.row(r) = (post.row(r).array() - lse).exp();
    }
    acc.n += post.colwise().sum().transpose();
    acc.f.noalias() += post.transpose() * block;
    acc.s.noalias() += post.transpose() * block.array().square().matrix();
  }
  return acc;
}

// Maximization under the variance floor. The floored variance is the
// constrained maximizer of the per-dimension auxiliary function, so the
// update remains a (generalized) EM step.
void MStep(const EmAccumulator& acc, const VectorXd& floor, double total,
           GmmModel& model) {
  model.weights = acc.n / total;
  model.weights /= model.weights.sum();
  for (Index i = 0; i < model.num_components(); ++i) {
    if (acc.n(i) < kZeroCount) continue;
    const Eigen::RowVectorXd mean = acc.f.row(i) / acc.n(i);
    Eigen::RowVectorXd var =
        acc.s.row(i) / acc.n(i) - mean.array().square().matrix();
    model.means.row(i) = mean;
    model.variances.row(i) = var.transpose().cwiseMax(floor).transpose();
  }
}

GmmModel Initialize(const Eigen::Ref<const RowMatrixXd>& data,
                    const GmmTrainConfig& cfg, const VectorXd& global_var,
                    const VectorXd& floor) {
  const Index total = data.rows();
  const Index c = cfg.n_components;
  std::mt19937_64 rng(cfg.seed);

  // Candidate pool: a seeded sample without replacement (all frames if few).
  std::vector<Index> pool(static_cast<std::size_t>(total));
  for (Index i = 0; i < total; ++i) pool[static_cast<std::size_t>(i)] = i;
  if (total > cfg.init_pool) {
    for (Index i = 0; i < cfg.init_pool; ++i) {
      std::uniform_int_distribution<Index> pick(i, total - 1);
      std::swap(pool[static_cast<std::size_t>(i)],
                pool[static_cast<std::size_t>(pick(rng))]);
    }
    pool.resize(static_cast<std::size_t>(cfg.init_pool));
  }
  const Index p = static_cast<Index>(pool.size());
  RowMatrixXd cand(p, data.cols());
  for (Index i = 0; i < p; ++i) cand.row(i) = data.row(pool[static_cast<std::size_t>(i)]);
  // Distances in variance-normalized coordinates.
  const Eigen::RowVectorXd scale = global_var.cwiseSqrt().cwiseInverse().transpose();
  cand.array().rowwise() *= scale.array();

  // Farthest-point seeding.
  RowMatrixXd centers(c, data.cols());
  std::uniform_int_distribution<Index> first(0, p - 1);
  centers.row(0) = cand.row(first(rng));
  VectorXd best = (cand.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (Index k = 1; k < c; ++k) {
    Index far = 0;
    best.maxCoeff(&far);
    centers.row(k) = cand.row(far);
    best = best.cwiseMin(
        (cand.rowwise() - centers.row(k)).rowwise().squaredNorm());
  }

  // Two hard-assignment refinement passes.
  std::vector<Index> assign(static_cast<std::size_t>(p), 0);
  VectorXd counts;
  for (int pass = 0; pass < 2; ++pass) {
    const VectorXd cnorm = centers.rowwise().squaredNorm();
    for (Index start = 0; start < p; start += kBlock) {
      const Index len = std::min(kBlock, p - start);
      MatrixXd dist = -2.0 * cand.middleRows(start, len) * centers.transpose();
      dist.rowwise() += cnorm.transpose();
      for (Index r = 0; r < len; ++r)
        dist.row(r).minCoeff(&assign[static_cast<std::size_t>(start + r)]);
    }
    RowMatrixXd sums = RowMatrixXd::Zero(c, data.cols());
    counts = VectorXd::Zero(c);
    for (Index i = 0; i < p; ++i) {
      const Index k = assign[static_cast<std::size_t>(i)];
      sums.row(k) += cand.row(i);
      counts(k) += 1;
    }
    for (Index k = 0; k < c; ++k)
      if (counts(k) > 0) centers.row(k) = sums.row(k) / counts(k);
  }

  GmmModel m;
  m.weights = (counts.array() + 1.0) / (static_cast<double>(p) + c);
  m.means = centers;
  m.means.array().rowwise() /= scale.array();
  m.variances = global_var.transpose().replicate(c, 1);
  m.variances = m.variances.cwiseMax(floor.transpose().replicate(c, 1));
  return m;
}

}  // namespace

void GmmModel::Validate() const {
  const Index c = weights.size();
  if (c < 1) throw ArgumentError("GMM has no components");
  if (means.rows() != c || variances.rows() != c ||
      variances.cols() != means.cols())
    throw ShapeError("GMM parameter shapes disagree");
  if ((weights.array() < 0).any() || std::abs(weights.sum() - 1.0) > 1e-10)
    throw ArgumentError("GMM weights are not on the simplex");
  if (!(variances.array() > 0).all())
    throw ArgumentError("GMM variances must be positive");
}

MatrixXd LogJointLikelihoods(const GmmModel& model,
                             const Eigen::Ref<const RowMatrixXd>& frames) {
  if (frames.cols() != model.dim())
    throw ShapeError("feature dim " + std::to_string(frames.cols()) +
                     " does not match model dim " +
                     std::to_string(model.dim()));
  const MatrixXd inv_var = model.variances.cwiseInverse();
  const MatrixXd scaled_mean = model.means.cwiseProduct(inv_var);
  VectorXd bias(model.num_components());
  for (Index i = 0; i < model.num_components(); ++i)
    bias(i) = std::log(model.weights(i)) -
              0.5 * (model.dim() * kLog2Pi +
                     model.variances.row(i).array().log().sum() +
                     model.means.row(i).dot(scaled_mean.row(i)));
  MatrixXd out = frames * scaled_mean.transpose();
  out.noalias() -= 0.5 * frames.array().square().matrix() * inv_var.transpose();
  out.rowwise() += bias.transpose();
  return out;
}

VectorXd FramePosteriors(const GmmModel& model,
                         const Eigen::Ref<const VectorXd>& frame) {
  const RowMatrixXd row = frame.transpose();
  VectorXd logp = LogJointLikelihoods(model, row).row(0).transpose();
  VectorXd post = (logp.array() - LogSumExp(logp)).exp();
  return post / post.sum();
}

double AvgLogLikelihood(const GmmModel& model, const FeatureMatrix& features) {
  return AvgLogLikelihood(model, features.frames);
}

double AvgLogLikelihood(const GmmModel& model,
                        const Eigen::Ref<const RowMatrixXd>& frames) {
  if (frames.rows() == 0) throw ArgumentError("log-likelihood of no frames");
  double total = 0;
  for (Index start = 0; start < frames.rows(); start += kBlock) {
    const Index len = std::min(kBlock, frames.rows() - start);
    const MatrixXd lj = LogJointLikelihoods(model, frames.middleRows(start, len));
    for (Index r = 0; r < len; ++r) total += LogSumExp(lj.row(r));
  }
  return total / static_cast<double>(frames.rows());
}

GmmModel TrainUbm(const Eigen::Ref<const RowMatrixXd>& pooled,
                  const GmmTrainConfig& cfg) {
  if (cfg.n_components < 1) throw ArgumentError("UBM needs >= 1 component");
  if (cfg.n_iters < 1) throw ArgumentError("UBM needs >= 1 EM iteration");
  if (!(cfg.variance_floor > 0)) throw ArgumentError("variance floor must be > 0");
  if (pooled.rows() < 10 * static_cast<Index>(cfg.n_components))
    throw ArgumentError("UBM training: " + std::to_string(pooled.rows()) +
                        " frames is fewer than 10 per component");
  const double total = static_cast<double>(pooled.rows());
  const VectorXd mean = pooled.colwise().mean().transpose();
  VectorXd global_var =
      (pooled.rowwise() - mean.transpose()).colwise().squaredNorm().transpose() /
      total;
  global_var = global_var.cwiseMax(1e-12);
  const VectorXd floor = cfg.variance_floor * global_var;

  GmmModel model = Initialize(pooled, cfg, global_var, floor);
  model.variance_floor_fraction = cfg.variance_floor;
  model.seed = cfg.seed;
  for (int it = 0; it < cfg.n_iters; ++it) {
    EmAccumulator acc = EStep(model, pooled);
    model.train_loglik.push_back(acc.loglik);
    MStep(acc, floor, total, model);
  }
  model.train_loglik.push_back(EStep(model, pooled).loglik);
  return model;
}

GmmModel TrainUbm(std::span<const FeatureMatrix> features,
                  const GmmTrainConfig& cfg) {
  Index rows = 0;
  for (const auto& f : features) rows += f.num_frames();
  if (rows == 0) throw ArgumentError("UBM training: no frames");
  RowMatrixXd pooled(rows, features.front().dim());
  Index r = 0;
  for (const auto& f : features) {
    if (f.dim() != pooled.cols()) throw ShapeError("UBM training: mixed dims");
    pooled.middleRows(r, f.num_frames()) = f.frames;
    r += f.num_frames();
  }
  return TrainUbm(pooled, cfg);
}

GmmModel MapAdapt(const GmmModel& ubm, const FeatureMatrix& features,
                  double relevance) {
  if (!(relevance > 0)) throw ArgumentError("MAP relevance must be > 0");
  if (features.num_frames() == 0) {
    GmmModel out = ubm;
    out.train_loglik.clear();
    return out;
  }
  return MapAdapt(ubm, AccumulateBw(ubm, features), relevance);
}

double ScoreGmmUbm(const GmmModel& target, const GmmModel& ubm,
                   const FeatureMatrix& test) {
  if (target.num_components() != ubm.num_components() ||
      target.dim() != ubm.dim())
    throw ShapeError("GMM-UBM scoring: target and UBM shapes differ");
  return AvgLogLikelihood(target, test) - AvgLogLikelihood(ubm, test);
}

GmmUbmBatchScorer::GmmUbmBatchScorer(const GmmModel& ubm) : ubm_(ubm) {
  ubm_.Validate();
  inv_var_ = ubm_.variances.cwiseInverse();
  log_norm_ = ubm_.weights.array().log() -
              0.5 * (ubm_.variances.array().log() + kLog2Pi).rowwise().sum();
}

namespace {

// Sum over columns of log sum_i exp(lj(i, t)); frames are columns so the
// reduction is contiguous and vectorizes.
double SumColumnLogSumExp(MatrixXd& lj) {
  const Eigen::RowVectorXd max = lj.colwise().maxCoeff();
  lj.rowwise() -= max;
  return (lj.array().exp().colwise().sum().log().matrix() + max).sum();
}

}  // namespace

std::vector<double> GmmUbmBatchScorer::Score(
    std::span<const MatrixXd> target_means, const FeatureMatrix& test) const {
  const Index c = ubm_.num_components();
  const Index d = ubm_.dim();
  if (test.dim() != d) throw ShapeError("GMM-UBM scoring: feature dim mismatch");
  if (test.num_frames() == 0) throw ArgumentError("log-likelihood of no frames");
  // Per target: Sigma^-1 mu (C x D) and -1/2 mu' Sigma^-1 mu + log norm (C).
  auto linear_terms = [&](const MatrixXd& means, MatrixXd& scaled,
                          VectorXd& offset) {
    if (means.rows() != c || means.cols() != d)
      throw ShapeError("GMM-UBM scoring: target and UBM shapes differ");
    scaled = means.cwiseProduct(inv_var_);
    offset = log_norm_ - 0.5 * means.cwiseProduct(scaled).rowwise().sum();
  };
  std::vector<MatrixXd> scaled(target_means.size());
  std::vector<VectorXd> offsets(target_means.size());
  for (std::size_t m = 0; m < target_means.size(); ++m)
    linear_terms(target_means[m], scaled[m], offsets[m]);
  MatrixXd ubm_scaled;
  VectorXd ubm_offset;
  linear_terms(ubm_.means, ubm_scaled, ubm_offset);

  std::vector<double> totals(target_means.size(), 0.0);
  double ubm_total = 0;
  const auto& x = test.frames;
  MatrixXd shared, lj;
  for (Index start = 0; start < x.rows(); start += kBlock) {
    const Index len = std::min(kBlock, x.rows() - start);
    const auto block_t = x.middleRows(start, len).transpose();  // D x len
    shared.noalias() = -0.5 * inv_var_ * block_t.array().square().matrix();
    lj.noalias() = ubm_scaled * block_t;
    lj += shared;
    lj.colwise() += ubm_offset;
    ubm_total += SumColumnLogSumExp(lj);
    for (std::size_t m = 0; m < scaled.size(); ++m) {
      lj.noalias() = scaled[m] * block_t;
      lj += shared;
      lj.colwise() += offsets[m];
      totals[m] += SumColumnLogSumExp(lj);
    }
  }
  std::vector<double> out(totals.size());
  const double t = static_cast<double>(x.rows());
  for (std::size_t m = 0; m < out.size(); ++m)
    out[m] = totals[m] / t - ubm_total / t;
  return out;
}

void WriteGmm(const std::filesystem::path& path, const GmmModel& model) {
  model.Validate();
  io::Container c;
  c.magic = "QMSVGMM1";
  c.Set("components", static_cast<long long>(model.num_components()));
  c.Set("dim", static_cast<long long>(model.dim()));
  c.Set("floor", model.variance_floor_fraction);
  c.Set("seed", std::to_string(model.seed));
  std::ostringstream ll;
  ll << model.train_loglik.size();
  for (double v : model.train_loglik) ll << ' ' << io::FormatDouble(v);
  c.Set("loglik", ll.str());
  c.Add("weights", model.weights);
  c.Add("means", model.means);
  c.Add("variances", model.variances);
  io::WriteContainer(path, c);
}

GmmModel ReadGmm(const std::filesystem::path& path) {
  const io::Container c = io::ReadContainer(path, "QMSVGMM1");
  GmmModel m;
  m.weights = c.Matrix("weights");
  m.means = c.Matrix("means");
  m.variances = c.Matrix("variances");
  m.variance_floor_fraction = c.GetDouble("floor");
  m.seed = std::stoull(c.Get("seed"));
  const auto ll = io::SplitWhitespace(c.Get("loglik"));
  if (ll.empty()) throw IoError(path.string() + ": bad loglik field");
  for (std::size_t i = 1; i < ll.size(); ++i)
    m.train_loglik.push_back(io::ParseDouble(ll[i]));
  if (m.num_components() != c.GetInt("components") || m.dim() != c.GetInt("dim"))
    throw IoError(path.string() + ": header shape disagrees with payload");
  m.Validate();
  return m;
}

}  // namespace qmsv
