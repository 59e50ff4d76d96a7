// qmsv/subspace.cpp

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

#include "qmsv/subspace.hpp"

#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "qmsv/io.hpp"

namespace qmsv {

void TvModel::Validate() const {
  const Index cd = sigma.rows() * sigma.cols();
  if (phi.rows() != cd || m_bar.rows() != sigma.rows() ||
      m_bar.cols() != sigma.cols())
    throw ShapeError("TV model shapes disagree");
  if (rank() < 1 || rank() > cd) throw ArgumentError("TV rank out of range");
  if (!(sigma.array() > 0).all()) throw ArgumentError("TV sigma must be positive");
  if (!phi.allFinite()) throw ArgumentError("TV matrix is not finite");
}

IvectorExtractor::IvectorExtractor(TvModel model) : model_(std::move(model)) {
  model_.Validate();
  const Index c = model_.num_components();
  const Index d = model_.dim();
  const Index r = model_.rank();
  scaled_phi_ = model_.phi;
  for (Index i = 0; i < c; ++i)
    scaled_phi_.middleRows(i * d, d).array().colwise() /=
        model_.sigma.row(i).transpose().array();
  component_precision_.resize(r * r, c);
  for (Index i = 0; i < c; ++i) {
    MatrixXd p = model_.phi.middleRows(i * d, d).transpose() *
                 scaled_phi_.middleRows(i * d, d);
    component_precision_.col(i) = Eigen::Map<const VectorXd>(p.data(), r * r);
  }
}

MatrixXd IvectorExtractor::Precision(const VectorXd& counts) const {
  if (counts.size() != model_.num_components())
    throw ShapeError("i-vector extraction: component count mismatch");
  const Index r = model_.rank();
  VectorXd flat = component_precision_ * counts;
  MatrixXd l = Eigen::Map<const MatrixXd>(flat.data(), r, r);
  l.diagonal().array() += 1.0;
  return 0.5 * (l + l.transpose());
}

VectorXd IvectorExtractor::LinearTerm(const BwStats& stats) const {
  const Index c = model_.num_components();
  const Index d = model_.dim();
  if (stats.num_components() != c || stats.dim() != d)
    throw ShapeError("i-vector extraction: stats shape does not match model");
  VectorXd centered(c * d);
  for (Index i = 0; i < c; ++i)
    centered.segment(i * d, d) =
        stats.n(i) * (stats.e.row(i) - model_.m_bar.row(i)).transpose();
  return scaled_phi_.transpose() * centered;
}

IVector IvectorExtractor::Extract(const BwStats& stats,
                                  bool with_covariance) const {
  const MatrixXd precision = Precision(stats.n);
  const VectorXd b = LinearTerm(stats);
  Eigen::LLT<MatrixXd> llt(precision);
  IVector iv;
  iv.y = llt.solve(b);
  if (with_covariance) {
    MatrixXd cov = llt.solve(MatrixXd::Identity(precision.rows(), precision.cols()));
    iv.posterior_cov = 0.5 * (cov + cov.transpose());
  }
  return iv;
}

IVector ExtractIvector(const TvModel& tv, const BwStats& stats) {
  return IvectorExtractor(tv).Extract(stats);
}

double PosteriorTrace(const IVector& iv) {
  if (!iv.posterior_cov) throw ArgumentError("i-vector has no posterior covariance");
  return iv.posterior_cov->trace();
}

TvModel TrainTv(std::span<const BwStats> stats, const GmmModel& ubm,
                const TvTrainConfig& cfg) {
  const Index c = ubm.num_components();
  const Index d = ubm.dim();
  const Index r = cfg.rank;
  if (r < 1 || r > c * d) throw ArgumentError("TV rank out of range");
  if (cfg.n_iters < 1) throw ArgumentError("TV training needs >= 1 iteration");
  if (static_cast<Index>(stats.size()) < r)
    throw ArgumentError("TV training: " + std::to_string(stats.size()) +
                        " utterances is fewer than the rank " +
                        std::to_string(r));
  for (const auto& s : stats)
    if (s.num_components() != c || s.dim() != d)
      throw ShapeError("TV training: stats shape does not match UBM");

  TvModel model;
  model.sigma = ubm.variances;
  model.m_bar = ubm.means;
  model.phi.resize(c * d, r);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(-0.5, 0.5);
  const double scale = 1.0 / std::sqrt(static_cast<double>(r));
  for (Index j = 0; j < r; ++j)
    for (Index i = 0; i < c * d; ++i) model.phi(i, j) = unif(rng) * scale;

  // Centered first-order statistics N_i (E_i - m_i) are iteration invariant.
  std::vector<VectorXd> centered;
  centered.reserve(stats.size());
  for (const auto& s : stats) {
    VectorXd v(c * d);
    for (Index i = 0; i < c; ++i)
      v.segment(i * d, d) = s.n(i) * (s.e.row(i) - ubm.means.row(i)).transpose();
    centered.push_back(std::move(v));
  }

  auto e_step = [&](const IvectorExtractor& ex, MatrixXd* acc_a,
                    MatrixXd* acc_c) {
    double objective = 0;
    for (std::size_t u = 0; u < stats.size(); ++u) {
      const MatrixXd precision = ex.Precision(stats[u].n);
      Eigen::LLT<MatrixXd> llt(precision);
      const VectorXd b = ex.LinearTerm(stats[u]);
      const VectorXd y = llt.solve(b);
      const MatrixXd l_mat = llt.matrixL();
      objective += 0.5 * b.dot(y) - l_mat.diagonal().array().log().sum();
      if (acc_a) {
        MatrixXd second = llt.solve(MatrixXd::Identity(r, r));
        second.noalias() += y * y.transpose();
        const VectorXd flat = Eigen::Map<const VectorXd>(second.data(), r * r);
        acc_a->noalias() += flat * stats[u].n.transpose();
        acc_c->noalias() += centered[u] * y.transpose();
      }
    }
    return objective;
  };

  for (int it = 0; it < cfg.n_iters; ++it) {
    IvectorExtractor ex(model);
    MatrixXd acc_a = MatrixXd::Zero(r * r, c);
    MatrixXd acc_c = MatrixXd::Zero(c * d, r);
    model.train_objective.push_back(e_step(ex, &acc_a, &acc_c));
    for (Index i = 0; i < c; ++i) {
      MatrixXd a = Eigen::Map<const MatrixXd>(acc_a.col(i).data(), r, r);
      a = 0.5 * (a + a.transpose());
      if (a.trace() <= 0) continue;  // no data on this component
      Eigen::LDLT<MatrixXd> ldlt(a);
      model.phi.middleRows(i * d, d) =
          ldlt.solve(acc_c.middleRows(i * d, d).transpose()).transpose();
    }
  }
  model.train_objective.push_back(
      e_step(IvectorExtractor(model), nullptr, nullptr));
  return model;
}

LdaProjection TrainLda(const MatrixXd& vectors,
                       std::span<const std::string> labels, Index out_dim) {
  const Index n = vectors.rows();
  const Index r = vectors.cols();
  if (static_cast<Index>(labels.size()) != n)
    throw ShapeError("LDA: label count does not match vector count");
  std::map<std::string, std::vector<Index>> groups;
  for (Index i = 0; i < n; ++i) groups[labels[static_cast<std::size_t>(i)]].push_back(i);
  const Index n_spk = static_cast<Index>(groups.size());
  bool has_repeat = false;
  for (const auto& g : groups) has_repeat |= g.second.size() >= 2;
  if (n_spk < 2 || !has_repeat)
    throw ArgumentError("LDA needs >= 2 speakers and a speaker with >= 2 vectors");
  if (out_dim < 1) throw ArgumentError("LDA output dimension must be >= 1");
  const Index max_dim = std::min(r, n_spk - 1);
  if (out_dim > max_dim) {
    std::cerr << "warning: LDA dimension " << out_dim << " clamped to "
              << max_dim << '\n';
    out_dim = max_dim;
  }

  const VectorXd mean = vectors.colwise().mean().transpose();
  MatrixXd sw = MatrixXd::Zero(r, r);
  MatrixXd sb = MatrixXd::Zero(r, r);
  for (const auto& [label, idx] : groups) {
    VectorXd m = VectorXd::Zero(r);
    for (Index i : idx) m += vectors.row(i).transpose();
    m /= static_cast<double>(idx.size());
    for (Index i : idx) {
      const VectorXd dv = vectors.row(i).transpose() - m;
      sw.noalias() += dv * dv.transpose();
    }
    const VectorXd db = m - mean;
    sb.noalias() += static_cast<double>(idx.size()) * db * db.transpose();
  }
  sw /= static_cast<double>(n);
  sb /= static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<MatrixXd> sw_eig(sw);
  const double max_ev = sw_eig.eigenvalues().maxCoeff();
  if (sw_eig.eigenvalues().minCoeff() <= 1e-10 * std::max(max_ev, 1e-300))
    sw.diagonal().array() += 1e-6 * std::max(sw.trace(), 1e-300) / r;

  Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> ges(sb, sw);
  if (ges.info() != Eigen::Success)
    throw Error("LDA: generalized eigenproblem failed");
  LdaProjection proj;
  proj.mean = mean;
  proj.basis.resize(r, out_dim);
  proj.eigenvalues.resize(out_dim);
  // Eigen returns ascending eigenvalues.
  for (Index k = 0; k < out_dim; ++k) {
    VectorXd v = ges.eigenvectors().col(r - 1 - k);
    Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    proj.basis.col(k) = v;
    proj.eigenvalues(k) = ges.eigenvalues()(r - 1 - k);
  }
  return proj;
}

VectorXd ProjectLda(const LdaProjection& proj, const VectorXd& y) {
  if (y.size() != proj.in_dim())
    throw ShapeError("LDA projection: vector has dim " +
                     std::to_string(y.size()) + ", expected " +
                     std::to_string(proj.in_dim()));
  return proj.basis.transpose() * (y - proj.mean);
}

VectorXd ProjectLda(const LdaProjection& proj, const IVector& iv) {
  return ProjectLda(proj, iv.y);
}

void WriteTv(const std::filesystem::path& path, const TvModel& model) {
  model.Validate();
  io::Container c;
  c.magic = "QMSVTVM1";
  c.Set("components", static_cast<long long>(model.num_components()));
  c.Set("dim", static_cast<long long>(model.dim()));
  c.Set("rank", static_cast<long long>(model.rank()));
  std::ostringstream obj;
  obj << model.train_objective.size();
  for (double v : model.train_objective) obj << ' ' << io::FormatDouble(v);
  c.Set("objective", obj.str());
  c.Add("phi", model.phi);
  c.Add("sigma", model.sigma);
  c.Add("m_bar", model.m_bar);
  io::WriteContainer(path, c);
}

TvModel ReadTv(const std::filesystem::path& path) {
  const io::Container c = io::ReadContainer(path, "QMSVTVM1");
  TvModel m;
  m.phi = c.Matrix("phi");
  m.sigma = c.Matrix("sigma");
  m.m_bar = c.Matrix("m_bar");
  const auto obj = io::SplitWhitespace(c.Get("objective"));
  for (std::size_t i = 1; i < obj.size(); ++i)
    m.train_objective.push_back(io::ParseDouble(obj[i]));
  m.Validate();
  return m;
}

void WriteLda(const std::filesystem::path& path, const LdaProjection& proj) {
  io::Container c;
  c.magic = "QMSVLDA1";
  c.Set("in_dim", static_cast<long long>(proj.in_dim()));
  c.Set("out_dim", static_cast<long long>(proj.out_dim()));
  c.Add("basis", proj.basis);
  c.Add("mean", proj.mean);
  c.Add("eigenvalues", proj.eigenvalues);
  io::WriteContainer(path, c);
}

LdaProjection ReadLda(const std::filesystem::path& path) {
  const io::Container c = io::ReadContainer(path, "QMSVLDA1");
  LdaProjection p;
  p.basis = c.Matrix("basis");
  p.mean = c.Matrix("mean");
  p.eigenvalues = c.Matrix("eigenvalues");
  if (p.mean.size() != p.in_dim()) throw IoError(path.string() + ": bad LDA shapes");
  return p;
}

void WriteVectorsText(const std::filesystem::path& path,
                      std::span<const NamedVector> vectors) {
  std::ostringstream os;
  for (const auto& nv : vectors) {
    os << nv.id;
    for (Index i = 0; i < nv.v.size(); ++i) os << ' ' << io::FormatDouble(nv.v(i));
    os << '\n';
  }
  io::WriteFileAtomic(path, os.str());
}

std::vector<NamedVector> ReadVectorsText(const std::filesystem::path& path) {
  std::vector<NamedVector> out;
  for (const auto& line : io::ReadLines(path)) {
    auto f = io::SplitWhitespace(line);
    if (f.size() < 2) throw IoError(path.string() + ": bad vector line");
    NamedVector nv{f[0], VectorXd(static_cast<Index>(f.size() - 1))};
    for (std::size_t i = 1; i < f.size(); ++i)
      nv.v(static_cast<Index>(i - 1)) = io::ParseDouble(f[i]);
    if (!out.empty() && out.front().v.size() != nv.v.size())
      throw IoError(path.string() + ": inconsistent vector lengths");
    out.push_back(std::move(nv));
  }
  return out;
}

}  // namespace qmsv
