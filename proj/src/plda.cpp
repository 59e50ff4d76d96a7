// qmsv/plda.cpp

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

#include "qmsv/plda.hpp"

#include <map>
#include <random>
#include <sstream>

#include "qmsv/io.hpp"

namespace qmsv {

namespace {

struct SpeakerGroup {
  Index count = 0;
  VectorXd sum;  // sum of centred vectors
};

std::vector<SpeakerGroup> GroupBySpeaker(const MatrixXd& centred,
                                         std::span<const std::string> labels) {
  std::map<std::string, SpeakerGroup> groups;
  for (Index i = 0; i < centred.rows(); ++i) {
    auto& g = groups[labels[static_cast<std::size_t>(i)]];
    if (g.count == 0) g.sum = VectorXd::Zero(centred.cols());
    g.sum += centred.row(i).transpose();
    ++g.count;
  }
  std::vector<SpeakerGroup> out;
  for (auto& kv : groups) out.push_back(std::move(kv.second));
  return out;
}

double LogDet(const Eigen::LLT<MatrixXd>& llt) {
  return 2.0 * MatrixXd(llt.matrixL()).diagonal().array().log().sum();
}

// Marginal log-likelihood given the data scatter and per-speaker sums.
double MarginalLogLikelihood(const MatrixXd& psi, const MatrixXd& w,
                             const MatrixXd& scatter,
                             const std::vector<SpeakerGroup>& groups,
                             Index total) {
  const Index p = w.rows();
  Eigen::LLT<MatrixXd> w_llt(w);
  const MatrixXd w_inv_psi = w_llt.solve(psi);
  const MatrixXd core = psi.transpose() * w_inv_psi;
  const MatrixXd w_inv = w_llt.solve(MatrixXd::Identity(p, p));
  double ll = -0.5 * static_cast<double>(total) * (p * kLog2Pi + LogDet(w_llt));
  ll -= 0.5 * (w_inv.cwiseProduct(scatter)).sum();
  for (const auto& g : groups) {
    MatrixXd prec = static_cast<double>(g.count) * core;
    prec.diagonal().array() += 1.0;
    Eigen::LLT<MatrixXd> llt(prec);
    const VectorXd proj = w_inv_psi.transpose() * g.sum;
    ll += -0.5 * LogDet(llt) + 0.5 * proj.dot(llt.solve(proj));
  }
  return ll;
}

}  // namespace

void PldaModel::Validate() const {
  const Index p = eta.size();
  if (psi.rows() != p || residual_cov.rows() != p || residual_cov.cols() != p)
    throw ShapeError("PLDA model shapes disagree");
  if (psi.cols() > p) throw ArgumentError("PLDA rank exceeds dimension");
  if ((residual_cov - residual_cov.transpose()).cwiseAbs().maxCoeff() >
      1e-9 * std::max(1.0, residual_cov.cwiseAbs().maxCoeff()))
    throw ArgumentError("PLDA residual covariance is not symmetric");
  if (Eigen::LLT<MatrixXd>(residual_cov).info() != Eigen::Success)
    throw ArgumentError("PLDA residual covariance is not positive definite");
}

PldaModel TrainPlda(const MatrixXd& vectors,
                    std::span<const std::string> labels,
                    const PldaTrainConfig& cfg) {
  const Index n = vectors.rows();
  const Index p = vectors.cols();
  if (static_cast<Index>(labels.size()) != n)
    throw ShapeError("PLDA: label count does not match vector count");
  if (cfg.q_dim < 1 || cfg.q_dim > p)
    throw ArgumentError("PLDA: eigen-voice rank must be in [1, dim]");
  if (cfg.n_iters < 1) throw ArgumentError("PLDA: need >= 1 EM iteration");

  PldaModel model;
  model.eta = vectors.colwise().mean().transpose();
  const MatrixXd centred = vectors.rowwise() - model.eta.transpose();
  const auto groups = GroupBySpeaker(centred, labels);
  if (groups.size() < 2) throw ArgumentError("PLDA: need >= 2 speakers");
  bool has_repeat = false;
  for (const auto& g : groups) has_repeat |= g.count >= 2;
  if (!has_repeat)
    throw ArgumentError("PLDA: every speaker has a single session");

  const MatrixXd scatter = centred.transpose() * centred;

  // Within-speaker sample covariance for the residual initialization.
  MatrixXd within = scatter;
  for (const auto& g : groups)
    within.noalias() -= g.sum * g.sum.transpose() / static_cast<double>(g.count);
  within /= static_cast<double>(n);
  within.diagonal().array() += 1e-6;

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double data_sd = std::sqrt(scatter.trace() / static_cast<double>(n * p));
  model.psi.resize(p, cfg.q_dim);
  for (Index j = 0; j < cfg.q_dim; ++j)
    for (Index i = 0; i < p; ++i) model.psi(i, j) = 0.1 * data_sd * normal(rng);
  model.residual_cov = 0.5 * (within + within.transpose());

  const Index q = cfg.q_dim;
  for (int it = 0; it <= cfg.n_iters; ++it) {
    model.train_loglik.push_back(MarginalLogLikelihood(
        model.psi, model.residual_cov, scatter, groups, n));
    if (it == cfg.n_iters) break;

    Eigen::LLT<MatrixXd> w_llt(model.residual_cov);
    const MatrixXd w_inv_psi = w_llt.solve(model.psi);
    const MatrixXd core = model.psi.transpose() * w_inv_psi;
    MatrixXd cross = MatrixXd::Zero(p, q);   // sum_s sum_j r_sj z_s^T
    MatrixXd second = MatrixXd::Zero(q, q);  // sum_s n_s E[z_s z_s^T]
    for (const auto& g : groups) {
      MatrixXd prec = static_cast<double>(g.count) * core;
      prec.diagonal().array() += 1.0;
      Eigen::LLT<MatrixXd> llt(prec);
      const VectorXd z = llt.solve(w_inv_psi.transpose() * g.sum);
      MatrixXd ezz = llt.solve(MatrixXd::Identity(q, q));
      ezz.noalias() += z * z.transpose();
      cross.noalias() += g.sum * z.transpose();
      second.noalias() += static_cast<double>(g.count) * ezz;
    }
    model.psi = second.ldlt().solve(cross.transpose()).transpose();
    MatrixXd w = (scatter - model.psi * cross.transpose()) / static_cast<double>(n);
    model.residual_cov = 0.5 * (w + w.transpose());
  }
  return model;
}

double PldaLogLikelihood(const PldaModel& model, const MatrixXd& vectors,
                         std::span<const std::string> labels) {
  const MatrixXd centred = vectors.rowwise() - model.eta.transpose();
  return MarginalLogLikelihood(model.psi, model.residual_cov,
                               centred.transpose() * centred,
                               GroupBySpeaker(centred, labels), vectors.rows());
}

PldaScorer::PldaScorer(const PldaModel& model) : eta_(model.eta) {
  model.Validate();
  const Index p = model.dim();
  const MatrixXd between = model.psi * model.psi.transpose();
  const MatrixXd total = between + model.residual_cov;
  MatrixXd joint(2 * p, 2 * p);
  joint << total, between, between, total;
  Eigen::LLT<MatrixXd> joint_llt(joint);
  Eigen::LLT<MatrixXd> total_llt(total);
  if (joint_llt.info() != Eigen::Success || total_llt.info() != Eigen::Success)
    throw Error("PLDA scorer: covariance not positive definite");
  const MatrixXd joint_inv = joint_llt.solve(MatrixXd::Identity(2 * p, 2 * p));
  const MatrixXd total_inv = total_llt.solve(MatrixXd::Identity(p, p));
  diag_term_ = joint_inv.topLeftCorner(p, p) - total_inv;
  diag_term_ = 0.5 * (diag_term_ + diag_term_.transpose());
  cross_term_ = joint_inv.topRightCorner(p, p);
  cross_term_ = 0.5 * (cross_term_ + cross_term_.transpose());
  offset_ = -0.5 * (LogDet(joint_llt) - 2.0 * LogDet(total_llt));
}

double PldaScorer::Score(const VectorXd& enroll, const VectorXd& test) const {
  if (enroll.size() != dim() || test.size() != dim())
    throw ShapeError("PLDA scoring: vector dim does not match model");
  const VectorXd a = enroll - eta_;
  const VectorXd b = test - eta_;
  return -0.5 * a.dot(diag_term_ * a) - 0.5 * b.dot(diag_term_ * b) -
         a.dot(cross_term_ * b) + offset_;
}

double ScorePlda(const PldaModel& model, const VectorXd& enroll,
                 const VectorXd& test) {
  return PldaScorer(model).Score(enroll, test);
}

void WritePlda(const std::filesystem::path& path, const PldaModel& model) {
  model.Validate();
  io::Container c;
  c.magic = "QMSVPLD1";
  c.Set("dim", static_cast<long long>(model.dim()));
  c.Set("rank", static_cast<long long>(model.rank()));
  std::ostringstream ll;
  ll << model.train_loglik.size();
  for (double v : model.train_loglik) ll << ' ' << io::FormatDouble(v);
  c.Set("loglik", ll.str());
  c.Add("eta", model.eta);
  c.Add("psi", model.psi);
  c.Add("residual_cov", model.residual_cov);
  io::WriteContainer(path, c);
}

PldaModel ReadPlda(const std::filesystem::path& path) {
  const io::Container c = io::ReadContainer(path, "QMSVPLD1");
  PldaModel m;
  m.eta = c.Matrix("eta");
  m.psi = c.Matrix("psi");
  m.residual_cov = c.Matrix("residual_cov");
  const auto ll = io::SplitWhitespace(c.Get("loglik"));
  for (std::size_t i = 1; i < ll.size(); ++i)
    m.train_loglik.push_back(io::ParseDouble(ll[i]));
  m.Validate();
  return m;
}

}  // namespace qmsv
