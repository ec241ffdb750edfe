#pragma once

// Symmetric block-tridiagonal matrices and their Cholesky machinery. The
// latent field couples adjacent years only, so the curvature matrix lives
// in this shape; factor/solve/log-determinant run in O(years * bs^3), and
// the selected inverse recursion recovers exactly the inverse blocks the
// marginal-likelihood gradient contracts against.

#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace stocklik {

struct BlockTridiag {
  int nb = 0;  // number of diagonal blocks
  int bs = 0;  // rows per block
  std::vector<Eigen::MatrixXd> diag;  // nb blocks, bs x bs
  std::vector<Eigen::MatrixXd> sub;   // nb-1 blocks; sub[y] sits at (y+1, y)

  BlockTridiag() = default;
  BlockTridiag(int nblocks, int bsize) : nb(nblocks), bs(bsize) {
    if (nb < 1 || bs < 1) throw std::invalid_argument("block matrix needs positive dimensions");
    diag.assign(static_cast<std::size_t>(nb), Eigen::MatrixXd::Zero(bs, bs));
    sub.assign(static_cast<std::size_t>(nb - 1), Eigen::MatrixXd::Zero(bs, bs));
  }

  int dim() const { return nb * bs; }

  void set_zero() {
    for (auto& m : diag) m.setZero();
    for (auto& m : sub) m.setZero();
  }

  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dim(), dim());
    for (int y = 0; y < nb; ++y) out.block(y * bs, y * bs, bs, bs) = diag[static_cast<std::size_t>(y)];
    for (int y = 0; y + 1 < nb; ++y) {
      out.block((y + 1) * bs, y * bs, bs, bs) = sub[static_cast<std::size_t>(y)];
      out.block(y * bs, (y + 1) * bs, bs, bs) = sub[static_cast<std::size_t>(y)].transpose();
    }
    return out;
  }
};

class BlockCholesky {
 public:
  // Factors H = L L^T; returns false (leaving the object unusable) when a
  // pivot block is not positive definite, so callers can add ridge and retry.
  // failed_block() then says which block broke.
  bool factor(const BlockTridiag& H) {
    nb_ = H.nb;
    bs_ = H.bs;
    failed_ = -1;
    L_.assign(static_cast<std::size_t>(nb_), Eigen::MatrixXd());
    Lsub_.assign(static_cast<std::size_t>(nb_ > 0 ? nb_ - 1 : 0), Eigen::MatrixXd());
    Eigen::MatrixXd D;
    for (int y = 0; y < nb_; ++y) {
      D = H.diag[static_cast<std::size_t>(y)];
      if (y > 0) D.noalias() -= Lsub_[static_cast<std::size_t>(y - 1)] * Lsub_[static_cast<std::size_t>(y - 1)].transpose();
      if (!D.allFinite()) {
        failed_ = y;
        return false;
      }
      Eigen::LLT<Eigen::MatrixXd> llt(D);
      if (llt.info() != Eigen::Success) {
        failed_ = y;
        return false;
      }
      L_[static_cast<std::size_t>(y)] = llt.matrixL();
      if (y + 1 < nb_)
        Lsub_[static_cast<std::size_t>(y)] =
            L_[static_cast<std::size_t>(y)]
                .triangularView<Eigen::Lower>()
                .solve(H.sub[static_cast<std::size_t>(y)].transpose())
                .transpose();
    }
    return true;
  }

  double log_det() const {
    double out = 0.0;
    for (const auto& L : L_) out += 2.0 * L.diagonal().array().log().sum();
    return out;
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    if (rhs.size() != nb_ * bs_) throw std::invalid_argument("solve: right-hand side size mismatch");
    Eigen::VectorXd x = rhs;
    for (int y = 0; y < nb_; ++y) {
      auto seg = x.segment(y * bs_, bs_);
      if (y > 0) seg.noalias() -= Lsub_[static_cast<std::size_t>(y - 1)] * x.segment((y - 1) * bs_, bs_);
      seg = L_[static_cast<std::size_t>(y)].triangularView<Eigen::Lower>().solve(seg.eval());
    }
    for (int y = nb_ - 1; y >= 0; --y) {
      auto seg = x.segment(y * bs_, bs_);
      if (y + 1 < nb_)
        seg.noalias() -= Lsub_[static_cast<std::size_t>(y)].transpose() * x.segment((y + 1) * bs_, bs_);
      seg = L_[static_cast<std::size_t>(y)].transpose().triangularView<Eigen::Upper>().solve(seg.eval());
    }
    return x;
  }

  // Diagonal and first subdiagonal blocks of the full inverse, backward
  // from the last year. These are the only inverse entries that multiply
  // nonzero derivative entries, since every term couples at most two
  // adjacent years.
  BlockTridiag selected_inverse() const {
    BlockTridiag S(nb_, bs_);
    Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(bs_, bs_);
    auto inv_gram = [&](const Eigen::MatrixXd& L) {
      Eigen::MatrixXd P = L.triangularView<Eigen::Lower>().solve(eye);
      return Eigen::MatrixXd(P.transpose() * P);  // L^{-T} L^{-1}
    };
    S.diag[static_cast<std::size_t>(nb_ - 1)] = inv_gram(L_[static_cast<std::size_t>(nb_ - 1)]);
    for (int y = nb_ - 2; y >= 0; --y) {
      const Eigen::MatrixXd C =
          Lsub_[static_cast<std::size_t>(y)] *
          L_[static_cast<std::size_t>(y)].triangularView<Eigen::Lower>().solve(eye);
      S.sub[static_cast<std::size_t>(y)] = -S.diag[static_cast<std::size_t>(y + 1)] * C;
      S.diag[static_cast<std::size_t>(y)] =
          inv_gram(L_[static_cast<std::size_t>(y)]) +
          C.transpose() * S.diag[static_cast<std::size_t>(y + 1)] * C;
    }
    return S;
  }

  // Index of the block where the last factor() broke, -1 after a clean one.
  int failed_block() const { return failed_; }

 private:
  int nb_ = 0, bs_ = 0;
  int failed_ = -1;
  std::vector<Eigen::MatrixXd> L_;
  std::vector<Eigen::MatrixXd> Lsub_;
};

}  // namespace stocklik
