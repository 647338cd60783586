#pragma once

#include <cstdint>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace sbglm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using IVec = Eigen::VectorXi;

/// Column-major sparse matrix. Symmetric matrices (C, G, Q, posterior
/// precisions) are always stored with both triangles present.
using SpMat = Eigen::SparseMatrix<double>;
using SparseSym = SpMat;
using Triplet = Eigen::Triplet<double>;

using Seed = std::uint64_t;

}  // namespace sbglm
