//! Problem instances and structured operators.

mod coupling;
mod guo;
mod mmatrix;
mod ndre;
mod operator;
mod quadrature;
mod transport;

pub use coupling::CouplingMatrix;
pub use guo::build_guo_problem;
pub use mmatrix::{validate_m_matrix, MMatrixClass};
pub use ndre::{DenseNdre, NdreProblem, DENSE_GUARD};
pub use operator::{DenseOperator, DiagPlusRankOne, LinearOperator, Operator, SparseOperator, Transposed};
pub use quadrature::{gauss_legendre_01, QuadratureRule};
pub use transport::{
    build_transport_problem, transport_coefficients, transport_m_matrix, TransportCoefficients, TransportParams,
};
