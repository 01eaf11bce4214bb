//! Riccati equations from neutron transport theory: `A = Delta - e q^T`,
//! `D = Gamma - q e^T`, `S = q q^T`, `F = G = e`.

use super::coupling::CouplingMatrix;
use super::ndre::NdreProblem;
use super::operator::{DiagPlusRankOne, Operator};
use super::quadrature::gauss_legendre_01;
use crate::error::{NdreError, Result};
use crate::lowrank::LowRankFactorPair;
use crate::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TransportParams {
    pub n: usize,
    pub c: f64,
    pub alpha: f64,
}

impl TransportParams {
    pub fn new(n: usize, c: f64, alpha: f64) -> Result<Self> {
        let p = TransportParams { n, c, alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(NdreError::InvalidParameter("transport size n must be positive".into()));
        }
        if !(self.c > 0.0 && self.c <= 1.0) {
            return Err(NdreError::InvalidParameter(format!("c = {} outside (0, 1]", self.c)));
        }
        if !(self.alpha >= 0.0 && self.alpha < 1.0) {
            return Err(NdreError::InvalidParameter(format!(
                "alpha = {} outside [0, 1)",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Quadrature data and derived vectors of a transport instance.
#[derive(Debug, Clone)]
pub struct TransportCoefficients {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub delta: Vector,
    pub gamma: Vector,
    pub q: Vector,
}

pub fn transport_coefficients(params: &TransportParams) -> Result<TransportCoefficients> {
    params.validate()?;
    let rule = gauss_legendre_01(params.n)?;
    let (c, a) = (params.c, params.alpha);
    let delta = Vector::from_iterator(params.n, rule.nodes.iter().map(|&w| 1.0 / (c * w * (1.0 + a))));
    let gamma = Vector::from_iterator(params.n, rule.nodes.iter().map(|&w| 1.0 / (c * w * (1.0 - a))));
    let q = Vector::from_iterator(
        params.n,
        rule.nodes.iter().zip(&rule.weights).map(|(&w, &ci)| ci / (2.0 * w)),
    );
    Ok(TransportCoefficients {
        nodes: rule.nodes,
        weights: rule.weights,
        delta,
        gamma,
        q,
    })
}

pub fn build_transport_problem(params: &TransportParams) -> Result<NdreProblem> {
    let co = transport_coefficients(params)?;
    let n = params.n;
    let e = Vector::from_element(n, 1.0);
    let a = DiagPlusRankOne::new(co.delta.clone(), e.clone(), co.q.clone())?;
    let d = DiagPlusRankOne::new(co.gamma.clone(), co.q.clone(), e.clone())?;
    let qm = Matrix::from_column_slice(n, 1, co.q.as_slice());
    let s = CouplingMatrix::factored(qm.clone(), qm)?;
    let em = Matrix::from_element(n, 1, 1.0);
    let prob = NdreProblem::new(
        Operator::DiagPlusRankOne(a),
        Operator::DiagPlusRankOne(d),
        s,
        em.clone(),
        em,
        LowRankFactorPair::zeros(n, n),
    )?;
    Ok(prob.with_label(format!(
        "transport(n={}, c={}, alpha={})",
        params.n, params.c, params.alpha
    )))
}

/// Dense `[[D, -S], [-Q, A]]` (2n x 2n) associated with the instance.
pub fn transport_m_matrix(params: &TransportParams) -> Result<Matrix> {
    let p = build_transport_problem(params)?;
    let dense = p.to_dense(usize::MAX)?;
    let n = params.n;
    let mut m = Matrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&dense.d);
    m.view_mut((0, n), (n, n)).copy_from(&(-&dense.s));
    m.view_mut((n, 0), (n, n)).copy_from(&(-&dense.q));
    m.view_mut((n, n), (n, n)).copy_from(&dense.a);
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::LinearOperator;

    #[test]
    fn single_node_values() {
        let co = transport_coefficients(&TransportParams::new(1, 0.5, 0.5).unwrap()).unwrap();
        assert!((co.delta[0] - 8.0 / 3.0).abs() < 1e-14);
        assert!((co.gamma[0] - 8.0).abs() < 1e-14);
        assert!((co.q[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn symmetric_case_has_equal_operators() {
        let params = TransportParams::new(2, 1.0, 0.0).unwrap();
        let co = transport_coefficients(&params).unwrap();
        for i in 0..2 {
            assert!((co.delta[i] - 1.0 / co.nodes[i]).abs() < 1e-14);
            assert_eq!(co.delta[i], co.gamma[i]);
        }
        let p = build_transport_problem(&TransportParams::new(6, 1.0, 0.0).unwrap()).unwrap();
        assert_eq!(p.a.to_dense(), p.d.to_dense().transpose());
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(TransportParams::new(4, 0.0, 0.5).is_err());
        assert!(TransportParams::new(4, 1.1, 0.5).is_err());
        assert!(TransportParams::new(4, 0.5, 1.0).is_err());
        assert!(TransportParams::new(0, 0.5, 0.5).is_err());
    }

    #[test]
    fn structure_of_blocks() {
        let params = TransportParams::new(5, 0.5, 0.5).unwrap();
        let co = transport_coefficients(&params).unwrap();
        let p = build_transport_problem(&params).unwrap();
        let a = p.a.to_dense();
        let d = p.d.to_dense();
        for i in 0..5 {
            for j in 0..5 {
                let dij = if i == j { 1.0 } else { 0.0 };
                assert!((a[(i, j)] - (dij * co.delta[i] - co.q[j])).abs() < 1e-14);
                assert!((d[(i, j)] - (dij * co.gamma[i] - co.q[i])).abs() < 1e-14);
            }
        }
        assert!(co.q.iter().all(|&x| x > 0.0));
    }
}
