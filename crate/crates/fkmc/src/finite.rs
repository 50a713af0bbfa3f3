//! Finite-state Feynman-Kac models: a non-negative matrix Q where row i holds
//! the masses Q(x_i, dy), so gamma_{n,x}(phi) = (Q^n phi)(x) is a matrix power.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::logspace::SignedLog;

#[derive(Debug, Clone)]
pub struct FiniteModel {
    q: Matrix,
    labels: Vec<String>,
    v_weights: Option<Vec<f64>>,
}

impl FiniteModel {
    /// Zero rows are accepted here: the resolvent is defined for any
    /// non-negative Q (even Q = 0). Operations that need positive row mass
    /// (particle potential, primitivity) reject them at the point of use.
    pub fn new(
        q_rows: &[Vec<f64>],
        labels: Vec<String>,
        v_weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let q = Matrix::from_rows(q_rows)?;
        Self::from_matrix(q, labels, v_weights)
    }

    pub fn from_matrix(
        q: Matrix,
        labels: Vec<String>,
        v_weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let d = q.dim();
        if labels.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for a {d}x{d} matrix",
                labels.len()
            )));
        }
        for i in 0..d {
            for j in 0..d {
                let v = q.get(i, j);
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "q[{i}][{j}] = {v} (entries must be finite and >= 0)"
                    )));
                }
            }
        }
        if let Some(v) = &v_weights {
            if v.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "{} v_weights for {d} states",
                    v.len()
                )));
            }
            if v.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(Error::InvalidArgument(
                    "v_weights must be finite and > 0".into(),
                ));
            }
        }
        Ok(FiniteModel { q, labels, v_weights })
    }

    /// Convenience constructor with labels "0", "1", ...
    pub fn from_rows_unlabeled(q_rows: &[Vec<f64>]) -> Result<Self> {
        let labels = (0..q_rows.len()).map(|i| i.to_string()).collect();
        Self::new(q_rows, labels, None)
    }

    pub fn dim(&self) -> usize {
        self.q.dim()
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn v_weights(&self) -> Option<&[f64]> {
        self.v_weights.as_deref()
    }

    pub fn with_v_weights(mut self, v: Vec<f64>) -> Result<Self> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch("v_weights length".into()));
        }
        self.v_weights = Some(v);
        Ok(self)
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Index of the first zero row, if any.
    pub fn zero_row(&self) -> Option<usize> {
        (0..self.dim()).find(|&i| self.q.row(i).iter().all(|&v| v == 0.0))
    }

    pub fn row_mass(&self, i: usize) -> f64 {
        self.q.row(i).iter().sum()
    }

    /// U(x_i) = log row mass. -inf on a zero row.
    pub fn log_potential(&self, i: usize) -> f64 {
        self.row_mass(i).ln()
    }

    /// Q(phi)(x_i) for every i.
    pub fn q_apply(&self, phi: &[f64]) -> Result<Vec<f64>> {
        if phi.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "phi length {} does not match {} states",
                phi.len(),
                self.dim()
            )));
        }
        Ok(self.q.mul_vec(phi))
    }

    /// (Q^n phi)(x_index) as a signed log value.
    ///
    /// Carried as a max-normalized linear vector plus a log-scale accumulator:
    /// after each matvec the vector is divided by its max absolute entry and
    /// the log of that max is accumulated. A stochastic matrix (rows summing
    /// to exactly 1.0) applied to the all-ones vector keeps max = 1.0, so
    /// ln(max) = 0.0 and the flat-potential value stays exactly 1.
    pub fn gamma_exact_finite(&self, x_index: usize, n: usize, phi: &[f64]) -> Result<SignedLog> {
        let seq = self.gamma_exact_prefix(x_index, n, phi)?;
        Ok(seq[n])
    }

    /// (Q^k phi)(x_index) for k = 0..=n_max, one matvec per step.
    pub fn gamma_exact_prefix(
        &self,
        x_index: usize,
        n_max: usize,
        phi: &[f64],
    ) -> Result<Vec<SignedLog>> {
        if x_index >= self.dim() {
            return Err(Error::InvalidArgument(format!(
                "state index {} out of range ({} states)",
                x_index,
                self.dim()
            )));
        }
        if phi.len() != self.dim() {
            return Err(Error::InvalidArgument("phi length mismatch".into()));
        }
        let mut out = Vec::with_capacity(n_max + 1);
        out.push(SignedLog::from_value(phi[x_index]));

        let mut w: Vec<f64> = phi.to_vec();
        let mut log_scale = 0.0f64;
        for _ in 1..=n_max {
            w = self.q.mul_vec(&w);
            let m = w.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
            if m == 0.0 {
                // Q annihilated phi; every later iterate is exactly zero
                while out.len() < n_max + 1 {
                    out.push(SignedLog::zero());
                }
                return Ok(out);
            }
            if m != 1.0 {
                for x in &mut w {
                    *x /= m;
                }
                log_scale += m.ln();
            }
            out.push(SignedLog::from_value(w[x_index]).scaled(log_scale));
        }
        Ok(out)
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# labels: {}", self.labels.join(","));
        for row in self.q.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut labels: Option<Vec<String>> = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(ls) = rest.strip_prefix("labels:") {
                    labels = Some(ls.split(',').map(|l| l.trim().to_string()).collect());
                }
                continue;
            }
            let row: Result<Vec<f64>> = line
                .split(',')
                .map(|c| {
                    c.trim().parse::<f64>().map_err(|e| {
                        Error::Parse(format!("line {}: bad number {:?}: {e}", lineno + 1, c.trim()))
                    })
                })
                .collect();
            rows.push(row?);
        }
        let labels = labels.ok_or_else(|| Error::Parse("missing '# labels:' header".into()))?;
        if rows.is_empty() {
            return Err(Error::Parse("no matrix rows".into()));
        }
        Self::new(&rows, labels, None)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_state() -> FiniteModel {
        FiniteModel::from_rows_unlabeled(&[vec![2.0, 1.0], vec![1.0, 1.0]]).unwrap()
    }

    #[test]
    fn q_apply_row_sums() {
        let m = two_state();
        assert_eq!(m.q_apply(&[1.0, 1.0]).unwrap(), vec![3.0, 2.0]);
    }

    #[test]
    fn q_apply_identity() {
        let m = FiniteModel::from_rows_unlabeled(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let phi = [0.25, -3.5];
        assert_eq!(m.q_apply(&phi).unwrap(), phi.to_vec());
    }

    #[test]
    fn q_apply_stochastic() {
        let m = FiniteModel::from_rows_unlabeled(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_eq!(m.q_apply(&[1.0, 0.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn q_apply_dimension_mismatch() {
        assert!(two_state().q_apply(&[1.0]).is_err());
    }

    #[test]
    fn gamma_n0_is_phi_at_x() {
        let m = two_state();
        let g = m.gamma_exact_finite(1, 0, &[7.0, 3.0]).unwrap();
        // one ln/exp roundtrip of the log carriage
        assert!((g.value() - 3.0).abs() <= 3.0 * 1e-15);
        assert_eq!(g.log_abs, 3.0f64.ln());
    }

    #[test]
    fn gamma_two_steps_matches_matrix_power() {
        let m = two_state();
        // independent oracle: Q^2 = [[5,3],[3,2]] by direct multiplication,
        // so (Q^2 1)(0) = 8
        let q2 = m.q().mat_mul(m.q());
        assert_eq!(q2.to_rows(), vec![vec![5.0, 3.0], vec![3.0, 2.0]]);
        let oracle: f64 = q2.row(0).iter().sum();
        assert_eq!(oracle, 8.0);
        let g = m.gamma_exact_finite(0, 2, &[1.0, 1.0]).unwrap();
        assert!((g.value() - 8.0).abs() < 8.0 * 1e-14);
    }

    #[test]
    fn gamma_flat_potential_exact_zero_log() {
        // dyadic rows sum to exactly 1.0 in f64
        let m = FiniteModel::from_rows_unlabeled(&[
            vec![0.5, 0.25, 0.25],
            vec![0.125, 0.375, 0.5],
            vec![0.0, 0.75, 0.25],
        ])
        .unwrap();
        for i in 0..3 {
            assert_eq!(m.row_mass(i), 1.0);
        }
        let phi = [1.0, 1.0, 1.0];
        for x in 0..3 {
            let seq = m.gamma_exact_prefix(x, 100, &phi).unwrap();
            for g in seq {
                assert_eq!(g.sign, 1);
                assert_eq!(g.log_abs, 0.0);
            }
        }
    }

    #[test]
    fn gamma_deep_horizon_no_overflow() {
        // row masses ~ e^2, n = 2000: linear value ~ e^4000 overflows f64
        let m = FiniteModel::from_rows_unlabeled(&[vec![4.0, 3.0], vec![2.0, 5.0]]).unwrap();
        let g = m.gamma_exact_finite(0, 2000, &[1.0, 1.0]).unwrap();
        assert!(g.log_abs.is_finite());
        assert!(g.log_abs > 2000.0);
    }

    #[test]
    fn gamma_semigroup() {
        let m = two_state();
        let phi = [1.0, -0.5];
        // Q^5 phi vs Q^2 applied to (Q^3 phi)
        let direct = m.gamma_exact_finite(0, 5, &phi).unwrap();
        let mut mid = phi.to_vec();
        for _ in 0..3 {
            mid = m.q_apply(&mid).unwrap();
        }
        let composed = m.gamma_exact_finite(0, 2, &mid).unwrap();
        let rel = (direct.value() - composed.value()).abs() / composed.value().abs();
        assert!(rel < 1e-10);
    }

    #[test]
    fn gamma_annihilated_phi_reports_exact_zero() {
        let m = FiniteModel::from_rows_unlabeled(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let g = m.gamma_exact_finite(0, 3, &[5.0, 0.0]).unwrap();
        assert_eq!(g.sign, 0);
        assert_eq!(g.log_abs, f64::NEG_INFINITY);
    }

    #[test]
    fn linearity_of_q_apply() {
        let m = two_state();
        let phi = [0.3, 1.7];
        let psi = [-2.0, 0.9];
        let (a, b) = (1.25, -0.4);
        let combo: Vec<f64> = phi.iter().zip(&psi).map(|(p, q)| a * p + b * q).collect();
        let lhs = m.q_apply(&combo).unwrap();
        let qp = m.q_apply(&phi).unwrap();
        let qq = m.q_apply(&psi).unwrap();
        for i in 0..2 {
            let rhs = a * qp[i] + b * qq[i];
            assert!((lhs[i] - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn csv_roundtrip_bitwise() {
        let m = FiniteModel::new(
            &[vec![0.6f64.exp() * 0.5, 1e-300], vec![std::f64::consts::PI, 0.0]],
            vec!["a".into(), "b".into()],
            None,
        )
        .unwrap();
        let text = m.to_csv_string();
        let back = FiniteModel::from_csv_str(&text).unwrap();
        assert_eq!(back.labels(), m.labels());
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(back.q().get(i, j).to_bits(), m.q().get(i, j).to_bits());
            }
        }
    }

    #[test]
    fn csv_missing_labels_rejected() {
        assert!(FiniteModel::from_csv_str("1.0,0.0\n0.0,1.0\n").is_err());
    }

    #[test]
    fn constructor_rejects_negative_and_nan() {
        assert!(FiniteModel::from_rows_unlabeled(&[vec![1.0, -0.1], vec![0.0, 1.0]]).is_err());
        assert!(FiniteModel::from_rows_unlabeled(&[vec![f64::NAN, 0.0], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn zero_row_allowed_and_reported() {
        let m = FiniteModel::from_rows_unlabeled(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(m.zero_row(), Some(0));
        assert_eq!(two_state().zero_row(), None);
    }

    // dyadic probability rows: k parts each a multiple of 1/64, summing to
    // exactly 1.0 in f64
    fn dyadic_row(d: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0u32..=6, d - 1).prop_map(move |cuts| {
            let mut parts = vec![0u32; d];
            let mut left = 64u32;
            for (i, c) in cuts.iter().enumerate() {
                let take = (left * c / 8).min(left);
                parts[i] = take;
                left -= take;
            }
            parts[d - 1] = left;
            parts.iter().map(|&p| p as f64 / 64.0).collect()
        })
    }

    fn dyadic_model() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (2usize..=4).prop_flat_map(|d| prop::collection::vec(dyadic_row(d), d))
    }

    proptest! {
        #[test]
        fn prop_flat_potential_exact(rows in dyadic_model()) {
            let dim = rows.len();
            for r in &rows {
                prop_assert_eq!(r.iter().sum::<f64>(), 1.0);
            }
            let m = FiniteModel::from_rows_unlabeled(&rows).unwrap();
            let phi = vec![1.0; dim];
            let g = m.gamma_exact_finite(0, 50, &phi).unwrap();
            prop_assert_eq!(g.log_abs, 0.0);
            prop_assert_eq!(g.sign, 1);
        }

        #[test]
        fn prop_gamma_matches_naive_power(
            entries in prop::collection::vec(0.0f64..2.0, 9),
            n in 0usize..6,
            x in 0usize..3,
        ) {
            let rows: Vec<Vec<f64>> = entries.chunks(3).map(|c| c.to_vec()).collect();
            let m = match FiniteModel::from_rows_unlabeled(&rows) {
                Ok(m) => m,
                Err(_) => return Ok(()),
            };
            let phi = vec![1.0, 1.0, 1.0];
            let mut naive = phi.clone();
            for _ in 0..n {
                naive = m.q().mul_vec(&naive);
            }
            let got = m.gamma_exact_finite(x, n, &phi).unwrap().value();
            let want = naive[x];
            prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1e-300));
        }
    }
}
