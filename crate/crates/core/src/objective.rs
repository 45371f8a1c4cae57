//! The constrained embedding objective.
//!
//! Two unit-normalized views are pulled together by a squared-difference
//! invariance term while an orthogonality constraint on each view keeps
//! the embedding from collapsing to a point or subspace. The constraint
//! comes in two flavors: `row` penalizes `||z zᵀ - I_B||_F` (a B×B Gram
//! buffer), `column` penalizes `||zᵀ z - I_F||_F`, whose F×F buffer is
//! independent of the batch size.

use crate::tape::{Tape, TapeError, TensorId};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintMode {
    Row,
    Column,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvarianceReduction {
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Constraint weight; zero leaves the invariance term alone.
    pub gamma: f64,
    pub constraint_mode: ConstraintMode,
    pub invariance_reduction: InvarianceReduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 1.0,
            constraint_mode: ConstraintMode::Row,
            invariance_reduction: InvarianceReduction::Mean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.gamma < 0.0 || !self.gamma.is_finite() {
            return Err(format!("gamma must be a nonnegative real, got {}", self.gamma));
        }
        Ok(())
    }
}

/// A tensor whose rows have been L2-normalized on the tape.
#[derive(Debug, Clone, Copy)]
pub struct UnitRows(pub TensorId);

/// Normalize each row to unit length (zero rows stay zero).
pub fn unit_rows<T: Scalar>(tape: &mut Tape<'_, T>, z: TensorId) -> UnitRows {
    UnitRows(tape.row_l2_normalize(z))
}

/// Agreement term between the two views: mean squared difference, or the
/// plain Frobenius-squared sum under `Sum` reduction.
pub fn invariance_term<T: Scalar>(
    tape: &mut Tape<'_, T>,
    z1: UnitRows,
    z2: UnitRows,
    reduction: InvarianceReduction,
) -> Result<TensorId, TapeError> {
    let mse = tape.mse_mean(z1.0, z2.0)?;
    Ok(match reduction {
        InvarianceReduction::Mean => mse,
        InvarianceReduction::Sum => {
            let (rows, cols) = tape.value(z1.0).shape();
            tape.scale(mse, T::from_f64((rows * cols) as f64))
        }
    })
}

/// Orthogonality penalty of one view: the unsquared Frobenius norm of the
/// Gram matrix minus identity.
pub fn constraint_term<T: Scalar>(
    tape: &mut Tape<'_, T>,
    z: UnitRows,
    mode: ConstraintMode,
) -> Result<TensorId, TapeError> {
    let gram = match mode {
        ConstraintMode::Row => tape.gram_rows(z.0),
        ConstraintMode::Column => tape.gram_cols(z.0),
    };
    let centered = tape.sub_identity(gram)?;
    Ok(tape.frob_norm(centered))
}

/// Handles to the scalar loss terms of one step.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: TensorId,
    pub invariance: TensorId,
    pub constraint1: TensorId,
    pub constraint2: TensorId,
}

/// Assemble `invariance + gamma * (constraint(z1) + constraint(z2))`.
/// The constraint terms are recorded even when `gamma` is zero so training
/// history stays comparable across runs, but they are kept off the loss
/// path in that case.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<'_, T>,
    z1: UnitRows,
    z2: UnitRows,
    cfg: &LossConfig,
) -> Result<LossNodes, TapeError> {
    let invariance = invariance_term(tape, z1, z2, cfg.invariance_reduction)?;
    let constraint1 = constraint_term(tape, z1, cfg.constraint_mode)?;
    let constraint2 = constraint_term(tape, z2, cfg.constraint_mode)?;
    let total = if cfg.gamma == 0.0 {
        invariance
    } else {
        let both = tape.add(constraint1, constraint2)?;
        let weighted = tape.scale(both, T::from_f64(cfg.gamma));
        tape.add(invariance, weighted)?
    };
    Ok(LossNodes {
        total,
        invariance,
        constraint1,
        constraint2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::Mat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_unit_rows(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
        let mut r = rng(seed);
        let mut m = Mat::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| r.random::<f64>() * 2.0 - 1.0).collect(),
        );
        for i in 0..rows {
            let norm: f64 = m.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in m.row_mut(i) {
                *v /= norm;
            }
        }
        m
    }

    fn unit(tape: &mut Tape<'_, f64>, m: Mat<f64>) -> UnitRows {
        let id = tape.leaf(m, false);
        unit_rows(tape, id)
    }

    #[test]
    fn unit_rows_three_four_five() {
        let mut t = Tape::<f64>::new();
        let z = unit(&mut t, Mat::from_vec(1, 2, vec![3.0, 4.0]));
        assert_eq!(t.value(z.0).data(), &[0.6, 0.8]);
    }

    #[test]
    fn unit_rows_norms_near_one() {
        let mut t = Tape::<f64>::new();
        let mut r = rng(5);
        let m = Mat::from_vec(8, 5, (0..40).map(|_| r.random::<f64>() - 0.5).collect());
        let z = unit(&mut t, m);
        for i in 0..8 {
            let n: f64 = t.value(z.0).row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn invariance_zero_for_identical_views() {
        let m = rand_unit_rows(4, 3, 2);
        let mut t = Tape::<f64>::new();
        let z1 = unit(&mut t, m.clone());
        let z2 = unit(&mut t, m);
        let inv = invariance_term(&mut t, z1, z2, InvarianceReduction::Mean).unwrap();
        assert_eq!(t.scalar(inv), 0.0);
    }

    #[test]
    fn invariance_antipodal_mean_value() {
        let m = rand_unit_rows(6, 4, 3);
        let neg = m.scale(-1.0);
        let mut t = Tape::<f64>::new();
        let z1 = unit(&mut t, m);
        let z2 = unit(&mut t, neg);
        let inv = invariance_term(&mut t, z1, z2, InvarianceReduction::Mean).unwrap();
        // Every row contributes ||2 z||^2 = 4, so the mean over B*F entries
        // is 4B / (B*F) = 4/F.
        assert!((t.scalar(inv) - 4.0 / 4.0).abs() < 1e-9);
    }

    #[test]
    fn invariance_sum_matches_cosine_oracle() {
        let a = rand_unit_rows(7, 5, 11);
        let b = rand_unit_rows(7, 5, 12);
        let mut expected = 0.0;
        for i in 0..7 {
            let cos: f64 = a.row(i).iter().zip(b.row(i)).map(|(x, y)| x * y).sum();
            expected += 2.0 - 2.0 * cos;
        }
        let mut t = Tape::<f64>::new();
        let z1 = unit(&mut t, a);
        let z2 = unit(&mut t, b);
        let inv = invariance_term(&mut t, z1, z2, InvarianceReduction::Sum).unwrap();
        let got = t.scalar(inv);
        assert!((got - expected).abs() / expected.abs().max(1.0) < 1e-6);
    }

    #[test]
    fn constraint_zero_for_orthonormal_rows() {
        let mut t = Tape::<f64>::new();
        let z = unit(&mut t, Mat::identity(4));
        let c = constraint_term(&mut t, z, ConstraintMode::Row).unwrap();
        assert_eq!(t.scalar(c), 0.0);
    }

    #[test]
    fn constraint_collapse_value_is_closed_form() {
        for b in [2usize, 5, 10] {
            // B copies of the same basis row: the Gram matrix is exactly
            // all-ones, so the value is sqrt(B^2 - B).
            let mut m = Mat::<f64>::zeros(b, 4);
            for i in 0..b {
                m.set(i, 0, 1.0);
            }
            let mut t = Tape::<f64>::new();
            let z = unit(&mut t, m);
            let c = constraint_term(&mut t, z, ConstraintMode::Row).unwrap();
            let expected = ((b * b - b) as f64).sqrt();
            assert_eq!(t.scalar(c), expected);
        }
    }

    #[test]
    fn constraint_matches_dense_gram_oracle() {
        let m = rand_unit_rows(6, 4, 21);
        let gram_rows = m.matmul_nt(&m);
        let gram_cols = m.matmul_tn(&m);
        let oracle = |g: &Mat<f64>| {
            let n = g.rows();
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let v = g.get(i, j) - if i == j { 1.0 } else { 0.0 };
                    s += v * v;
                }
            }
            s.sqrt()
        };
        let mut t = Tape::<f64>::new();
        let z = unit(&mut t, m);
        let row = constraint_term(&mut t, z, ConstraintMode::Row).unwrap();
        let col = constraint_term(&mut t, z, ConstraintMode::Column).unwrap();
        let (rv, cv) = (t.scalar(row), t.scalar(col));
        assert!((rv - oracle(&gram_rows)).abs() / rv.max(1.0) < 1e-6);
        assert!((cv - oracle(&gram_cols)).abs() / cv.max(1.0) < 1e-6);
    }

    #[test]
    fn row_constraint_equals_pairwise_cosine_oracle() {
        // For unit rows the Gram diagonal is 1, so the row-mode value is
        // sqrt of the sum of squared off-diagonal cosines.
        for b in [3usize, 8, 20] {
            let m = rand_unit_rows(b, 6, 100 + b as u64);
            let mut sum = 0.0;
            for i in 0..b {
                for j in 0..b {
                    if i != j {
                        let cos: f64 =
                            m.row(i).iter().zip(m.row(j)).map(|(x, y)| x * y).sum();
                        sum += cos * cos;
                    }
                }
            }
            let mut t = Tape::<f64>::new();
            let z = unit(&mut t, m);
            let c = constraint_term(&mut t, z, ConstraintMode::Row).unwrap();
            let got = t.scalar(c);
            let expected = sum.sqrt();
            assert!((got - expected).abs() / expected.max(1.0) < 1e-9);
        }
    }

    #[test]
    fn total_loss_gamma_zero_is_invariance() {
        let a = rand_unit_rows(5, 3, 31);
        let b = rand_unit_rows(5, 3, 32);
        let cfg = LossConfig {
            gamma: 0.0,
            ..LossConfig::default()
        };
        let mut t = Tape::<f64>::new();
        let z1 = unit(&mut t, a);
        let z2 = unit(&mut t, b);
        let nodes = total_loss(&mut t, z1, z2, &cfg).unwrap();
        assert_eq!(t.scalar(nodes.total), t.scalar(nodes.invariance));
    }

    #[test]
    fn total_loss_zero_at_feasible_optimum() {
        let m = Mat::<f64>::identity(4);
        let cfg = LossConfig::default();
        let mut t = Tape::<f64>::new();
        let z1 = unit(&mut t, m.clone());
        let z2 = unit(&mut t, m);
        let nodes = total_loss(&mut t, z1, z2, &cfg).unwrap();
        assert_eq!(t.scalar(nodes.total), 0.0);
    }

    #[test]
    fn total_loss_composes_component_oracles() {
        let a = rand_unit_rows(6, 4, 41);
        let b = rand_unit_rows(6, 4, 42);
        let cfg = LossConfig {
            gamma: 0.7,
            constraint_mode: ConstraintMode::Column,
            invariance_reduction: InvarianceReduction::Mean,
        };
        let mut t = Tape::<f64>::new();
        let z1 = unit(&mut t, a.clone());
        let z2 = unit(&mut t, b.clone());
        let nodes = total_loss(&mut t, z1, z2, &cfg).unwrap();

        let mut t2 = Tape::<f64>::new();
        let y1 = unit(&mut t2, a);
        let y2 = unit(&mut t2, b);
        let inv = invariance_term(&mut t2, y1, y2, cfg.invariance_reduction).unwrap();
        let c1 = constraint_term(&mut t2, y1, cfg.constraint_mode).unwrap();
        let c2 = constraint_term(&mut t2, y2, cfg.constraint_mode).unwrap();
        let expected = t2.scalar(inv) + cfg.gamma * (t2.scalar(c1) + t2.scalar(c2));
        let got = t.scalar(nodes.total);
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn terms_are_row_permutation_invariant() {
        let a = rand_unit_rows(7, 4, 51);
        let b = rand_unit_rows(7, 4, 52);
        let perm: Vec<usize> = vec![3, 0, 6, 2, 5, 1, 4];
        let pa = a.gather_rows(&perm);
        let pb = b.gather_rows(&perm);
        let cfg = LossConfig::default();

        let eval = |x: Mat<f64>, y: Mat<f64>| {
            let mut t = Tape::<f64>::new();
            let z1 = unit(&mut t, x);
            let z2 = unit(&mut t, y);
            let nodes = total_loss(&mut t, z1, z2, &cfg).unwrap();
            (
                t.scalar(nodes.invariance),
                t.scalar(nodes.constraint1),
                t.scalar(nodes.constraint2),
            )
        };
        let (i1, c1, c2) = eval(a, b);
        let (i1p, c1p, c2p) = eval(pa, pb);
        assert!((i1 - i1p).abs() < 1e-12);
        assert!((c1 - c1p).abs() < 1e-12);
        assert!((c2 - c2p).abs() < 1e-12);
    }

    #[test]
    fn column_mode_gram_buffer_is_width_squared() {
        // The constraint buffer must scale with the embedding width, not
        // the batch, in column mode.
        for b in [16usize, 64, 256] {
            let m = rand_unit_rows(b, 4, 60);
            let mut t = Tape::<f64>::new();
            let z = unit(&mut t, m);
            let _ = constraint_term(&mut t, z, ConstraintMode::Column).unwrap();
            assert_eq!(t.stats().constraint_peak_bytes, 4 * 4 * 8);
        }
        for b in [16usize, 32] {
            let m = rand_unit_rows(b, 4, 61);
            let mut t = Tape::<f64>::new();
            let z = unit(&mut t, m);
            let _ = constraint_term(&mut t, z, ConstraintMode::Row).unwrap();
            assert_eq!(t.stats().constraint_peak_bytes, b * b * 8);
        }
    }

    #[test]
    fn rejects_negative_gamma() {
        let cfg = LossConfig {
            gamma: -1.0,
            ..LossConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
