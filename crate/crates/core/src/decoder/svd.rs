//! Least-norm solve through the SVD pseudo-inverse.

use nalgebra::{DMatrix, DVector};

use super::{DecodeError, DecoderConfig};
use crate::cmsketch::EquationSystem;

/// Largest residual dimension the dense solve accepts.
pub const MAX_DENSE_DIM: usize = 2000;

#[derive(Clone, Debug, PartialEq)]
pub enum SvdOutcome {
    /// Full column rank; the integer solution, one entry per column.
    Unique(Vec<u64>),
    /// Rank below the column count. `determined` lists `(column, value)` for
    /// columns fixed by the row space anyway (their unit vector lies in it).
    Multiple {
        rank: usize,
        determined: Vec<(usize, u64)>,
    },
}

/// Computes `x = V S^+ U^T y` with singular values under
/// `rank_tolerance * s_max` treated as zero.
///
/// At full rank the result is rounded and re-substituted in integers; if it
/// is not within `round_tolerance` of a non-negative integer vector that
/// solves the system exactly, this is a numerical failure rather than a
/// rank problem.
pub fn svd_solve(sys: &EquationSystem, cfg: &DecoderConfig) -> Result<SvdOutcome, DecodeError> {
    let (m, n) = (sys.num_rows(), sys.num_cols());
    if m > MAX_DENSE_DIM || n > MAX_DENSE_DIM {
        return Err(DecodeError::TooLarge {
            rows: m,
            cols: n,
            limit: MAX_DENSE_DIM,
        });
    }
    if n == 0 {
        return if sys.rhs.iter().all(|&v| v == 0) {
            Ok(SvdOutcome::Unique(Vec::new()))
        } else {
            Err(DecodeError::NumericalFailure(
                "nonzero right-hand side with no unknowns".into(),
            ))
        };
    }

    let phi = DMatrix::from_row_slice(m, n, &sys.dense());
    let y = DVector::from_iterator(m, sys.rhs.iter().map(|&v| v as f64));
    let svd = phi.svd(true, true);
    let u = svd.u.as_ref().expect("U requested");
    let v_t = svd.v_t.as_ref().expect("V^T requested");
    let s_max = svd.singular_values.max();
    let cutoff = cfg.rank_tolerance * s_max;

    let mut x = DVector::<f64>::zeros(n);
    let mut kept = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            let coef = u.column(i).dot(&y) / s;
            x += v_t.row(i).transpose() * coef;
            kept.push(i);
        }
    }
    let rank = kept.len();

    let near_int = |v: f64| {
        let r = v.round();
        ((v - r).abs() <= cfg.round_tolerance && r >= 0.0).then_some(r as u64)
    };

    if rank == n {
        let rounded: Option<Vec<u64>> = x.iter().map(|&v| near_int(v)).collect();
        return match rounded {
            Some(sol) if sys.is_solution(&sol) => Ok(SvdOutcome::Unique(sol)),
            Some(_) => Err(DecodeError::NumericalFailure(
                "rounded solution does not re-substitute exactly".into(),
            )),
            None => Err(DecodeError::NumericalFailure(
                "least-norm solution is not a non-negative integer vector".into(),
            )),
        };
    }

    // x_j is pinned by y exactly when e_j lies in the row space, i.e. the
    // j-th row of V restricted to the kept directions has unit norm.
    let determined = (0..n)
        .filter_map(|j| {
            let norm2: f64 = kept.iter().map(|&i| v_t[(i, j)] * v_t[(i, j)]).sum();
            if (1.0 - norm2).abs() <= 1e-6 {
                near_int(x[j]).map(|v| (j, v))
            } else {
                None
            }
        })
        .collect();
    Ok(SvdOutcome::Multiple { rank, determined })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::tests::system;

    fn cfg() -> DecoderConfig {
        DecoderConfig::default()
    }

    #[test]
    fn full_rank_two_by_two() {
        let sys = system(&[(1, &[0, 1]), (1, &[1])], &[4, 9]);
        assert_eq!(
            svd_solve(&sys, &cfg()).unwrap(),
            SvdOutcome::Unique(vec![4, 5])
        );
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let sys = system(&[(1, &[0, 1]), (1, &[1, 2]), (1, &[0, 2])], &[0, 0, 0]);
        assert_eq!(
            svd_solve(&sys, &cfg()).unwrap(),
            SvdOutcome::Unique(vec![0, 0, 0])
        );
    }

    #[test]
    fn identical_columns_are_rank_deficient() {
        let sys = system(&[(1, &[0, 1]), (1, &[0, 1])], &[7, 7]);
        match svd_solve(&sys, &cfg()).unwrap() {
            SvdOutcome::Multiple { rank, determined } => {
                assert_eq!(rank, 1);
                assert!(determined.is_empty());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn determined_columns_inside_a_deficient_system() {
        // Keys 0 and 1 are twins; key 2 has a private bucket.
        let sys = system(&[(1, &[0, 1]), (1, &[0, 1]), (1, &[1, 2])], &[7, 10, 3]);
        match svd_solve(&sys, &cfg()).unwrap() {
            SvdOutcome::Multiple { rank, determined } => {
                assert_eq!(rank, 2);
                assert_eq!(determined, vec![(2, 3)]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fractional_full_rank_is_a_numerical_failure() {
        // 2 x0 = 3.
        let sys = system(&[(2, &[0])], &[3]);
        assert!(matches!(
            svd_solve(&sys, &cfg()),
            Err(DecodeError::NumericalFailure(_))
        ));
    }

    #[test]
    fn overdetermined_prime_system() {
        let sys = system(
            &[(257, &[0, 1, 2]), (263, &[1, 2, 3])],
            &[514, 514 + 263 * 5, 514 + 1315, 1315],
        );
        assert_eq!(
            svd_solve(&sys, &cfg()).unwrap(),
            SvdOutcome::Unique(vec![2, 5])
        );
    }
}
