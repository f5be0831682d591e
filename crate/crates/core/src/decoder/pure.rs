//! Pure-bucket peeling.

use std::collections::VecDeque;

use super::{DecodeError, Stage};
use crate::cmsketch::EquationSystem;
use crate::keyspace::Key;

/// Peels every bucket that holds exactly one live key. Returns the solved keys
/// (in solve order) and the residual system over the keys left.
///
/// Each row tracks a live-key count and the XOR of live column indices, so a
/// row with count one names its key directly.
pub fn pure_extract(
    sys: &EquationSystem,
) -> Result<(Vec<(Key, u64)>, EquationSystem), DecodeError> {
    let rows = sys.num_rows();
    let mut rhs = sys.rhs.clone();
    let mut count = vec![0u32; rows];
    let mut xor = vec![0usize; rows];
    for (j, cr) in sys.column_rows.iter().enumerate() {
        for &r in cr {
            count[r] += 1;
            xor[r] ^= j;
        }
    }

    let mut queue: VecDeque<usize> = (0..rows).filter(|&r| count[r] == 1).collect();
    let mut solved_col = vec![false; sys.num_cols()];
    let mut solved = Vec::new();
    while let Some(r) = queue.pop_front() {
        if count[r] != 1 {
            continue;
        }
        let j = xor[r];
        let c = sys.coefficients[j];
        if !rhs[r].is_multiple_of(c) {
            return Err(DecodeError::inconsistent(
                Stage::Pure,
                sys.row_buckets[r],
                format!("value {} not divisible by {c}", rhs[r]),
            ));
        }
        let f = rhs[r] / c;
        let contribution = f * c;
        for &r2 in &sys.column_rows[j] {
            rhs[r2] = rhs[r2].checked_sub(contribution).ok_or_else(|| {
                DecodeError::inconsistent(
                    Stage::Pure,
                    sys.row_buckets[r2],
                    format!("subtracting {contribution} from {} goes negative", rhs[r2]),
                )
            })?;
            count[r2] -= 1;
            xor[r2] ^= j;
            if count[r2] == 1 {
                queue.push_back(r2);
            }
        }
        solved_col[j] = true;
        solved.push((sys.columns[j], f));
    }

    if let Some(r) = (0..rows).find(|&r| count[r] == 0 && rhs[r] != 0) {
        return Err(DecodeError::inconsistent(
            Stage::Pure,
            sys.row_buckets[r],
            format!("value {} left with no candidate key", rhs[r]),
        ));
    }
    let keep: Vec<usize> = (0..sys.num_cols()).filter(|&j| !solved_col[j]).collect();
    Ok((solved, sys.restrict(&keep, &rhs)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::tests::system;

    #[test]
    fn chain_peels_completely() {
        let sys = system(&[(1, &[0, 1]), (1, &[1, 2])], &[5, 8, 3]);
        let (solved, residual) = pure_extract(&sys).unwrap();
        assert_eq!(solved, vec![(Key(0), 5), (Key(1), 3)]);
        assert_eq!(residual.num_cols(), 0);
        assert_eq!(residual.num_rows(), 0);
    }

    #[test]
    fn empty_system() {
        let sys = system(&[], &[]);
        let (solved, residual) = pure_extract(&sys).unwrap();
        assert!(solved.is_empty());
        assert!(residual.is_empty());
    }

    #[test]
    fn two_core_is_untouched() {
        let sys = system(&[(1, &[0, 1]), (1, &[0, 1])], &[7, 7]);
        let (solved, residual) = pure_extract(&sys).unwrap();
        assert!(solved.is_empty());
        assert_eq!(residual, sys);
    }

    #[test]
    fn prime_division() {
        let sys = system(&[(257, &[0, 1]), (263, &[1])], &[514, 514 + 263 * 4]);
        let (solved, _) = pure_extract(&sys).unwrap();
        assert_eq!(solved, vec![(Key(0), 2), (Key(1), 4)]);
    }

    #[test]
    fn inconsistencies_are_reported() {
        let bad_div = system(&[(257, &[0])], &[300]);
        assert!(matches!(
            pure_extract(&bad_div),
            Err(DecodeError::Inconsistent {
                stage: Stage::Pure,
                ..
            })
        ));
        let negative = system(&[(1, &[0, 1])], &[5, 3]);
        assert!(pure_extract(&negative).is_err());
        let orphan = system(&[(1, &[0])], &[5, 2]);
        assert!(pure_extract(&orphan).is_err());
    }
}
