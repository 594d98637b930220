//! Seeded Gaussian measurement matrix and row-by-row table encoding.
//!
//! Row `i` of the matrix is generated independently of every other row, so a
//! sender can stream measurements and a receiver can regenerate exactly the
//! rows it has seen. The generator is fixed bit for bit:
//!
//! 1. A SplitMix64 stream is started at state
//!    `mix64(seed) ^ mix64(i + GOLDEN)` (wrapping add).
//! 2. Consecutive pairs `(u1, u2)` of uniforms on `(0, 1]`, each
//!    `((next_u64() >> 11) + 1) * 2^-53`, go through Box-Muller:
//!    `r = sqrt(-2 ln u1)`, emitting `r cos(2 pi u2)` then `r sin(2 pi u2)`.
//!    A trailing odd sample discards its sine half.
//!
//! `ln`, `cos` and `sin` come from the portable `libm` implementations so the
//! stream does not depend on the platform math library. Entries are standard
//! normal with no `1/sqrt(m)` scaling.

use thiserror::Error;

use crate::hash::{self, SplitMix64};
use crate::iblt::Iblt;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("row {index} is outside the row budget of {max_rows}")]
    RowBudgetExceeded { index: usize, max_rows: usize },
    #[error("matrix has {matrix} columns but table has {table} cells")]
    DimensionMismatch { matrix: usize, table: usize },
}

/// Identifies one measurement matrix shared by both hosts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatrixSpec {
    pub seed: u64,
    pub b: usize,
    pub max_rows: usize,
}

impl MatrixSpec {
    /// Square budget: `max_rows == b`.
    pub fn new(seed: u64, b: usize) -> Self {
        Self {
            seed,
            b,
            max_rows: b,
        }
    }

    pub fn matrix_row(&self, i: usize) -> Result<Vec<f64>, EncodeError> {
        self.check_row(i)?;
        let mut out = vec![0.0; self.b];
        fill_gaussian_row(self.seed, i as u64, &mut out);
        Ok(out)
    }

    fn check_row(&self, i: usize) -> Result<(), EncodeError> {
        if i >= self.max_rows {
            return Err(EncodeError::RowBudgetExceeded {
                index: i,
                max_rows: self.max_rows,
            });
        }
        Ok(())
    }
}

fn fill_gaussian_row(seed: u64, row: u64, out: &mut [f64]) {
    let mut rng = SplitMix64::new(hash::mix64(seed) ^ hash::mix64(row.wrapping_add(hash::GOLDEN)));
    let mut chunks = out.chunks_mut(2);
    for pair in &mut chunks {
        let u1 = rng.next_open01();
        let u2 = rng.next_open01();
        let r = (-2.0 * libm::log(u1)).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        pair[0] = r * libm::cos(theta);
        if let Some(second) = pair.get_mut(1) {
            *second = r * libm::sin(theta);
        }
    }
}

/// One streamed measurement: row `index` of `Phi` applied to both table columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementRow {
    pub index: usize,
    pub y_sum: f64,
    pub y_count: f64,
}

/// `Phi[i] . table` for both columns, given a pre-generated row.
pub fn encode_with_row(table: &Iblt, index: usize, phi_row: &[f64]) -> MeasurementRow {
    let mut y_sum = 0.0;
    let mut y_count = 0.0;
    for (phi, cell) in phi_row.iter().zip(table.cells()) {
        y_sum += phi * cell.sum as f64;
        y_count += phi * cell.count as f64;
    }
    MeasurementRow {
        index,
        y_sum,
        y_count,
    }
}

pub fn encode_row(table: &Iblt, spec: &MatrixSpec, i: usize) -> Result<MeasurementRow, EncodeError> {
    if spec.b != table.len() {
        return Err(EncodeError::DimensionMismatch {
            matrix: spec.b,
            table: table.len(),
        });
    }
    let row = spec.matrix_row(i)?;
    Ok(encode_with_row(table, i, &row))
}

pub fn encode_prefix(
    table: &Iblt,
    spec: &MatrixSpec,
    m: usize,
) -> Result<Vec<MeasurementRow>, EncodeError> {
    if m > spec.max_rows {
        return Err(EncodeError::RowBudgetExceeded {
            index: m.saturating_sub(1),
            max_rows: spec.max_rows,
        });
    }
    (0..m).map(|i| encode_row(table, spec, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iblt::{Element, IbltCell, TableParams};

    #[test]
    fn rows_are_deterministic_and_seeded() {
        let spec = MatrixSpec::new(17, 64);
        let host_a = spec.matrix_row(3).unwrap();
        let host_b = MatrixSpec::new(17, 64).matrix_row(3).unwrap();
        assert_eq!(
            host_a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            host_b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        let other = MatrixSpec::new(18, 64).matrix_row(3).unwrap();
        assert_ne!(host_a, other);
        assert_ne!(host_a, spec.matrix_row(4).unwrap());
    }

    #[test]
    fn odd_width_rows_match_even_prefix() {
        let odd = MatrixSpec::new(5, 7).matrix_row(0).unwrap();
        let even = MatrixSpec::new(5, 8).matrix_row(0).unwrap();
        assert_eq!(&odd[..], &even[..7]);
    }

    #[test]
    fn row_budget_enforced() {
        let spec = MatrixSpec::new(1, 10);
        assert_eq!(
            spec.matrix_row(10).unwrap_err(),
            EncodeError::RowBudgetExceeded {
                index: 10,
                max_rows: 10
            }
        );
        let t = Iblt::new(10, 2, 0).unwrap();
        assert!(encode_prefix(&t, &spec, 11).is_err());
        assert!(encode_prefix(&t, &spec, 0).unwrap().is_empty());
    }

    #[test]
    fn gaussian_moments() {
        let spec = MatrixSpec::new(2024, 1000);
        let xs: Vec<f64> = (0..100).flat_map(|i| spec.matrix_row(i).unwrap()).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((0.97..1.03).contains(&var), "var {var}");
    }

    #[test]
    fn zero_table_encodes_to_zero() {
        let t = Iblt::new(12, 3, 4).unwrap();
        let spec = MatrixSpec::new(9, 12);
        for r in encode_prefix(&t, &spec, 12).unwrap() {
            assert_eq!((r.y_sum, r.y_count), (0.0, 0.0));
        }
    }

    #[test]
    fn one_hot_table() {
        let p = TableParams::new(12, 2, 0).unwrap();
        let mut cells = vec![IbltCell::default(); 12];
        cells[5] = IbltCell { sum: 5, count: 1 };
        let t = Iblt::from_cells(p, cells).unwrap();
        let spec = MatrixSpec::new(31, 12);
        for i in 0..12 {
            let phi = spec.matrix_row(i).unwrap();
            let r = encode_row(&t, &spec, i).unwrap();
            assert_eq!(r.y_sum, 5.0 * phi[5]);
            assert_eq!(r.y_count, phi[5]);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let t = Iblt::new(12, 2, 0).unwrap();
        assert_eq!(
            encode_row(&t, &MatrixSpec::new(0, 13), 0).unwrap_err(),
            EncodeError::DimensionMismatch {
                matrix: 13,
                table: 12
            }
        );
    }

    #[test]
    fn prefix_matches_single_rows() {
        let p = TableParams::new(14, 2, 0).unwrap();
        let elems: Vec<Element> = (1..=7).map(|v| Element::new(v).unwrap()).collect();
        let t = Iblt::from_elements(p, &elems);
        let spec = MatrixSpec::new(77, 14);
        let prefix = encode_prefix(&t, &spec, 5).unwrap();
        assert_eq!(prefix[3], encode_row(&t, &spec, 3).unwrap());
    }
}
