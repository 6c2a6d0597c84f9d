//! Per-regime matrix families.
//!
//! Every coefficient of the model — and every solver output — is one matrix
//! per regime of the modulating Markov chain. [`RegimeFamily`] is an ordered,
//! shape-checked list of such matrices with the small amount of shared algebra
//! the solvers need (symmetry measures, eigenvalue bounds, norms).

use nalgebra::DMatrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Ordered list of same-shape matrices, one per regime.
///
/// Invariants (enforced on construction): at least one entry, all entries
/// share one shape, all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeFamily {
    entries: Vec<DMatrix<f64>>,
}

impl RegimeFamily {
    /// Build from explicit entries, checking the invariants.
    pub fn new(entries: Vec<DMatrix<f64>>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Shape("regime family must be nonempty".into()));
        }
        let (rows, cols) = (entries[0].nrows(), entries[0].ncols());
        if rows == 0 || cols == 0 {
            return Err(Error::Shape("regime family entries must be nonempty matrices".into()));
        }
        for (i, m) in entries.iter().enumerate() {
            if m.nrows() != rows || m.ncols() != cols {
                return Err(Error::Shape(format!(
                    "regime {i} has shape {}x{}, expected {rows}x{cols}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("regime family entry {i}")));
            }
        }
        Ok(Self { entries })
    }

    /// Build by evaluating `f` at each regime index.
    pub fn from_fn(regimes: usize, f: impl FnMut(usize) -> DMatrix<f64>) -> Result<Self> {
        Self::new((0..regimes).map(f).collect())
    }

    /// Family of `regimes` zero matrices.
    pub fn zeros(regimes: usize, rows: usize, cols: usize) -> Self {
        Self {
            entries: (0..regimes).map(|_| DMatrix::zeros(rows, cols)).collect(),
        }
    }

    /// Number of regimes.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Shape shared by every entry.
    pub fn shape(&self) -> (usize, usize) {
        (self.entries[0].nrows(), self.entries[0].ncols())
    }

    pub fn iter(&self) -> std::slice::Iter<'_, DMatrix<f64>> {
        self.entries.iter()
    }

    pub fn entries(&self) -> &[DMatrix<f64>] {
        &self.entries
    }

    /// Apply an entrywise-shape-preserving map regime by regime.
    pub fn map(&self, mut f: impl FnMut(usize, &DMatrix<f64>) -> DMatrix<f64>) -> Result<Self> {
        Self::new(
            self.entries
                .iter()
                .enumerate()
                .map(|(i, m)| f(i, m))
                .collect(),
        )
    }

    /// Largest absolute asymmetry `max_i max_jk |M_i - M_i^T|_jk` over the family.
    pub fn max_asymmetry(&self) -> f64 {
        self.entries
            .iter()
            .map(|m| {
                let d = m - m.transpose();
                d.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
            })
            .fold(0.0, f64::max)
    }

    /// Replace each entry by its symmetric part.
    pub fn symmetrized(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|m| (m + m.transpose()) * 0.5)
                .collect(),
        }
    }

    /// Smallest eigenvalue over the family (entries symmetrized first).
    pub fn min_eigenvalue(&self) -> f64 {
        self.entries
            .iter()
            .map(min_symmetric_eigenvalue)
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest Frobenius norm over the family.
    pub fn max_frobenius(&self) -> f64 {
        self.entries.iter().map(|m| m.norm()).fold(0.0, f64::max)
    }

    /// Largest Frobenius norm of the per-regime differences.
    pub fn max_frobenius_diff(&self, other: &Self) -> f64 {
        self.entries
            .iter()
            .zip(other.entries.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for RegimeFamily {
    type Output = DMatrix<f64>;
    fn index(&self, i: usize) -> &DMatrix<f64> {
        &self.entries[i]
    }
}

impl<'a> IntoIterator for &'a RegimeFamily {
    type Item = &'a DMatrix<f64>;
    type IntoIter = std::slice::Iter<'a, DMatrix<f64>>;
    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub(crate) fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |acc, &v| acc.min(v))
}

/// Largest eigenvalue of the symmetric part of `m`.
pub(crate) fn max_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .fold(f64::NEG_INFINITY, |acc, &v| acc.max(v))
}

// ---- JSON representation: a list of matrices, each a list of rows ----

/// Matrix as nested rows, the on-disk form.
pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

/// Parse a matrix from nested rows, requiring a consistent rectangular shape.
pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::Shape(format!("{what}: matrix has no rows")));
    }
    let cols = rows[0].len();
    if cols == 0 {
        return Err(Error::Shape(format!("{what}: matrix has empty rows")));
    }
    for (r, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::Shape(format!(
                "{what}: row {r} has {} entries, expected {cols}",
                row.len()
            )));
        }
    }
    let m = DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(m)
}

impl Serialize for RegimeFamily {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<Vec<f64>>> = self.entries.iter().map(matrix_to_rows).collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RegimeFamily {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw: Vec<Vec<Vec<f64>>> = Vec::deserialize(deserializer)?;
        let entries = raw
            .iter()
            .enumerate()
            .map(|(i, rows)| matrix_from_rows(rows, &format!("regime {i}")))
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        RegimeFamily::new(entries).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn rejects_empty_family() {
        assert!(RegimeFamily::new(vec![]).is_err());
    }

    #[test]
    fn rejects_mixed_shapes() {
        let err = RegimeFamily::new(vec![DMatrix::zeros(2, 2), DMatrix::zeros(2, 3)]);
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn rejects_non_finite_entries() {
        let err = RegimeFamily::new(vec![dmatrix![1.0, f64::NAN; 0.0, 1.0]]);
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn asymmetry_and_symmetrize() {
        let fam = RegimeFamily::new(vec![dmatrix![1.0, 2.0; 2.0 + 1e-9, 3.0]]).unwrap();
        assert!((fam.max_asymmetry() - 1e-9).abs() < 1e-15);
        assert!(fam.symmetrized().max_asymmetry() == 0.0);
    }

    #[test]
    fn min_eigenvalue_over_family() {
        let fam = RegimeFamily::new(vec![
            dmatrix![2.0, 0.0; 0.0, 5.0],
            dmatrix![3.0, 1.0; 1.0, 3.0],
        ])
        .unwrap();
        assert!((fam.min_eigenvalue() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_preserves_entries() {
        let fam = RegimeFamily::new(vec![
            dmatrix![0.1, -2.5; 3.25, 0.7],
            dmatrix![1.0 / 3.0, 0.0; 0.0, -7.0],
        ])
        .unwrap();
        let text = serde_json::to_string(&fam).unwrap();
        let back: RegimeFamily = serde_json::from_str(&text).unwrap();
        assert_eq!(fam, back);
    }

    #[test]
    fn json_rejects_ragged_rows() {
        let r: std::result::Result<RegimeFamily, _> = serde_json::from_str("[[[1.0, 2.0], [3.0]]]");
        assert!(r.is_err());
    }
}
