//! JSON helpers for reproducible artifacts.
//!
//! Floating-point values are written as base-10 decimals with 17 significant
//! digits (`{:.16e}`), which round-trips every finite `f64` bit-exactly.
//! Matrices are written row-major as nested arrays.

use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::ser::{Error as _, SerializeSeq};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

/// Formats a finite value with 17 significant digits.
pub fn format_f64(value: f64) -> String {
    format!("{value:.16e}")
}

struct Exact(f64);

impl Serialize for Exact {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(S::Error::custom(format!(
                "cannot serialize non-finite value {}",
                self.0
            )));
        }
        let raw = RawValue::from_string(format_f64(self.0)).map_err(S::Error::custom)?;
        raw.serialize(serializer)
    }
}

struct ExactSlice<'a>(&'a [f64]);

impl Serialize for ExactSlice<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.0.len()))?;
        for v in self.0 {
            seq.serialize_element(&Exact(*v))?;
        }
        seq.end()
    }
}

pub mod exact_f64 {
    use super::*;

    pub fn serialize<S: Serializer>(value: &f64, serializer: S) -> Result<S::Ok, S::Error> {
        Exact(*value).serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<f64, D::Error> {
        f64::deserialize(deserializer)
    }
}

pub mod exact_vec {
    use super::*;

    pub fn serialize<S: Serializer>(value: &[f64], serializer: S) -> Result<S::Ok, S::Error> {
        ExactSlice(value).serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<f64>, D::Error> {
        Vec::<f64>::deserialize(deserializer)
    }
}

pub mod exact_dvector {
    use super::*;

    pub fn serialize<S: Serializer>(value: &DVector<f64>, serializer: S) -> Result<S::Ok, S::Error> {
        ExactSlice(value.as_slice()).serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(deserializer)?))
    }
}

/// Row-major nested-array encoding of a dense matrix.
pub mod row_major {
    use super::*;

    pub fn serialize<S: Serializer>(value: &DMatrix<f64>, serializer: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = value
            .row_iter()
            .map(|row| row.iter().copied().collect())
            .collect();
        let mut seq = serializer.serialize_seq(Some(rows.len()))?;
        for row in &rows {
            seq.serialize_element(&ExactSlice(row))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        matrix_from_rows(&rows).map_err(D::Error::custom)
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("ragged matrix rows".to_string());
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(matrix: &DMatrix<f64>) -> Vec<Vec<f64>> {
    matrix
        .row_iter()
        .map(|row| row.iter().copied().collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Holder {
        #[serde(with = "row_major")]
        m: DMatrix<f64>,
        #[serde(with = "exact_f64")]
        x: f64,
    }

    #[test]
    fn seventeen_digit_roundtrip_is_bit_exact() {
        let h = Holder {
            m: DMatrix::from_row_slice(2, 2, &[0.1, 1.0 / 3.0, -2.5e-300, 7.0]),
            x: std::f64::consts::PI,
        };
        let text = serde_json::to_string(&h).unwrap();
        assert!(text.contains("3.3333333333333331e-1"), "{text}");
        assert!(text.starts_with("{\"m\":[[1.0000000000000001e-1,"), "{text}");
        let back: Holder = serde_json::from_str(&text).unwrap();
        for (a, b) in h.m.iter().zip(back.m.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(h.x.to_bits(), back.x.to_bits());
    }

    #[test]
    fn non_finite_is_rejected() {
        let h = Holder {
            m: DMatrix::zeros(1, 1),
            x: f64::NAN,
        };
        assert!(serde_json::to_string(&h).is_err());
    }
}
