//! Row-major JSON encoding for matrices: `{"rows": r, "cols": c, "data": [...]}`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::numerics::{mat_from_rows, mat_to_rows, Mat};

#[derive(Serialize, Deserialize)]
struct RowMajor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
    RowMajor {
        rows: m.nrows(),
        cols: m.ncols(),
        data: mat_to_rows(m),
    }
    .serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
    let r = RowMajor::deserialize(d)?;
    if r.data.len() != r.rows * r.cols {
        return Err(serde::de::Error::custom(format!(
            "matrix {}x{} has {} entries",
            r.rows,
            r.cols,
            r.data.len()
        )));
    }
    Ok(mat_from_rows(r.rows, r.cols, &r.data))
}

pub mod option {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Option<Mat>, s: S) -> Result<S::Ok, S::Error> {
        match m {
            Some(m) => s.serialize_some(&RowMajor {
                rows: m.nrows(),
                cols: m.ncols(),
                data: mat_to_rows(m),
            }),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Mat>, D::Error> {
        let r: Option<RowMajor> = Option::deserialize(d)?;
        r.map(|r| {
            if r.data.len() != r.rows * r.cols {
                return Err(serde::de::Error::custom("matrix entry count mismatch"));
            }
            Ok(mat_from_rows(r.rows, r.cols, &r.data))
        })
        .transpose()
    }
}

pub mod list {
    use super::*;

    pub fn serialize<S: Serializer>(ms: &[Mat], s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<RowMajor> = ms
            .iter()
            .map(|m| RowMajor {
                rows: m.nrows(),
                cols: m.ncols(),
                data: mat_to_rows(m),
            })
            .collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Mat>, D::Error> {
        let v: Vec<RowMajor> = Vec::deserialize(d)?;
        v.into_iter()
            .map(|r| {
                if r.data.len() != r.rows * r.cols {
                    return Err(serde::de::Error::custom("matrix entry count mismatch"));
                }
                Ok(mat_from_rows(r.rows, r.cols, &r.data))
            })
            .collect()
    }
}

/// Vectors as plain arrays.
pub mod vector {
    use super::*;
    use crate::numerics::Vector;

    pub fn serialize<S: Serializer>(v: &Vector, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector, D::Error> {
        Ok(Vector::from_vec(Vec::deserialize(d)?))
    }
}

pub mod vector_list {
    use super::*;
    use crate::numerics::Vector;

    pub fn serialize<S: Serializer>(vs: &[Vector], s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vector>, D::Error> {
        let v: Vec<Vec<f64>> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(Vector::from_vec).collect())
    }
}
