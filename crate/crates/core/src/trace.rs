//! Serde helpers for numbers that do not fit a JSON number.
//!
//! Big integers are written as decimal strings so traces round-trip
//! losslessly through any JSON reader.

use num_bigint::BigInt;
use serde::ser::SerializeSeq;
use serde::Serializer;

use crate::model::PartialVector;

pub fn ser_bigint<S: Serializer>(n: &BigInt, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(n)
}

pub fn ser_bigints<S: Serializer>(ns: &[BigInt], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(ns.len()))?;
    for n in ns {
        seq.serialize_element(&n.to_string())?;
    }
    seq.end()
}

pub fn ser_bigint_rows<S: Serializer>(rows: &[Vec<BigInt>], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(rows.len()))?;
    for row in rows {
        seq.serialize_element(&row.iter().map(ToString::to_string).collect::<Vec<_>>())?;
    }
    seq.end()
}

/// `{ "coord": "value", ... }`
pub fn ser_partial<S: Serializer>(v: &PartialVector, s: S) -> Result<S::Ok, S::Error> {
    s.collect_map(v.iter().map(|(c, n)| (c.to_string(), n.to_string())))
}
