//! CSV column helpers shared by the exporters.
//!
//! Real entries take one column each; complex entries take a `re_` and an
//! `im_` column.

use nalgebra::DVector;

use crate::scalar::{FieldKind, Scalar};

pub fn push_header<T: Scalar>(header: &mut Vec<String>, prefix: &str, n: usize) {
    for i in 0..n {
        match T::KIND {
            FieldKind::Real => header.push(format!("{prefix}_{i}")),
            FieldKind::Complex => {
                header.push(format!("re_{prefix}_{i}"));
                header.push(format!("im_{prefix}_{i}"));
            }
        }
    }
}

pub fn push_values<T: Scalar>(row: &mut Vec<String>, v: &DVector<T>) {
    for z in v.iter() {
        match T::KIND {
            FieldKind::Real => row.push(fmt_f64(z.real())),
            FieldKind::Complex => {
                row.push(fmt_f64(z.real()));
                row.push(fmt_f64(z.imaginary()));
            }
        }
    }
}

/// Shortest representation that round-trips.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn write_row<W: std::io::Write>(w: &mut W, fields: &[String]) -> std::io::Result<()> {
    writeln!(w, "{}", fields.join(","))
}
