//! Vertical (bit-sliced) data layout: bit `i` of element `j` lives at row
//! `i`, column `j`. Little-endian: bit 0 in the lowest row.

use thiserror::Error;

use crate::bits::BitRow;

#[derive(Debug, Error, PartialEq)]
pub enum LayoutError {
    #[error("{count} elements exceed {columns} columns")]
    TooManyElements { count: usize, columns: usize },
    #[error("width {width} exceeds 64-bit host values")]
    WidthTooLarge { width: usize },
}

pub fn transpose_in(
    values: &[u64],
    width: usize,
    columns: usize,
) -> Result<Vec<BitRow>, LayoutError> {
    if values.len() > columns {
        return Err(LayoutError::TooManyElements {
            count: values.len(),
            columns,
        });
    }
    if width > 64 {
        return Err(LayoutError::WidthTooLarge { width });
    }
    let mut rows = vec![BitRow::zero(columns); width];
    for (lane, v) in values.iter().enumerate() {
        for (bit, row) in rows.iter_mut().enumerate() {
            if v >> bit & 1 == 1 {
                row.set(lane, true);
            }
        }
    }
    Ok(rows)
}

/// Inverse of `transpose_in`: reads `count` lanes from the bit-plane rows.
pub fn transpose_out(rows: &[BitRow], count: usize) -> Vec<u64> {
    let mut values = vec![0u64; count];
    for (bit, row) in rows.iter().enumerate() {
        for (lane, v) in values.iter_mut().enumerate() {
            if row.get(lane) {
                *v |= 1 << bit;
            }
        }
    }
    values
}
