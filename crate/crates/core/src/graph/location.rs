//! The 35-bit location code: 25 one-hot grid bits followed by 10 one-hot
//! size bits.
//!
//! Grid cells are numbered row-major from the top-left corner of the canvas,
//! so cell 0 is top-left and cell 4 is top-right.

use crate::error::{Error, Result};

pub const GRID_SIDE: usize = 5;
pub const GRID_CELLS: usize = GRID_SIDE * GRID_SIDE;
pub const SIZE_LEVELS: usize = 10;
pub const LOCATION_BITS: usize = GRID_CELLS + SIZE_LEVELS;

/// Binary location code, one entry per bit (0 or 1).
pub type LocationBits = [u8; LOCATION_BITS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LocationVector {
    grid_cell: u8,
    size_level: u8,
}

impl LocationVector {
    pub fn new(grid_cell: i64, size_level: i64) -> Result<Self> {
        if !(0..GRID_CELLS as i64).contains(&grid_cell) {
            return Err(Error::OutOfRange {
                field: "grid_cell",
                value: grid_cell,
                expected: "0..=24",
            });
        }
        if !(1..=SIZE_LEVELS as i64).contains(&size_level) {
            return Err(Error::OutOfRange {
                field: "size_level",
                value: size_level,
                expected: "1..=10",
            });
        }
        Ok(Self {
            grid_cell: grid_cell as u8,
            size_level: size_level as u8,
        })
    }

    pub fn grid_cell(&self) -> usize {
        self.grid_cell as usize
    }

    pub fn size_level(&self) -> usize {
        self.size_level as usize
    }

    /// `(row, col)` of the grid cell.
    pub fn row_col(&self) -> (usize, usize) {
        (self.grid_cell() / GRID_SIDE, self.grid_cell() % GRID_SIDE)
    }

    pub fn bits(&self) -> LocationBits {
        let mut bits = [0u8; LOCATION_BITS];
        bits[self.grid_cell()] = 1;
        bits[GRID_CELLS + self.size_level() - 1] = 1;
        bits
    }

    /// Location code of a normalized box: the cell holding the box centre
    /// and the size level `ceil(10 * sqrt(w * h))`, i.e. the side of the
    /// equal-area square in tenths of the canvas.
    pub fn from_box(x0: f32, y0: f32, x1: f32, y1: f32) -> Self {
        let cx = ((x0 + x1) * 0.5).clamp(0.0, 1.0);
        let cy = ((y0 + y1) * 0.5).clamp(0.0, 1.0);
        let col = ((cx * GRID_SIDE as f32) as usize).min(GRID_SIDE - 1);
        let row = ((cy * GRID_SIDE as f32) as usize).min(GRID_SIDE - 1);
        let area = ((x1 - x0).max(0.0) * (y1 - y0).max(0.0)).min(1.0);
        let size = (area.sqrt() * SIZE_LEVELS as f32).ceil() as usize;
        Self {
            grid_cell: (row * GRID_SIDE + col) as u8,
            size_level: size.clamp(1, SIZE_LEVELS) as u8,
        }
    }

    /// Square box centred on the grid cell with the side implied by the size
    /// level, clipped to the canvas. Used as a fallback placement hint.
    pub fn nominal_box(&self) -> [f32; 4] {
        let (row, col) = self.row_col();
        let cx = (col as f32 + 0.5) / GRID_SIDE as f32;
        let cy = (row as f32 + 0.5) / GRID_SIDE as f32;
        let half = self.size_level() as f32 / SIZE_LEVELS as f32 * 0.5;
        [
            (cx - half).max(0.0),
            (cy - half).max(0.0),
            (cx + half).min(1.0),
            (cy + half).min(1.0),
        ]
    }
}

pub fn encode_location(grid_cell: i64, size_level: i64) -> Result<LocationBits> {
    Ok(LocationVector::new(grid_cell, size_level)?.bits())
}

pub fn decode_location(bits: &[u8]) -> Result<LocationVector> {
    if bits.len() != LOCATION_BITS {
        return Err(Error::MalformedLocation(format!(
            "expected {LOCATION_BITS} bits, got {}",
            bits.len()
        )));
    }
    if let Some(pos) = bits.iter().position(|&b| b > 1) {
        return Err(Error::MalformedLocation(format!(
            "bit {pos} has value {}, expected 0 or 1",
            bits[pos]
        )));
    }
    let one_hot = |segment: &[u8], name: &str| -> Result<usize> {
        let set: Vec<usize> = segment
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 1)
            .map(|(i, _)| i)
            .collect();
        match set.as_slice() {
            [i] => Ok(*i),
            [] => Err(Error::MalformedLocation(format!("no {name} bit set"))),
            many => Err(Error::MalformedLocation(format!(
                "{} {name} bits set at {:?}",
                many.len(),
                many
            ))),
        }
    };
    let cell = one_hot(&bits[..GRID_CELLS], "grid")?;
    let size = one_hot(&bits[GRID_CELLS..], "size")?;
    LocationVector::new(cell as i64, size as i64 + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set_bits(bits: &LocationBits) -> Vec<usize> {
        bits.iter()
            .enumerate()
            .filter(|(_, &b)| b == 1)
            .map(|(i, _)| i)
            .collect()
    }

    #[test]
    fn corner_cases() {
        assert_eq!(set_bits(&encode_location(0, 1).unwrap()), vec![0, 25]);
        assert_eq!(set_bits(&encode_location(24, 10).unwrap()), vec![24, 34]);
        assert_eq!(set_bits(&encode_location(12, 5).unwrap()), vec![12, 29]);
        let mut bits = [0u8; LOCATION_BITS];
        bits[0] = 1;
        bits[25] = 1;
        assert_eq!(decode_location(&bits).unwrap(), LocationVector::new(0, 1).unwrap());
        let mut bits = [0u8; LOCATION_BITS];
        bits[24] = 1;
        bits[34] = 1;
        assert_eq!(decode_location(&bits).unwrap(), LocationVector::new(24, 10).unwrap());
    }

    #[test]
    fn out_of_range_names_the_field() {
        let err = encode_location(25, 3).unwrap_err().to_string();
        assert!(err.contains("grid_cell"), "{err}");
        let err = encode_location(-1, 3).unwrap_err().to_string();
        assert!(err.contains("grid_cell"), "{err}");
        let err = encode_location(3, 0).unwrap_err().to_string();
        assert!(err.contains("size_level"), "{err}");
        let err = encode_location(3, 11).unwrap_err().to_string();
        assert!(err.contains("size_level"), "{err}");
    }

    #[test]
    fn malformed_segments_are_rejected() {
        let zero = [0u8; LOCATION_BITS];
        assert!(matches!(decode_location(&zero), Err(Error::MalformedLocation(_))));
        let mut two_grid = encode_location(3, 3).unwrap();
        two_grid[7] = 1;
        assert!(matches!(decode_location(&two_grid), Err(Error::MalformedLocation(_))));
        let mut two_size = encode_location(3, 3).unwrap();
        two_size[30] = 1;
        assert!(matches!(decode_location(&two_size), Err(Error::MalformedLocation(_))));
        let mut no_size = encode_location(3, 3).unwrap();
        no_size[27] = 0;
        assert!(matches!(decode_location(&no_size), Err(Error::MalformedLocation(_))));
        assert!(decode_location(&[1u8; 34]).is_err());
    }

    #[test]
    fn box_mapping_is_row_major() {
        let top_right = LocationVector::from_box(0.85, 0.0, 0.95, 0.1);
        assert_eq!(top_right.grid_cell(), 4);
        let bottom_left = LocationVector::from_box(0.0, 0.9, 0.1, 1.0);
        assert_eq!(bottom_left.grid_cell(), 20);
        let full = LocationVector::from_box(0.0, 0.0, 1.0, 1.0);
        assert_eq!((full.grid_cell(), full.size_level()), (12, 10));
        let tiny = LocationVector::from_box(0.5, 0.5, 0.5, 0.5);
        assert_eq!(tiny.size_level(), 1);
    }
}
