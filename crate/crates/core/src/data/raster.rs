//! Polygon and run-length mask rasterization.

/// Even-odd fill of `polygon` sampled at pixel centres of a `w x h` grid.
/// `polygon` is in grid coordinates (pixel `i` spans `[i, i + 1)`).
pub fn fill_polygon(polygon: &[(f64, f64)], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![false; w * h];
    if polygon.len() < 3 {
        return out;
    }
    let mut xs = Vec::new();
    for row in 0..h {
        let y = row as f64 + 0.5;
        xs.clear();
        for i in 0..polygon.len() {
            let (x0, y0) = polygon[i];
            let (x1, y1) = polygon[(i + 1) % polygon.len()];
            if (y0 <= y) != (y1 <= y) {
                xs.push(x0 + (y - y0) / (y1 - y0) * (x1 - x0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            // Pixel `c` is inside when its centre lies in [a, b).
            let start = (pair[0] - 0.5).ceil().max(0.0) as usize;
            let end = ((pair[1] - 0.5).ceil().max(0.0) as usize).min(w);
            for c in start..end {
                out[row * w + c] = true;
            }
        }
    }
    out
}

/// Union of several polygons given as flat `[x0, y0, x1, y1, ...]` lists in
/// source coordinates, mapped through `to_grid`.
pub fn fill_polygons(
    polygons: &[Vec<f64>],
    w: usize,
    h: usize,
    to_grid: impl Fn(f64, f64) -> (f64, f64),
) -> Vec<bool> {
    let mut out = vec![false; w * h];
    for flat in polygons {
        let pts: Vec<(f64, f64)> = flat.chunks_exact(2).map(|p| to_grid(p[0], p[1])).collect();
        for (o, v) in out.iter_mut().zip(fill_polygon(&pts, w, h)) {
            *o |= v;
        }
    }
    out
}

/// Decodes uncompressed column-major run lengths, starting with a run of
/// zeros, into a row-major mask.
pub fn decode_rle(counts: &[u32], h: usize, w: usize) -> Option<Vec<bool>> {
    if counts.iter().map(|&c| c as usize).sum::<usize>() != h * w {
        return None;
    }
    let mut out = vec![false; h * w];
    let mut pos = 0usize;
    let mut value = false;
    for &c in counts {
        for k in pos..pos + c as usize {
            let (col, row) = (k / h, k % h);
            out[row * w + col] = value;
        }
        pos += c as usize;
        value = !value;
    }
    Some(out)
}

/// Nearest-neighbour sample of a full-image mask onto a box-local grid.
/// The box is in source pixel coordinates.
pub fn sample_box(mask: &[bool], w: usize, h: usize, bbox: [f64; 4], gw: usize, gh: usize) -> Vec<bool> {
    let (bx, by, bw, bh) = (bbox[0], bbox[1], bbox[2] - bbox[0], bbox[3] - bbox[1]);
    let mut out = vec![false; gw * gh];
    for gy in 0..gh {
        for gx in 0..gw {
            let x = (bx + (gx as f64 + 0.5) / gw as f64 * bw).floor();
            let y = (by + (gy as f64 + 0.5) / gh as f64 * bh).floor();
            if x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h {
                out[gy * gw + gx] = mask[y as usize * w + x as usize];
            }
        }
    }
    out
}

/// Tight bounding box `[x0, y0, x1, y1]` of flat polygons.
pub fn polygon_bounds(polygons: &[Vec<f64>]) -> Option<[f64; 4]> {
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for flat in polygons {
        for p in flat.chunks_exact(2) {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].min(p[1]);
            b[2] = b[2].max(p[0]);
            b[3] = b[3].max(p[1]);
        }
    }
    (b[2] > b[0] && b[3] > b[1]).then_some(b)
}

/// Shoelace area of a flat polygon.
pub fn polygon_area(flat: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = flat.chunks_exact(2).map(|p| (p[0], p[1])).collect();
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    (0..n)
        .map(|i| {
            let (x0, y0) = pts[i];
            let (x1, y1) = pts[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum::<f64>()
        .abs()
        * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_aligned_square_fills_exactly() {
        let sq = [(2.0, 1.0), (6.0, 1.0), (6.0, 4.0), (2.0, 4.0)];
        let m = fill_polygon(&sq, 8, 6);
        let count = m.iter().filter(|&&v| v).count();
        assert_eq!(count, 4 * 3);
        assert!(m[1 * 8 + 2] && m[3 * 8 + 5] && !m[1 * 8 + 6] && !m[4 * 8 + 2]);
    }

    #[test]
    fn triangle_area_is_close_to_pixel_count() {
        let tri = [0.0, 0.0, 64.0, 0.0, 0.0, 64.0];
        let m = fill_polygons(&[tri.to_vec()], 64, 64, |x, y| (x, y));
        let count = m.iter().filter(|&&v| v).count() as f64;
        assert!((count - polygon_area(&tri)).abs() < 64.0);
    }

    #[test]
    fn rle_is_column_major() {
        // 2x3 image, column-major: [0 0 | 1 0 | 1 1]
        let m = decode_rle(&[2, 1, 1, 2], 2, 3).unwrap();
        assert_eq!(m, vec![false, true, true, false, false, true]);
        assert!(decode_rle(&[1, 2], 2, 3).is_none());
    }
}
