//! Second-order finite-difference stencils.
//!
//! Central differences in the interior, second-order one-sided formulas at the
//! two ends of a line. Offsets are relative to the evaluation index.

/// Stencil for the first derivative at index `i` of a line of `len` samples,
/// unscaled (divide by the spacing).
pub fn first(i: usize, len: usize) -> [(isize, f64); 3] {
    debug_assert!(len >= 3);
    if i == 0 {
        [(0, -1.5), (1, 2.0), (2, -0.5)]
    } else if i + 1 == len {
        [(0, 1.5), (-1, -2.0), (-2, 0.5)]
    } else {
        [(-1, -0.5), (1, 0.5), (0, 0.0)]
    }
}

/// Stencil for the second derivative at index `i`, unscaled (divide by the
/// squared spacing).
pub fn second(i: usize, len: usize) -> [(isize, f64); 4] {
    debug_assert!(len >= 4);
    if i == 0 {
        [(0, 2.0), (1, -5.0), (2, 4.0), (3, -1.0)]
    } else if i + 1 == len {
        [(0, 2.0), (-1, -5.0), (-2, 4.0), (-3, -1.0)]
    } else {
        [(-1, 1.0), (0, -2.0), (1, 1.0), (0, 0.0)]
    }
}

/// Derivative of a sampled vector-valued line, `samples[i]` holding `comps`
/// components each.
pub fn differentiate_line(samples: &[f64], comps: usize, h: f64) -> Vec<f64> {
    let len = samples.len() / comps;
    let mut out = vec![0.0; samples.len()];
    for i in 0..len {
        for (off, w) in first(i, len) {
            if w == 0.0 {
                continue;
            }
            let j = (i as isize + off) as usize;
            for c in 0..comps {
                out[i * comps + c] += w * samples[j * comps + c];
            }
        }
        for c in 0..comps {
            out[i * comps + c] /= h;
        }
    }
    out
}
