//! Two-dimensional Sobol sequence with optional linear matrix scrambling and
//! digital shift.
//!
//! Dimension 1 is the base-2 van der Corput sequence; dimension 2 uses the
//! primitive polynomial `x + 1` with initial direction number `m₁ = 1`.

use rand::Rng as _;

use crate::rng::Rng;

const BITS: usize = 32;

fn direction_numbers() -> [[u32; BITS]; 2] {
    let mut v = [[0u32; BITS]; 2];
    let mut m: u32 = 1;
    for k in 0..BITS {
        v[0][k] = 1u32 << (31 - k);
        if k > 0 {
            m = (m << 1) ^ m;
        }
        v[1][k] = m << (31 - k);
    }
    v
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Scramble {
    /// Row `r` of a unit lower-triangular binary matrix, digits counted from
    /// the most significant bit.
    rows: [u32; BITS],
    shift: u32,
}

impl Scramble {
    fn random(rng: &mut Rng) -> Self {
        let mut rows = [0u32; BITS];
        for (r, row) in rows.iter_mut().enumerate() {
            let diag = 1u32 << (31 - r);
            // bits strictly above `diag` (earlier digits) are random
            let below = if r == 0 { 0 } else { rng.random::<u32>() & (u32::MAX << (32 - r)) };
            *row = diag | below;
        }
        Scramble { rows, shift: rng.random() }
    }

    fn apply(&self, x: u32) -> u32 {
        let mut y = 0u32;
        for (r, row) in self.rows.iter().enumerate() {
            if (row & x).count_ones() % 2 == 1 {
                y |= 1u32 << (31 - r);
            }
        }
        y ^ self.shift
    }
}

/// Position in a (possibly scrambled) 2D Sobol stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SobolState {
    directions: [[u32; BITS]; 2],
    scramble: Option<[Scramble; 2]>,
    index: u64,
}

impl SobolState {
    pub fn unscrambled() -> Self {
        SobolState { directions: direction_numbers(), scramble: None, index: 0 }
    }

    pub fn scrambled(rng: &mut Rng) -> Self {
        let s = [Scramble::random(rng), Scramble::random(rng)];
        SobolState { directions: direction_numbers(), scramble: Some(s), index: 0 }
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    /// Point number `i` of the stream, in `[0, 1)²`.
    pub fn point(&self, i: u64) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (d, o) in out.iter_mut().enumerate() {
            let mut x = 0u32;
            let mut bits = i;
            let mut k = 0;
            while bits != 0 && k < BITS {
                if bits & 1 == 1 {
                    x ^= self.directions[d][k];
                }
                bits >>= 1;
                k += 1;
            }
            if let Some(s) = &self.scramble {
                x = s[d].apply(x);
            }
            *o = x as f64 / 4_294_967_296.0;
        }
        out
    }

    pub fn next_point(&mut self) -> [f64; 2] {
        let p = self.point(self.index);
        self.index += 1;
        p
    }
}

/// Cell `(⌊u·nx⌋, ⌊v·ny⌋)` of a unit-square point.
pub fn unit_to_cell(u: [f64; 2], nx: usize, ny: usize) -> usize {
    let ix = ((u[0] * nx as f64) as usize).min(nx - 1);
    let iy = ((u[1] * ny as f64) as usize).min(ny - 1);
    ix * ny + iy
}
