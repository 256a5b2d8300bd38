use num_complex::Complex64;

use super::{Phase, PhaseSet};

/// 3×3 complex matrix indexed by phase pair `(k, m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseMatrix(pub [[Complex64; 3]; 3]);

impl Default for PhaseMatrix {
    fn default() -> Self {
        Self::zero()
    }
}

impl PhaseMatrix {
    pub fn zero() -> Self {
        PhaseMatrix([[Complex64::new(0.0, 0.0); 3]; 3])
    }

    /// Diagonal matrix with `value` on the rows listed in `phases`.
    pub fn diagonal(value: Complex64, phases: PhaseSet) -> Self {
        let mut m = Self::zero();
        for p in phases.iter() {
            m.0[p.index()][p.index()] = value;
        }
        m
    }

    /// Builds a matrix from separate real and imaginary parts.
    pub fn from_parts(re: [[f64; 3]; 3], im: [[f64; 3]; 3]) -> Self {
        let mut m = Self::zero();
        for k in 0..3 {
            for j in 0..3 {
                m.0[k][j] = Complex64::new(re[k][j], im[k][j]);
            }
        }
        m
    }

    pub fn get(&self, k: Phase, m: Phase) -> Complex64 {
        self.0[k.index()][m.index()]
    }

    pub fn scale(&self, factor: f64) -> Self {
        let mut out = *self;
        for row in out.0.iter_mut() {
            for v in row.iter_mut() {
                *v *= factor;
            }
        }
        out
    }

    /// Zeroes every entry whose row or column is outside `phases`.
    pub fn restrict(&self, phases: PhaseSet) -> Self {
        let mut out = *self;
        for k in Phase::ALL {
            for m in Phase::ALL {
                if !phases.contains(k) || !phases.contains(m) {
                    out.0[k.index()][m.index()] = Complex64::new(0.0, 0.0);
                }
            }
        }
        out
    }

    /// Largest entry magnitude outside the `phases` sub-block.
    pub(crate) fn max_outside(&self, phases: PhaseSet) -> f64 {
        let mut worst: f64 = 0.0;
        for k in Phase::ALL {
            for m in Phase::ALL {
                if !phases.contains(k) || !phases.contains(m) {
                    worst = worst.max(self.0[k.index()][m.index()].norm());
                }
            }
        }
        worst
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..3).all(|k| (0..3).all(|m| (self.0[k][m] - self.0[m][k]).norm() <= tol))
    }

    /// Inverts the sub-block selected by `phases`; entries outside it stay zero.
    ///
    /// Returns `None` when the sub-block is singular.
    pub fn inverse_on(&self, phases: PhaseSet) -> Option<Self> {
        let idx: Vec<usize> = phases.iter().map(Phase::index).collect();
        let n = idx.len();
        let mut a = vec![vec![Complex64::new(0.0, 0.0); 2 * n]; n];
        for (r, &k) in idx.iter().enumerate() {
            for (c, &m) in idx.iter().enumerate() {
                a[r][c] = self.0[k][m];
            }
            a[r][n + r] = Complex64::new(1.0, 0.0);
        }
        for col in 0..n {
            let pivot = (col..n).max_by(|&x, &y| a[x][col].norm().total_cmp(&a[y][col].norm()))?;
            if a[pivot][col].norm() < 1e-300 {
                return None;
            }
            a.swap(col, pivot);
            let inv = a[col][col].inv();
            for v in a[col].iter_mut() {
                *v *= inv;
            }
            for r in 0..n {
                if r != col {
                    let f = a[r][col];
                    if f.norm() != 0.0 {
                        for c in 0..2 * n {
                            let t = a[col][c];
                            a[r][c] -= f * t;
                        }
                    }
                }
            }
        }
        let mut out = Self::zero();
        for (r, &k) in idx.iter().enumerate() {
            for (c, &m) in idx.iter().enumerate() {
                out.0[k][m] = a[r][n + c];
            }
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_partial_block() {
        let z = PhaseMatrix::from_parts(
            [[0.0, 0.0, 0.0], [0.0, 1.3294, 0.2066], [0.0, 0.2066, 1.3238]],
            [[0.0, 0.0, 0.0], [0.0, 1.3471, 0.4591], [0.0, 0.4591, 1.3569]],
        );
        let bc = PhaseSet::from_phases(&[Phase::B, Phase::C]);
        let y = z.inverse_on(bc).unwrap();
        assert_eq!(y.0[0][0], Complex64::new(0.0, 0.0));
        for k in 1..3 {
            for m in 1..3 {
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 1..3 {
                    acc += z.0[k][j] * y.0[j][m];
                }
                let expect = if k == m { 1.0 } else { 0.0 };
                assert!((acc - Complex64::new(expect, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_block_is_rejected() {
        let z = PhaseMatrix::zero();
        assert!(z.inverse_on(PhaseSet::ABC).is_none());
    }
}
