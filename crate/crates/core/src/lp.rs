//! Dense tableau simplex for small packing problems `max c·x, A x <= b, x >= 0, b >= 0`.

use crate::error::{Error, Result};

const TOL: f64 = 1e-11;
const MAX_PIVOTS: usize = 10_000;

struct Tableau {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn new(a: &[Vec<f64>], b: &[f64], nv: usize) -> Self {
        let m = a.len();
        let cols = nv + m;
        let rows = a
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut r = vec![0.0; cols];
                r[..nv].copy_from_slice(row);
                r[nv + i] = 1.0;
                r
            })
            .collect();
        Tableau {
            rows,
            rhs: b.to_vec(),
            basis: (nv..nv + m).collect(),
            cols,
        }
    }

    fn reduced_costs(&self, c: &[f64]) -> Vec<f64> {
        let cost = |j: usize| c.get(j).copied().unwrap_or(0.0);
        let mut d: Vec<f64> = (0..self.cols).map(cost).collect();
        for (row, &bj) in self.rows.iter().zip(&self.basis) {
            let cb = cost(bj);
            if cb != 0.0 {
                for (dj, t) in d.iter_mut().zip(row) {
                    *dj -= cb * t;
                }
            }
        }
        for &bj in &self.basis {
            d[bj] = 0.0;
        }
        d
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let p = self.rows[r][j];
        for t in self.rows[r].iter_mut() {
            *t /= p;
        }
        self.rhs[r] /= p;
        self.rows[r][j] = 1.0;
        let prow = self.rows[r].clone();
        let prhs = self.rhs[r];
        for i in 0..self.rows.len() {
            if i == r {
                continue;
            }
            let factor = self.rows[i][j];
            if factor == 0.0 {
                continue;
            }
            for (t, pt) in self.rows[i].iter_mut().zip(&prow) {
                *t -= factor * pt;
            }
            self.rows[i][j] = 0.0;
            self.rhs[i] = (self.rhs[i] - factor * prhs).max(0.0);
        }
        self.basis[r] = j;
    }

    /// Bland's rule simplex over the allowed columns. Returns final reduced costs.
    fn optimize(&mut self, c: &[f64], allowed: &[bool], pivots: &mut usize) -> Result<Vec<f64>> {
        loop {
            let d = self.reduced_costs(c);
            let entering = (0..self.cols)
                .find(|&j| allowed[j] && d[j] > TOL && !self.basis.contains(&j));
            let Some(j) = entering else {
                return Ok(d);
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let t = self.rows[i][j];
                if t > TOL {
                    let ratio = self.rhs[i] / t;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - TOL
                                || (ratio <= br + TOL && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = best else {
                return Err(Error::Domain("linear program is unbounded".into()));
            };
            self.pivot(r, j);
            *pivots += 1;
            if *pivots > MAX_PIVOTS {
                return Err(Error::LpNonConvergence(MAX_PIVOTS));
            }
        }
    }
}

/// Lexicographically maximizes `objectives` in order over `{x >= 0 : A x <= b}`.
///
/// After each objective the optimal face is kept by freezing every nonbasic
/// column with a strictly negative reduced cost.
pub fn lexicographic_max(a: &[Vec<f64>], b: &[f64], objectives: &[Vec<f64>]) -> Result<Vec<f64>> {
    let nv = objectives
        .first()
        .map(|c| c.len())
        .or_else(|| a.first().map(|r| r.len()))
        .unwrap_or(0);
    if a.len() != b.len() || a.iter().any(|r| r.len() != nv) || objectives.iter().any(|c| c.len() != nv)
    {
        return Err(Error::InvalidParameter("inconsistent LP dimensions".into()));
    }
    if b.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidParameter("LP right-hand side must be non-negative".into()));
    }
    let mut tab = Tableau::new(a, b, nv);
    let mut allowed = vec![true; tab.cols];
    let mut pivots = 0;
    for c in objectives {
        let d = tab.optimize(c, &allowed, &mut pivots)?;
        for j in 0..tab.cols {
            if d[j] < -TOL && !tab.basis.contains(&j) {
                allowed[j] = false;
            }
        }
    }
    let mut x = vec![0.0; nv];
    for (i, &bj) in tab.basis.iter().enumerate() {
        if bj < nv {
            x[bj] = tab.rhs[i];
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18  -> (2, 6)
        let a = vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 2.0]];
        let x = lexicographic_max(&a, &[4.0, 12.0, 18.0], &[vec![3.0, 5.0]]).unwrap();
        assert_relative_eq!(x[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 6.0, epsilon = 1e-12);
    }

    #[test]
    fn tie_break_prefers_earlier_variables() {
        // max x + y with x + y <= 3, x <= 4, y <= 3, then max x, then max y
        let a = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let objs = vec![vec![1.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let x = lexicographic_max(&a, &[4.0, 3.0, 3.0], &objs).unwrap();
        assert_relative_eq!(x[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 0.0, epsilon = 1e-12);
        let objs = vec![vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let x = lexicographic_max(&a, &[4.0, 3.0, 3.0], &objs).unwrap();
        assert_relative_eq!(x[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_rhs_is_degenerate_but_fine() {
        let a = vec![vec![1.0, 1.0], vec![1.0, 0.0]];
        let x = lexicographic_max(&a, &[0.0, 1.0], &[vec![1.0, 1.0]]).unwrap();
        assert_eq!(x, vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_negative_rhs() {
        assert!(lexicographic_max(&[vec![1.0]], &[-1.0], &[vec![1.0]]).is_err());
    }
}
