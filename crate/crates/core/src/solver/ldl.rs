//! Sparse LDL' factorization of quasi-definite matrices.
//!
//! Fill-reducing ordering comes from AMD; the elimination tree and the
//! up-looking numeric factorization follow Davis' LDL package. The symbolic
//! analysis is done once and reused for every refactorization.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LdlError {
    #[error("ordering failed: {0}")]
    Ordering(String),
    #[error("pattern entry ({0}, {1}) is below the diagonal or out of range")]
    BadPattern(usize, usize),
    #[error("zero pivot at column {0}")]
    ZeroPivot(usize),
    #[error("non-finite pivot at column {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    perm: Vec<usize>,
    // permuted upper triangle
    ap: Vec<usize>,
    ai: Vec<usize>,
    ax: Vec<f64>,
    map: Vec<usize>,
    signs: Vec<f64>,
    lp: Vec<usize>,
    parent: Vec<Option<usize>>,
    lnz: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    y: Vec<f64>,
    pattern: Vec<usize>,
    flag: Vec<usize>,
}

impl LdlFactor {
    /// Analyzes the pattern of an `n x n` symmetric matrix given by its upper
    /// triangle entries `(row, col)` with `row <= col`. Every diagonal entry
    /// must appear. `signs[k]` is the expected sign of pivot `k`.
    pub fn new(n: usize, upper: &[(usize, usize)], signs: &[f64]) -> Result<Self, LdlError> {
        for &(i, j) in upper {
            if i > j || j >= n {
                return Err(LdlError::BadPattern(i, j));
            }
        }
        let mut seen_diag = vec![false; n];
        for &(i, j) in upper {
            if i == j {
                seen_diag[i] = true;
            }
        }
        if let Some(k) = seen_diag.iter().position(|s| !s) {
            return Err(LdlError::BadPattern(k, k));
        }

        let (perm, pinv) = amd_order(n, upper)?;

        let mut keyed: Vec<(usize, usize, usize)> = upper
            .iter()
            .enumerate()
            .map(|(k, &(i, j))| {
                let (a, b) = (pinv[i], pinv[j]);
                (a.max(b), a.min(b), k)
            })
            .collect();
        keyed.sort_unstable();
        let mut ap = vec![0usize; n + 1];
        let mut ai = Vec::with_capacity(keyed.len());
        let mut map = vec![0usize; upper.len()];
        let mut last: Option<(usize, usize)> = None;
        for &(col, row, k) in &keyed {
            if last != Some((col, row)) {
                ai.push(row);
                ap[col + 1] += 1;
                last = Some((col, row));
            }
            map[k] = ai.len() - 1;
        }
        for j in 0..n {
            ap[j + 1] += ap[j];
        }

        let psigns: Vec<f64> = perm.iter().map(|&p| signs[p]).collect();

        // elimination tree and column counts
        let mut parent = vec![None; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for p in ap[k]..ap[k + 1] {
                let mut i = ai[p];
                if i < k {
                    while flag[i] != k {
                        if parent[i].is_none() {
                            parent[i] = Some(k);
                        }
                        lnz[i] += 1;
                        flag[i] = k;
                        i = parent[i].expect("set above");
                    }
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + lnz[k];
        }
        let total = lp[n];
        Ok(Self {
            n,
            perm,
            ax: vec![0.0; ai.len()],
            ap,
            ai,
            map,
            signs: psigns,
            lp,
            parent,
            lnz: vec![0; n],
            li: vec![0; total],
            lx: vec![0.0; total],
            d: vec![0.0; n],
            y: vec![0.0; n],
            pattern: vec![0; n],
            flag,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_l(&self) -> usize {
        self.lp[self.n]
    }

    /// Numeric factorization. `values[k]` belongs to the `k`-th pattern entry
    /// passed to [`LdlFactor::new`]. Pivots whose signed value falls below
    /// `dyn_eps` are replaced by `sign * dyn_delta`; the count of such
    /// replacements is returned.
    pub fn factor(&mut self, values: &[f64], dyn_eps: f64, dyn_delta: f64) -> Result<usize, LdlError> {
        assert_eq!(values.len(), self.map.len());
        self.ax.iter_mut().for_each(|v| *v = 0.0);
        for (k, &v) in values.iter().enumerate() {
            self.ax[self.map[k]] += v;
        }
        let n = self.n;
        let mut bumped = 0;
        for k in 0..n {
            self.y[k] = 0.0;
            let mut top = n;
            self.flag[k] = k;
            self.lnz[k] = 0;
            for p in self.ap[k]..self.ap[k + 1] {
                let mut i = self.ai[p];
                self.y[i] += self.ax[p];
                let mut len = 0;
                while self.flag[i] != k {
                    self.pattern[len] = i;
                    len += 1;
                    self.flag[i] = k;
                    i = self.parent[i].expect("etree path ends at k");
                }
                while len > 0 {
                    top -= 1;
                    len -= 1;
                    self.pattern[top] = self.pattern[len];
                }
            }
            let mut dk = self.y[k];
            self.y[k] = 0.0;
            for &i in &self.pattern[top..n] {
                let yi = self.y[i];
                self.y[i] = 0.0;
                let p2 = self.lp[i] + self.lnz[i];
                for p in self.lp[i]..p2 {
                    self.y[self.li[p]] -= self.lx[p] * yi;
                }
                let lki = yi / self.d[i];
                dk -= lki * yi;
                self.li[p2] = k;
                self.lx[p2] = lki;
                self.lnz[i] += 1;
            }
            if !dk.is_finite() {
                return Err(LdlError::NonFinite(k));
            }
            if dk * self.signs[k] <= dyn_eps {
                dk = self.signs[k] * dyn_delta;
                bumped += 1;
            }
            if dk == 0.0 {
                return Err(LdlError::ZeroPivot(k));
            }
            self.d[k] = dk;
        }
        Ok(bumped)
    }

    /// Solves `K x = b` in place using the last factorization.
    pub fn solve(&self, b: &mut [f64], work: &mut Vec<f64>) {
        let n = self.n;
        work.clear();
        work.extend(self.perm.iter().map(|&p| b[p]));
        let x = work.as_mut_slice();
        for j in 0..n {
            let xj = x[j];
            for p in self.lp[j]..self.lp[j] + self.lnz[j] {
                x[self.li[p]] -= self.lx[p] * xj;
            }
        }
        for j in 0..n {
            x[j] /= self.d[j];
        }
        for j in (0..n).rev() {
            let mut acc = x[j];
            for p in self.lp[j]..self.lp[j] + self.lnz[j] {
                acc -= self.lx[p] * x[self.li[p]];
            }
            x[j] = acc;
        }
        for (k, &p) in self.perm.iter().enumerate() {
            b[p] = x[k];
        }
    }
}

fn amd_order(n: usize, upper: &[(usize, usize)]) -> Result<(Vec<usize>, Vec<usize>), LdlError> {
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(i, j) in upper {
        cols[j].push(i);
    }
    let mut ap = Vec::with_capacity(n + 1);
    let mut ai = Vec::with_capacity(upper.len());
    ap.push(0usize);
    for c in &mut cols {
        c.sort_unstable();
        c.dedup();
        ai.extend_from_slice(c);
        ap.push(ai.len());
    }
    let control = amd::Control::default();
    let (p, pinv, _info) =
        amd::order(n, &ap, &ai, &control).map_err(|s| LdlError::Ordering(format!("{s:?}")))?;
    Ok((p, pinv))
}
