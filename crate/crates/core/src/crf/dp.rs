//! Exact inference on the binary Potts grid by a transfer over columns.
//!
//! The frontier state is one column's joint labeling (`2^rows` states, bit
//! `r` = label of row `r`). The column-to-column transfer is applied one site
//! at a time: entering site `(r, c)` replaces bit `r` (the left neighbour's
//! label) with the new label, which also sees its upper neighbour in bit
//! `r - 1`. This factorizes the `4^rows` column transfer into `rows` steps of
//! `2 * 2^rows` work each.
//!
//! Forward messages are checkpointed at column boundaries only; the backward
//! sweep recomputes the messages inside a column from its left checkpoint.

/// Accumulation rule of a message-passing sweep.
pub(crate) trait Semiring {
    fn plus(a: f64, b: f64) -> f64;
}

/// Log-sum-exp: partition function and marginals.
pub(crate) struct LogSum;

/// Max-plus: maximum score and max-marginals.
pub(crate) struct MaxPlus;

impl Semiring for LogSum {
    #[inline]
    fn plus(a: f64, b: f64) -> f64 {
        log_add_exp(a, b)
    }
}

impl Semiring for MaxPlus {
    #[inline]
    fn plus(a: f64, b: f64) -> f64 {
        a.max(b)
    }
}

#[inline]
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

#[inline]
fn bit(state: usize, r: usize) -> usize {
    (state >> r) & 1
}

/// Potentials of one grid instance.
pub(crate) struct Lattice<'a> {
    pub rows: usize,
    pub cols: usize,
    /// Row-major unary score of label 1 (label 0 scores 0).
    pub unary: &'a [f64],
    /// Score of each agreeing 4-neighbour pair.
    pub pair: f64,
    /// Optional per-site label restriction, row-major `[allow 0, allow 1]`.
    pub allowed: Option<&'a [[bool; 2]]>,
}

/// One visited transition of the backward sweep: the site `(row, col)` takes
/// label `y` while its left neighbour has `left` and its upper neighbour
/// `up`; `joint` is the semiring total of all labelings through it.
pub(crate) struct Transition {
    pub row: usize,
    pub col: usize,
    pub y: usize,
    pub left: usize,
    pub up: Option<usize>,
    pub joint: f64,
}

impl Lattice<'_> {
    fn states(&self) -> usize {
        1 << self.rows
    }

    #[inline]
    fn local(&self, r: usize, c: usize, y: usize, left: Option<usize>, up: Option<usize>) -> f64 {
        let site = r * self.cols + c;
        if let Some(allowed) = self.allowed {
            if !allowed[site][y] {
                return f64::NEG_INFINITY;
            }
        }
        let mut v = if y == 1 { self.unary[site] } else { 0.0 };
        if left == Some(y) {
            v += self.pair;
        }
        if up == Some(y) {
            v += self.pair;
        }
        v
    }

    fn column0(&self) -> Vec<f64> {
        (0..self.states())
            .map(|s| {
                (0..self.rows).fold(0.0, |acc, r| {
                    let up = (r > 0).then(|| bit(s, r - 1));
                    acc + self.local(r, 0, bit(s, r), None, up)
                })
            })
            .collect()
    }

    fn forward_step<S: Semiring>(&self, r: usize, c: usize, prev: &[f64]) -> Vec<f64> {
        let mask = 1 << r;
        (0..self.states())
            .map(|s| {
                let y = bit(s, r);
                let up = (r > 0).then(|| bit(s, r - 1));
                let from0 = prev[s & !mask] + self.local(r, c, y, Some(0), up);
                let from1 = prev[s | mask] + self.local(r, c, y, Some(1), up);
                S::plus(from0, from1)
            })
            .collect()
    }

    fn backward_step<S: Semiring>(&self, r: usize, c: usize, next: &[f64]) -> Vec<f64> {
        let mask = 1 << r;
        (0..self.states())
            .map(|s| {
                let left = Some(bit(s, r));
                let up = (r > 0).then(|| bit(s, r - 1));
                let to0 = self.local(r, c, 0, left, up) + next[s & !mask];
                let to1 = self.local(r, c, 1, left, up) + next[s | mask];
                S::plus(to0, to1)
            })
            .collect()
    }

    /// Forward messages after each column.
    pub fn forward<S: Semiring>(&self) -> Vec<Vec<f64>> {
        let mut bounds = Vec::with_capacity(self.cols);
        bounds.push(self.column0());
        for c in 1..self.cols {
            let mut a = bounds[c - 1].clone();
            for r in 0..self.rows {
                a = self.forward_step::<S>(r, c, &a);
            }
            bounds.push(a);
        }
        bounds
    }

    /// Semiring total over all labelings (log Z or the maximum score).
    pub fn total<S: Semiring>(bounds: &[Vec<f64>]) -> f64 {
        bounds
            .last()
            .map(|a| a.iter().fold(f64::NEG_INFINITY, |acc, &v| S::plus(acc, v)))
            .unwrap_or(0.0)
    }

    /// Backward sweep from the last site to the first. `on_transition` sees
    /// every site outside column 0; the returned vector holds the semiring
    /// total of each joint labeling of column 0.
    pub fn sweep<S: Semiring>(&self, bounds: &[Vec<f64>], mut on_transition: impl FnMut(&Transition)) -> Vec<f64> {
        let n = self.states();
        let mut beta = vec![0.0; n];
        for c in (1..self.cols).rev() {
            let mut within = Vec::with_capacity(self.rows);
            let mut a = bounds[c - 1].clone();
            for r in 0..self.rows {
                let next = self.forward_step::<S>(r, c, &a);
                within.push(a);
                a = next;
            }
            for r in (0..self.rows).rev() {
                let alpha = &within[r];
                let mask = 1 << r;
                for (s, &a_s) in alpha.iter().enumerate().take(n) {
                    let left = bit(s, r);
                    let up = (r > 0).then(|| bit(s, r - 1));
                    for y in 0..2 {
                        let s_new = if y == 1 { s | mask } else { s & !mask };
                        let joint = a_s + self.local(r, c, y, Some(left), up) + beta[s_new];
                        on_transition(&Transition {
                            row: r,
                            col: c,
                            y,
                            left,
                            up,
                            joint,
                        });
                    }
                }
                beta = self.backward_step::<S>(r, c, &beta);
            }
        }
        bounds[0].iter().zip(&beta).map(|(a, b)| a + b).collect()
    }
}
