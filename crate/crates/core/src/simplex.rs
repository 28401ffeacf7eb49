//! Dense bounded-variable primal simplex for small linear programs.
//!
//! Minimizes `c'x` subject to row constraints `a_i'x {<=,>=,=} b_i` and
//! `lower <= x <= upper`, where bounds may be infinite. Phase one drives
//! one artificial per row to zero; Bland's rule prevents cycling.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coefficients: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

const TOL: f64 = 1e-9;
const MAX_ITER: usize = 50_000;

impl LinearProgram {
    pub fn new(n: usize) -> Self {
        LinearProgram {
            objective: vec![0.0; n],
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            constraints: Vec::new(),
        }
    }

    pub fn add(&mut self, coefficients: Vec<f64>, relation: Relation, rhs: f64) {
        assert_eq!(coefficients.len(), self.objective.len());
        self.constraints.push(Constraint { coefficients, relation, rhs });
    }

    pub fn minimize(&self) -> LpOutcome {
        Tableau::new(self).solve(self)
    }

    pub fn maximize(&self) -> LpOutcome {
        let mut neg = self.clone();
        neg.objective.iter_mut().for_each(|c| *c = -*c);
        match neg.minimize() {
            LpOutcome::Optimal { x, value } => LpOutcome::Optimal { x, value: -value },
            other => other,
        }
    }
}

struct Tableau {
    n: usize,
    m: usize,
    /// Row-major `m x total` matrix `B^{-1} [A | I | diag(sign)]`.
    t: Vec<f64>,
    total: usize,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    x: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

enum Step {
    Optimal,
    Unbounded,
    Moved,
}

impl Tableau {
    fn new(lp: &LinearProgram) -> Self {
        let n = lp.objective.len();
        let m = lp.constraints.len();
        let total = n + 2 * m;
        let mut lo = vec![0.0; total];
        let mut hi = vec![0.0; total];
        let mut x = vec![0.0; total];
        for j in 0..n {
            assert!(lp.lower[j] <= lp.upper[j], "variable {j} has empty bounds");
            lo[j] = lp.lower[j];
            hi[j] = lp.upper[j];
            x[j] = if lo[j].is_finite() {
                lo[j]
            } else if hi[j].is_finite() {
                hi[j]
            } else {
                0.0
            };
        }
        let mut t = vec![0.0; m * total];
        let mut basis = Vec::with_capacity(m);
        let mut is_basic = vec![false; total];
        for (i, c) in lp.constraints.iter().enumerate() {
            let (slo, shi) = match c.relation {
                Relation::Le => (0.0, f64::INFINITY),
                Relation::Ge => (f64::NEG_INFINITY, 0.0),
                Relation::Eq => (0.0, 0.0),
            };
            lo[n + i] = slo;
            hi[n + i] = shi;
            let ax: f64 = c.coefficients.iter().zip(&x[..n]).map(|(a, v)| a * v).sum();
            let r = c.rhs - ax;
            let sign = if r >= 0.0 { 1.0 } else { -1.0 };
            let art = n + m + i;
            lo[art] = 0.0;
            hi[art] = f64::INFINITY;
            x[art] = r.abs();
            // Row i of B^{-1}[A | I | diag(sign)] with B = diag(sign).
            let row = &mut t[i * total..(i + 1) * total];
            for j in 0..n {
                row[j] = sign * c.coefficients[j];
            }
            row[n + i] = sign;
            row[art] = 1.0;
            basis.push(art);
            is_basic[art] = true;
        }
        Tableau { n, m, t, total, basis, is_basic, x, lo, hi }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.total + j]
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let total = self.total;
        let p = self.at(r, j);
        for k in 0..total {
            self.t[r * total + k] /= p;
        }
        let pivot_row: Vec<f64> = self.t[r * total..(r + 1) * total].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.at(i, j);
            if f != 0.0 {
                let row = &mut self.t[i * total..(i + 1) * total];
                for k in 0..total {
                    row[k] -= f * pivot_row[k];
                }
            }
        }
        self.is_basic[self.basis[r]] = false;
        self.basis[r] = j;
        self.is_basic[j] = true;
    }

    fn step(&mut self, cost: &[f64]) -> Step {
        // Entering variable: smallest index with an improving direction.
        let mut entering = None;
        for j in 0..self.total {
            if self.is_basic[j] || self.lo[j] == self.hi[j] {
                continue;
            }
            let reduced = cost[j] - (0..self.m).map(|i| cost[self.basis[i]] * self.at(i, j)).sum::<f64>();
            if reduced < -TOL && self.x[j] < self.hi[j] - TOL {
                entering = Some((j, 1.0));
                break;
            }
            if reduced > TOL && self.x[j] > self.lo[j] + TOL {
                entering = Some((j, -1.0));
                break;
            }
        }
        let Some((j, dir)) = entering else {
            return Step::Optimal;
        };

        let mut limit = self.hi[j] - self.lo[j];
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..self.m {
            let rate = -dir * self.at(i, j);
            let b = self.basis[i];
            let cap = if rate < -TOL && self.lo[b].is_finite() {
                ((self.x[b] - self.lo[b]) / -rate).max(0.0)
            } else if rate > TOL && self.hi[b].is_finite() {
                ((self.hi[b] - self.x[b]) / rate).max(0.0)
            } else {
                continue;
            };
            let better = match leave {
                None => cap < limit || (cap == limit && limit.is_finite()),
                Some((r, _)) => cap < limit || (cap == limit && b < self.basis[r]),
            };
            if better {
                limit = cap;
                leave = Some((i, if rate < 0.0 { self.lo[b] } else { self.hi[b] }));
            }
        }
        if limit.is_infinite() {
            return Step::Unbounded;
        }
        for i in 0..self.m {
            let b = self.basis[i];
            self.x[b] += -dir * self.at(i, j) * limit;
        }
        self.x[j] += dir * limit;
        if let Some((r, bound)) = leave {
            let b = self.basis[r];
            self.x[b] = bound;
            self.pivot(r, j);
        } else {
            // Bound flip.
            self.x[j] = if dir > 0.0 { self.hi[j] } else { self.lo[j] };
        }
        Step::Moved
    }

    fn run(&mut self, cost: &[f64]) -> Option<Step> {
        for _ in 0..MAX_ITER {
            match self.step(cost) {
                Step::Moved => continue,
                done => return Some(done),
            }
        }
        None
    }

    fn solve(mut self, lp: &LinearProgram) -> LpOutcome {
        let (n, m) = (self.n, self.m);
        let mut phase1 = vec![0.0; self.total];
        phase1[n + m..].iter_mut().for_each(|c| *c = 1.0);
        if self.run(&phase1).is_none() {
            return LpOutcome::Infeasible;
        }
        let scale = 1.0 + lp.constraints.iter().map(|c| c.rhs.abs()).fold(0.0, f64::max);
        let infeasibility: f64 = self.x[n + m..].iter().sum();
        if infeasibility > 1e-8 * scale {
            return LpOutcome::Infeasible;
        }
        for a in n + m..self.total {
            self.hi[a] = 0.0;
            if !self.is_basic[a] {
                self.x[a] = 0.0;
            }
        }
        let mut phase2 = vec![0.0; self.total];
        phase2[..n].copy_from_slice(&lp.objective);
        match self.run(&phase2) {
            Some(Step::Optimal) => {
                let x: Vec<f64> = self.x[..n]
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| v.clamp(lp.lower[j], lp.upper[j]))
                    .collect();
                let value = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
                LpOutcome::Optimal { x, value }
            }
            Some(Step::Unbounded) => LpOutcome::Unbounded,
            _ => LpOutcome::Infeasible,
        }
    }
}
