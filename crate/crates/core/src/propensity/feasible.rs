use std::sync::atomic::{AtomicU64, Ordering};

use super::projection::{
    capped_simplex_projection, isotonic_with_ties, lipschitz_box_projection, monotone_root,
    monotone_root_from,
};
use super::{bin_of, expit, hat_basis, index, BudgetInterval, Family, PropensityFn, Shape};
use crate::{Error, Result};

const ROOT_TOL: f64 = 1e-15;
const MEMBER_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
enum Kind {
    Constant,
    Monotone {
        order: Vec<usize>,
        group_starts: Vec<usize>,
    },
    Lipschitz {
        order: Vec<usize>,
        gaps: Vec<f64>,
    },
    Coefficients {
        /// Atom values at the points, one contiguous column of length `n` per atom.
        cols: Vec<f64>,
        m: usize,
        c: Vec<f64>,
    },
    Bins {
        bin_of: Vec<usize>,
        weight: Vec<f64>,
    },
}

/// The finite-dimensional feasible set `F_n` of one family at fixed points,
/// parametrised by a decision vector.
///
/// Decision vectors are the point values for monotone and Lipschitz families,
/// one scalar for the constant family, one value per bin for binned families
/// and the weight vector for parametric families. Projections are Euclidean
/// in the geometry of the point values (`L2(P_n)`), except for parametric
/// families which project in coefficient space.
#[derive(Debug)]
pub struct FeasibleSet {
    kind: Kind,
    family: Family,
    n: usize,
    dim: usize,
    points: Vec<f64>,
    budget: BudgetInterval,
    /// Last budget multiplier of the Lipschitz projection, used as a warm start.
    last_mu: AtomicU64,
}

impl Clone for FeasibleSet {
    fn clone(&self) -> Self {
        Self {
            kind: self.kind.clone(),
            family: self.family.clone(),
            n: self.n,
            dim: self.dim,
            points: self.points.clone(),
            budget: self.budget,
            last_mu: AtomicU64::new(self.last_mu.load(Ordering::Relaxed)),
        }
    }
}

fn sorted_order(xs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(a.cmp(&b)));
    order
}

impl FeasibleSet {
    /// `points` is row-major with `dim` columns.
    pub fn new(family: &Family, points: &[f64], dim: usize, budget: BudgetInterval) -> Result<Self> {
        BudgetInterval::new(budget.m_low, budget.m_high)?;
        if dim == 0 || points.len() % dim != 0 || points.is_empty() {
            return Err(Error::InvalidSpec("points must be a nonempty n x dim array".into()));
        }
        let n = points.len() / dim;
        let kind = match family {
            Family::Constant => Kind::Constant,
            Family::Monotone | Family::Lipschitz { .. } => {
                if dim != 1 {
                    return Err(Error::DimensionMismatch {
                        expected: 1,
                        got: dim,
                    });
                }
                let order = sorted_order(points);
                if let Family::Lipschitz { l } = family {
                    let gaps = order
                        .windows(2)
                        .map(|w| l * (points[w[1]] - points[w[0]]))
                        .collect();
                    Kind::Lipschitz { order, gaps }
                } else {
                    let mut group_starts = vec![0];
                    for i in 1..n {
                        if points[order[i]] != points[order[i - 1]] {
                            group_starts.push(i);
                        }
                    }
                    Kind::Monotone {
                        order,
                        group_starts,
                    }
                }
            }
            Family::ParametricSimplex { knots } => {
                let m = knots.len();
                let mut basis = Vec::with_capacity(n * m);
                for i in 0..n {
                    basis.extend(hat_basis(knots, index(&points[i * dim..(i + 1) * dim])));
                }
                Self::coefficient_kind(basis, n, m)
            }
            Family::ExpitHull { atoms } => {
                if atoms.is_empty() || atoms.iter().any(|a| a.len() != dim + 1) {
                    return Err(Error::DimensionMismatch {
                        expected: dim + 1,
                        got: atoms.first().map_or(0, Vec::len),
                    });
                }
                let m = atoms.len();
                let mut basis = Vec::with_capacity(n * m);
                for i in 0..n {
                    let x = &points[i * dim..(i + 1) * dim];
                    for a in atoms {
                        let t = a[0] + a[1..].iter().zip(x).map(|(c, xi)| c * xi).sum::<f64>();
                        basis.push(expit(t));
                    }
                }
                Self::coefficient_kind(basis, n, m)
            }
            Family::Binned { cuts } => {
                let nb = cuts.len() + 1;
                let bins: Vec<usize> = (0..n)
                    .map(|i| bin_of(cuts, index(&points[i * dim..(i + 1) * dim])))
                    .collect();
                let mut weight = vec![0.0; nb];
                for &b in &bins {
                    weight[b] += 1.0 / n as f64;
                }
                Kind::Bins {
                    bin_of: bins,
                    weight,
                }
            }
        };
        Ok(Self {
            kind,
            family: family.clone(),
            n,
            dim,
            points: points.to_vec(),
            budget,
            last_mu: AtomicU64::new(0f64.to_bits()),
        })
    }

    fn coefficient_kind(basis: Vec<f64>, n: usize, m: usize) -> Kind {
        let mut cols = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                cols[j * n + i] = basis[i * m + j];
            }
        }
        let c = cols.chunks(n).map(|col| col.iter().sum::<f64>() / n as f64).collect();
        Kind::Coefficients { cols, m, c }
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    pub fn budget(&self) -> BudgetInterval {
        self.budget
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn decision_dim(&self) -> usize {
        match &self.kind {
            Kind::Constant => 1,
            Kind::Monotone { .. } | Kind::Lipschitz { .. } => self.n,
            Kind::Coefficients { m, .. } => *m,
            Kind::Bins { weight, .. } => weight.len(),
        }
    }

    /// Point values `e(x_i)` implied by a decision vector.
    pub fn values(&self, d: &[f64]) -> Vec<f64> {
        match &self.kind {
            Kind::Constant => vec![d[0]; self.n],
            Kind::Monotone { .. } | Kind::Lipschitz { .. } => d.to_vec(),
            Kind::Coefficients { cols, .. } => {
                let mut out = vec![0.0; self.n];
                for (col, &w) in cols.chunks(self.n).zip(d) {
                    if w != 0.0 {
                        out.iter_mut().zip(col).for_each(|(o, a)| *o += w * a);
                    }
                }
                out
            }
            Kind::Bins { bin_of, .. } => bin_of.iter().map(|&b| d[b]).collect(),
        }
    }

    /// Chain rule: gradient in decision space from a gradient in point values.
    pub fn pullback(&self, g: &[f64]) -> Vec<f64> {
        match &self.kind {
            Kind::Constant => vec![g.iter().sum()],
            Kind::Monotone { .. } | Kind::Lipschitz { .. } => g.to_vec(),
            Kind::Coefficients { cols, .. } => cols.chunks(self.n).map(|col| fast_dot(col, g)).collect(),
            Kind::Bins { bin_of, weight } => {
                let mut out = vec![0.0; weight.len()];
                for (gi, &b) in g.iter().zip(bin_of) {
                    out[b] += gi;
                }
                out
            }
        }
    }

    /// Converts a decision-space gradient into the ascent direction of the
    /// projection geometry.
    pub fn precondition(&self, g: &[f64]) -> Vec<f64> {
        match &self.kind {
            Kind::Constant | Kind::Coefficients { .. } => g.to_vec(),
            Kind::Monotone { .. } | Kind::Lipschitz { .. } => {
                g.iter().map(|v| v * self.n as f64).collect()
            }
            Kind::Bins { weight, .. } => g
                .iter()
                .zip(weight)
                .map(|(v, w)| if *w > 0.0 { v / w } else { 0.0 })
                .collect(),
        }
    }

    /// Squared norm of a decision-space displacement in the projection geometry.
    pub fn metric_norm_sq(&self, v: &[f64]) -> f64 {
        match &self.kind {
            Kind::Constant | Kind::Coefficients { .. } => v.iter().map(|a| a * a).sum(),
            Kind::Monotone { .. } | Kind::Lipschitz { .. } => {
                v.iter().map(|a| a * a).sum::<f64>() / self.n as f64
            }
            Kind::Bins { weight, .. } => v.iter().zip(weight).map(|(a, w)| w * a * a).sum(),
        }
    }

    /// Gradient of [`FeasibleSet::mean`] in decision space.
    pub fn budget_normal(&self) -> Vec<f64> {
        match &self.kind {
            Kind::Constant => vec![1.0],
            Kind::Monotone { .. } | Kind::Lipschitz { .. } => vec![1.0 / self.n as f64; self.n],
            Kind::Coefficients { c, .. } => c.clone(),
            Kind::Bins { weight, .. } => weight.clone(),
        }
    }

    /// The budget bound that `d` attains within `tol`, if any.
    pub fn active_bound(&self, d: &[f64], tol: f64) -> Option<f64> {
        let m = self.mean(d);
        [self.budget.m_low, self.budget.m_high].into_iter().find(|b| (m - b).abs() <= tol)
    }

    /// `max <g, d'>` over decision vectors `d'` in the feasible set, for the
    /// families whose linear maximization is cheap (constant, binned and
    /// coefficient families). Concavity bounds the suboptimality of `d` by
    /// this value minus `<g, d>`.
    pub fn linear_max(&self, g: &[f64]) -> Option<f64> {
        let BudgetInterval { m_low, m_high } = self.budget;
        match &self.kind {
            Kind::Constant => {
                let (lo, hi) = (m_low.max(0.0), m_high.min(1.0));
                Some((g[0] * lo).max(g[0] * hi))
            }
            Kind::Coefficients { c, .. } => {
                // Vertices of {w >= 0, sum w <= 1} cut by the budget slab: simplex
                // vertices inside the slab and edge crossings of its two faces.
                let mut best = f64::NEG_INFINITY;
                let inside = |cj: f64| cj >= m_low - MEMBER_TOL && cj <= m_high + MEMBER_TOL;
                if inside(0.0) {
                    best = 0.0;
                }
                let faces = if m_low == m_high { vec![m_low] } else { vec![m_low, m_high] };
                for (j, (&cj, &gj)) in c.iter().zip(g).enumerate() {
                    if inside(cj) {
                        best = best.max(gj);
                    }
                    for &b in &faces {
                        if cj > 0.0 && b > 0.0 && b <= cj {
                            best = best.max(gj * b / cj);
                        }
                        for (&ci, &gi) in c[..j].iter().zip(g) {
                            if ci == cj {
                                continue;
                            }
                            let t = (b - cj) / (ci - cj);
                            if (0.0..=1.0).contains(&t) {
                                best = best.max(t * gi + (1.0 - t) * gj);
                            }
                        }
                    }
                }
                best.is_finite().then_some(best)
            }
            _ => None,
        }
    }

    /// Mean of the point values.
    pub fn mean(&self, d: &[f64]) -> f64 {
        match &self.kind {
            Kind::Constant => d[0],
            Kind::Monotone { .. } | Kind::Lipschitz { .. } => d.iter().sum::<f64>() / self.n as f64,
            Kind::Coefficients { c, .. } => c.iter().zip(d).map(|(a, b)| a * b).sum(),
            Kind::Bins { weight, .. } => weight.iter().zip(d).map(|(a, b)| a * b).sum(),
        }
    }

    fn gather(order: &[usize], y: &[f64]) -> Vec<f64> {
        order.iter().map(|&i| y[i]).collect()
    }

    fn scatter(order: &[usize], sorted: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; sorted.len()];
        for (k, &i) in order.iter().enumerate() {
            out[i] = sorted[k];
        }
        out
    }

    /// Euclidean projection of a decision vector onto `F_n`.
    pub fn project(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.decision_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.decision_dim(),
                got: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("projection input is not finite".into()));
        }
        let BudgetInterval { m_low, m_high } = self.budget;
        // Project with a multiplier shift `mu` along the budget direction, then
        // search for the multiplier that makes the violated bound active.
        let solve = |h: &dyn Fn(f64) -> f64, scale: f64| -> Result<Option<f64>> {
            let h0 = h(0.0);
            let target = if h0 < m_low {
                m_low
            } else if h0 > m_high {
                m_high
            } else {
                return Ok(None);
            };
            monotone_root(h, h0, target, scale, ROOT_TOL).map(Some)
        };
        match &self.kind {
            Kind::Constant => {
                let lo = m_low.max(0.0);
                let hi = m_high.min(1.0);
                Ok(vec![y[0].clamp(lo, hi)])
            }
            Kind::Monotone {
                order,
                group_starts,
            } => {
                let iso = isotonic_with_ties(&Self::gather(order, y), group_starts);
                let nf = self.n as f64;
                let h = |mu: f64| iso.iter().map(|v| (v - mu).clamp(0.0, 1.0)).sum::<f64>() / nf;
                let mu = solve(&h, 1.0)?.unwrap_or(0.0);
                let out: Vec<f64> = iso.iter().map(|v| (v - mu).clamp(0.0, 1.0)).collect();
                Ok(Self::scatter(order, &out))
            }
            Kind::Lipschitz { order, gaps } => {
                let ys = Self::gather(order, y);
                let nf = self.n as f64;
                let proj = |mu: f64| {
                    let shifted: Vec<f64> = ys.iter().map(|v| v - mu).collect();
                    lipschitz_box_projection(&shifted, gaps)
                };
                let base = proj(0.0);
                let h0 = base.iter().sum::<f64>() / nf;
                let out = if h0 < m_low || h0 > m_high {
                    let h = |mu: f64| proj(mu).iter().sum::<f64>() / nf;
                    let target = if h0 < m_low { m_low } else { m_high };
                    let guess = f64::from_bits(self.last_mu.load(Ordering::Relaxed));
                    let mu = if guess != 0.0 && (guess > 0.0) == (h0 > m_high) {
                        let hg = h(guess);
                        monotone_root_from(h, guess, hg, target, 1e-3, ROOT_TOL)?
                    } else {
                        monotone_root(h, h0, target, 1.0, ROOT_TOL)?
                    };
                    self.last_mu.store(mu.to_bits(), Ordering::Relaxed);
                    proj(mu)
                } else {
                    base
                };
                Ok(Self::scatter(order, &out))
            }
            Kind::Coefficients { c, .. } => {
                let shifted = |mu: f64| -> Vec<f64> {
                    let v: Vec<f64> = y.iter().zip(c).map(|(a, cj)| a - mu * cj).collect();
                    capped_simplex_projection(&v)
                };
                let h = |mu: f64| shifted(mu).iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
                let cmax = c.iter().copied().fold(0.0, f64::max);
                if m_low > cmax + ROOT_TOL {
                    return Err(Error::Infeasible(format!(
                        "budget lower bound {m_low} exceeds the largest achievable mean {cmax}"
                    )));
                }
                let scale = 1.0 / c.iter().map(|v| v * v).sum::<f64>().max(1e-300);
                let mu = solve(&h, scale)?.unwrap_or(0.0);
                Ok(shifted(mu))
            }
            Kind::Bins { weight, .. } => {
                let h = |mu: f64| {
                    y.iter()
                        .zip(weight)
                        .map(|(v, w)| w * (v - mu).clamp(0.0, 1.0))
                        .sum::<f64>()
                };
                let mu = solve(&h, 1.0)?.unwrap_or(0.0);
                Ok(y.iter().map(|v| (v - mu).clamp(0.0, 1.0)).collect())
            }
        }
    }

    /// Membership test for family constraints and budget.
    pub fn contains(&self, d: &[f64], tol: f64) -> bool {
        if d.len() != self.decision_dim() || d.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let in_box = |v: &f64| *v >= -tol && *v <= 1.0 + tol;
        let family_ok = match &self.kind {
            Kind::Constant | Kind::Bins { .. } => d.iter().all(in_box),
            Kind::Monotone {
                order,
                group_starts,
            } => {
                let s = Self::gather(order, d);
                let tie_ok = group_starts.iter().enumerate().all(|(g, &st)| {
                    let e = group_starts.get(g + 1).copied().unwrap_or(self.n);
                    s[st..e].iter().all(|v| (v - s[st]).abs() <= tol)
                });
                s.iter().all(in_box) && s.windows(2).all(|w| w[1] >= w[0] - tol) && tie_ok
            }
            Kind::Lipschitz { order, gaps } => {
                let s = Self::gather(order, d);
                s.iter().all(in_box)
                    && s.windows(2).zip(gaps).all(|(w, g)| (w[1] - w[0]).abs() <= g + tol)
            }
            Kind::Coefficients { .. } => {
                d.iter().all(|v| *v >= -tol) && d.iter().sum::<f64>() <= 1.0 + tol
            }
        };
        let mean = self.mean(d);
        family_ok && mean >= self.budget.m_low - tol && mean <= self.budget.m_high + tol
    }

    /// Recovers the decision vector of a family member from its point values,
    /// ignoring the budget.
    pub fn decision_from_values(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: values.len(),
            });
        }
        let mut unbudgeted = self.clone();
        unbudgeted.budget = BudgetInterval::unconstrained();
        let d = match &self.kind {
            Kind::Constant => {
                let v = values[0];
                if values.iter().any(|x| (x - v).abs() > MEMBER_TOL) {
                    return Err(Error::NotInFamily("values are not constant".into()));
                }
                vec![values.iter().sum::<f64>() / self.n as f64]
            }
            Kind::Monotone { .. } | Kind::Lipschitz { .. } => values.to_vec(),
            Kind::Bins { bin_of, weight } => {
                let mut d = vec![f64::NAN; weight.len()];
                for (&b, &v) in bin_of.iter().zip(values) {
                    if d[b].is_nan() {
                        d[b] = v;
                    } else if (d[b] - v).abs() > MEMBER_TOL {
                        return Err(Error::NotInFamily("values vary within a bin".into()));
                    }
                }
                fill_empty_bins(&mut d);
                d
            }
            Kind::Coefficients { .. } => {
                return Err(Error::InvalidSpec(
                    "parametric families are built from coefficients".into(),
                ))
            }
        };
        if !unbudgeted.contains(&d, MEMBER_TOL) {
            return Err(Error::NotInFamily(format!(
                "values violate the {} constraints",
                family_label(&self.family)
            )));
        }
        Ok(d)
    }

    /// Family member represented by a decision vector.
    pub fn to_propensity(&self, d: &[f64]) -> Result<PropensityFn> {
        if d.len() != self.decision_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.decision_dim(),
                got: d.len(),
            });
        }
        let clamp01 = |v: f64| v.clamp(0.0, 1.0);
        let shape = match (&self.kind, &self.family) {
            (Kind::Constant, _) => Shape::Constant {
                value: clamp01(d[0]),
            },
            (Kind::Monotone { order, .. }, _) | (Kind::Lipschitz { order, .. }, _) => {
                let mut knots_x: Vec<f64> = Vec::with_capacity(self.n);
                let mut knots_y: Vec<f64> = Vec::with_capacity(self.n);
                let mut count = 0usize;
                for &i in order {
                    let x = self.points[i];
                    if knots_x.last() == Some(&x) {
                        count += 1;
                        let last = knots_y.last_mut().expect("nonempty");
                        *last += (d[i] - *last) / count as f64;
                    } else {
                        knots_x.push(x);
                        knots_y.push(clamp01(d[i]));
                        count = 1;
                    }
                }
                match self.family {
                    Family::Lipschitz { l } => Shape::Lipschitz {
                        l,
                        knots_x,
                        knots_y,
                    },
                    _ => {
                        for i in 1..knots_y.len() {
                            knots_y[i] = knots_y[i].max(knots_y[i - 1]);
                        }
                        Shape::Monotone { knots_x, knots_y }
                    }
                }
            }
            (Kind::Coefficients { .. }, Family::ParametricSimplex { knots }) => Shape::ParametricSimplex {
                knots: knots.clone(),
                weights: d.iter().map(|w| w.max(0.0)).collect(),
            },
            (Kind::Coefficients { .. }, Family::ExpitHull { atoms }) => {
                let (mut kept_atoms, mut kept_w) = (Vec::new(), Vec::new());
                for (a, w) in atoms.iter().zip(d) {
                    if *w > 0.0 {
                        kept_atoms.push(a.clone());
                        kept_w.push(*w);
                    }
                }
                if kept_atoms.is_empty() {
                    kept_atoms.push(vec![0.0; self.dim + 1]);
                    kept_w.push(0.0);
                }
                Shape::ExpitHull {
                    atoms: kept_atoms,
                    weights: kept_w,
                }
            }
            (Kind::Bins { .. }, Family::Binned { cuts }) => {
                let mut values: Vec<f64> = d.iter().map(|v| clamp01(*v)).collect();
                fill_empty_bins(&mut values);
                Shape::Binned {
                    cuts: cuts.clone(),
                    values,
                }
            }
            _ => unreachable!("set kind always matches its family"),
        };
        Ok(PropensityFn {
            shape,
            clip_gamma: 0.0,
        })
    }

    /// Feasible starting point: the constant `clamp(mid budget, gamma, 1 - gamma)`
    /// where the family can represent it, projected onto `F_n`.
    pub fn initial(&self, gamma: f64) -> Result<Vec<f64>> {
        let c0 = self.budget.midpoint().clamp(gamma, 1.0 - gamma);
        let start = match &self.kind {
            Kind::Constant => vec![c0],
            Kind::Monotone { .. } | Kind::Lipschitz { .. } => vec![c0; self.n],
            Kind::Bins { weight, .. } => vec![c0; weight.len()],
            Kind::Coefficients { cols, m, .. } => {
                // Use the flattest atom whose values are large enough to scale down to c0.
                let mut best: Option<(usize, f64)> = None;
                for j in 0..*m {
                    let col = &cols[j * self.n..(j + 1) * self.n];
                    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mean = col.iter().sum::<f64>() / self.n as f64;
                    if mean >= c0 && lo > 0.0 {
                        let spread = (hi - lo) / mean;
                        if best.is_none_or(|(_, s)| spread < s) {
                            best = Some((j, spread));
                        }
                    }
                }
                let mut w = vec![0.0; *m];
                match best {
                    Some((j, _)) => {
                        let mean = cols[j * self.n..(j + 1) * self.n].iter().sum::<f64>() / self.n as f64;
                        w[j] = c0 / mean;
                    }
                    None => w.iter_mut().for_each(|v| *v = 1.0 / *m as f64),
                }
                w
            }
        };
        self.project(&start)
    }
}

fn fast_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn fill_empty_bins(d: &mut [f64]) {
    let first = d.iter().copied().find(|v| !v.is_nan()).unwrap_or(0.0);
    let mut last = first;
    for v in d.iter_mut() {
        if v.is_nan() {
            *v = last;
        } else {
            last = *v;
        }
    }
}

fn family_label(f: &Family) -> &'static str {
    match f {
        Family::Constant => "constant",
        Family::Monotone => "monotone",
        Family::Lipschitz { .. } => "Lipschitz",
        Family::ParametricSimplex { .. } => "parametric simplex",
        Family::ExpitHull { .. } => "expit hull",
        Family::Binned { .. } => "binned",
    }
}

/// Projects point values (or coefficients, for parametric families) onto
/// `F_n` of `family` at `points` (row-major, `dim` columns).
pub fn feasible_set_projection(
    family: &Family,
    points: &[f64],
    dim: usize,
    candidate: &[f64],
    budget: BudgetInterval,
) -> Result<Vec<f64>> {
    let set = FeasibleSet::new(family, points, dim, budget)?;
    match set.kind {
        Kind::Coefficients { .. } => set.project(candidate),
        Kind::Monotone { .. } | Kind::Lipschitz { .. } => set.project(candidate),
        Kind::Constant | Kind::Bins { .. } => {
            if candidate.len() != set.n {
                return Err(Error::DimensionMismatch {
                    expected: set.n,
                    got: candidate.len(),
                });
            }
            // Projection of point values onto piecewise-constant vectors:
            // average within cells, then project with cell weights.
            let mut sums = vec![0.0; set.decision_dim()];
            let mut counts = vec![0usize; set.decision_dim()];
            for (i, v) in candidate.iter().enumerate() {
                let b = match &set.kind {
                    Kind::Bins { bin_of, .. } => bin_of[i],
                    _ => 0,
                };
                sums[b] += v;
                counts[b] += 1;
            }
            let means: Vec<f64> = sums
                .iter()
                .zip(&counts)
                .map(|(s, c)| if *c > 0 { s / *c as f64 } else { 0.0 })
                .collect();
            Ok(set.values(&set.project(&means)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone_examples() {
        let out = feasible_set_projection(
            &Family::Monotone,
            &[0.0, 1.0],
            1,
            &[0.9, 0.1],
            BudgetInterval::unconstrained(),
        )
        .unwrap();
        assert_eq!(out, vec![0.5, 0.5]);
        let keep = [0.1, 0.2, 0.4];
        let out = feasible_set_projection(
            &Family::Monotone,
            &[0.0, 1.0, 2.0],
            1,
            &keep,
            BudgetInterval::new(0.1, 0.5).unwrap(),
        )
        .unwrap();
        assert_eq!(out, keep.to_vec());
    }

    #[test]
    fn lipschitz_example() {
        let out = feasible_set_projection(
            &Family::Lipschitz { l: 1.0 },
            &[0.0, 0.1],
            1,
            &[0.0, 0.9],
            BudgetInterval::unconstrained(),
        )
        .unwrap();
        assert!((out[1] - out[0]).abs() <= 0.1 + 1e-8);
    }

    #[test]
    fn equality_budget_is_met() {
        let pts: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let cand: Vec<f64> = (0..50).map(|i| (i as f64 * 0.11).cos()).collect();
        for fam in [Family::Monotone, Family::Lipschitz { l: 0.5 }] {
            let set = FeasibleSet::new(&fam, &pts, 1, BudgetInterval::equality(0.2).unwrap()).unwrap();
            let p = set.project(&cand).unwrap();
            assert!((set.mean(&p) - 0.2).abs() < 1e-12);
            assert!(set.contains(&p, 1e-10));
        }
    }

    #[test]
    fn infeasible_budget_is_reported() {
        let fam = Family::ExpitHull {
            atoms: vec![vec![-2.0, 0.0]],
        };
        let set = FeasibleSet::new(&fam, &[0.0, 1.0], 1, BudgetInterval::equality(0.5).unwrap()).unwrap();
        assert!(matches!(set.project(&[0.3]), Err(Error::Infeasible(_))));
    }

    #[test]
    fn interpolation_reproduces_knots() {
        let pts = [0.3, -1.0, 0.8, 0.31];
        let vals = [0.4, 0.1, 0.6, 0.405];
        for fam in [Family::Monotone, Family::Lipschitz { l: 1.0 }] {
            let e = PropensityFn::from_finite_values(&fam, &pts, &vals).unwrap();
            for (x, v) in pts.iter().zip(vals) {
                assert!((e.evaluate(&[*x]).unwrap() - v).abs() < 1e-12);
            }
        }
        assert!(PropensityFn::from_finite_values(&Family::Monotone, &[0.0, 1.0], &[0.5, 0.4]).is_err());
        let c = PropensityFn::from_finite_values(&Family::Constant, &[1.0, 2.0], &[0.2, 0.2]).unwrap();
        assert_eq!(c.evaluate(&[9.0]).unwrap(), 0.2);
    }

    #[test]
    fn initial_points_are_feasible() {
        let pts: Vec<f64> = (0..20).map(|i| i as f64 / 10.0 - 1.0).collect();
        let atoms = super::super::expit_hull_atoms(2, &[-2.0, -1.0, 0.0, 1.0, 2.0], 2);
        let budget = BudgetInterval::equality(0.2).unwrap();
        for fam in [
            Family::Constant,
            Family::Monotone,
            Family::Lipschitz { l: 1.0 },
            Family::ExpitHull { atoms },
            Family::ParametricSimplex {
                knots: vec![-1.0, 0.0, 1.0],
            },
            Family::Binned {
                cuts: vec![-0.5, 0.0, 0.5],
            },
        ] {
            let set = FeasibleSet::new(&fam, &pts, 1, budget).unwrap();
            let d = set.initial(0.01).unwrap();
            assert!(set.contains(&d, 1e-10), "{fam:?}");
        }
    }
}
