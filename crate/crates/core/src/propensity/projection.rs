//! Exact Euclidean projections used by the feasible sets.

use crate::{Error, Result};

/// Weighted isotonic (nondecreasing) regression by pool-adjacent-violators.
pub fn pava(y: &[f64], w: &[f64]) -> Vec<f64> {
    debug_assert_eq!(y.len(), w.len());
    // Blocks as (weighted mean, total weight, length).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (&yi, &wi) in y.iter().zip(w) {
        blocks.push((yi, wi, 1));
        while blocks.len() >= 2 {
            let (m2, w2, l2) = blocks[blocks.len() - 1];
            let (m1, w1, l1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            let wt = w1 + w2;
            blocks.push(((m1 * w1 + m2 * w2) / wt, wt, l1 + l2));
        }
    }
    let mut out = Vec::with_capacity(y.len());
    for (m, _, l) in blocks {
        out.extend(std::iter::repeat_n(m, l));
    }
    out
}

/// Isotonic regression of sorted values where `group_starts` marks runs of
/// tied covariates that must share one value. Returns sorted-order values.
pub fn isotonic_with_ties(y_sorted: &[f64], group_starts: &[usize]) -> Vec<f64> {
    let n = y_sorted.len();
    let mut means = Vec::with_capacity(group_starts.len());
    let mut weights = Vec::with_capacity(group_starts.len());
    for (g, &s) in group_starts.iter().enumerate() {
        let e = group_starts.get(g + 1).copied().unwrap_or(n);
        let sum: f64 = y_sorted[s..e].iter().sum();
        means.push(sum / (e - s) as f64);
        weights.push((e - s) as f64);
    }
    let fitted = pava(&means, &weights);
    let mut out = Vec::with_capacity(n);
    for (g, &s) in group_starts.iter().enumerate() {
        let e = group_starts.get(g + 1).copied().unwrap_or(n);
        out.extend(std::iter::repeat_n(fitted[g], e - s));
    }
    out
}

/// Breakpoint of a piecewise-linear nondecreasing function: crossing it from
/// left to right adds `ds` to the slope and `dv` to the value.
#[derive(Debug, Clone, Copy)]
struct Break {
    raw: f64,
    ds: f64,
    dv: f64,
}

/// Derivative of the DP value function on `[0, 1]`, stored around a cursor
/// with lazily shifted breakpoint deques on each side.
struct Derivative {
    m: f64,
    v_left: f64,
    v_right: f64,
    s_left: f64,
    s_right: f64,
    /// Back is nearest to the cursor.
    left: std::collections::VecDeque<Break>,
    right: std::collections::VecDeque<Break>,
    off_left: f64,
    off_right: f64,
}

impl Derivative {
    fn new() -> Self {
        Self {
            m: 0.0,
            v_left: 0.0,
            v_right: 0.0,
            s_left: 0.0,
            s_right: 0.0,
            left: Default::default(),
            right: Default::default(),
            off_left: 0.0,
            off_right: 0.0,
        }
    }

    fn add_quadratic(&mut self, y: f64) {
        let shift = self.m - y;
        self.v_left += shift;
        self.v_right += shift;
        self.s_left += 1.0;
        self.s_right += 1.0;
    }

    /// Jump of the derivative at the cursor as a breakpoint.
    fn cursor_break(&self) -> Option<(f64, f64)> {
        let ds = self.s_right - self.s_left;
        let dv = self.v_right - self.v_left;
        (ds != 0.0 || dv != 0.0).then_some((ds, dv))
    }

    fn leave_rightwards(&mut self) {
        if let Some((ds, dv)) = self.cursor_break() {
            self.left.push_back(Break {
                raw: self.m - self.off_left,
                ds,
                dv,
            });
        }
    }

    fn leave_leftwards(&mut self) {
        if let Some((ds, dv)) = self.cursor_break() {
            self.right.push_back(Break {
                raw: self.m - self.off_right,
                ds,
                dv,
            });
        }
    }

    /// Moves the cursor to the minimiser of the primitive. A jump of the
    /// derivative at the cursor lives in `v_left`/`v_right` and is pushed onto
    /// a deque only when the cursor moves away from it.
    fn settle(&mut self) -> f64 {
        if self.v_right < 0.0 {
            loop {
                let next = self
                    .right
                    .back()
                    .map(|b| b.raw + self.off_right)
                    .filter(|p| *p < 1.0)
                    .unwrap_or(1.0);
                let at_next = self.v_right + self.s_right * (next - self.m);
                if at_next >= 0.0 {
                    let root = (self.m - self.v_right / self.s_right).clamp(self.m, next);
                    if root > self.m {
                        self.leave_rightwards();
                        self.m = root;
                        self.s_left = self.s_right;
                        self.v_left = 0.0;
                    }
                    self.v_right = 0.0;
                    break;
                }
                self.leave_rightwards();
                self.m = next;
                self.v_left = at_next;
                self.s_left = self.s_right;
                self.v_right = at_next;
                match self.right.back().copied().filter(|b| b.raw + self.off_right < 1.0) {
                    Some(b) => {
                        self.right.pop_back();
                        self.v_right += b.dv;
                        self.s_right += b.ds;
                        if self.v_right >= 0.0 {
                            break;
                        }
                    }
                    None => break,
                }
            }
        } else if self.v_left > 0.0 {
            loop {
                let next = self
                    .left
                    .back()
                    .map(|b| b.raw + self.off_left)
                    .filter(|p| *p > 0.0)
                    .unwrap_or(0.0);
                let at_next = self.v_left + self.s_left * (next - self.m);
                if at_next <= 0.0 {
                    let root = (self.m - self.v_left / self.s_left).clamp(next, self.m);
                    if root < self.m {
                        self.leave_leftwards();
                        self.m = root;
                        self.s_right = self.s_left;
                        self.v_right = 0.0;
                    }
                    self.v_left = 0.0;
                    break;
                }
                self.leave_leftwards();
                self.m = next;
                self.v_right = at_next;
                self.s_right = self.s_left;
                self.v_left = at_next;
                match self.left.back().copied().filter(|b| b.raw + self.off_left > 0.0) {
                    Some(b) => {
                        self.left.pop_back();
                        self.v_left -= b.dv;
                        self.s_left -= b.ds;
                        if self.v_left <= 0.0 {
                            break;
                        }
                    }
                    None => break,
                }
            }
        }
        self.m
    }

    /// Replaces the function by its infimal convolution with the indicator of
    /// `[-delta, delta]`: the left part moves left, the right part moves right
    /// and a zero plateau fills the gap.
    fn erode(&mut self, delta: f64) {
        self.off_left -= delta;
        self.off_right += delta;
        let m = self.m;
        self.left.push_back(Break {
            raw: m - delta - self.off_left,
            ds: -self.s_left,
            dv: -self.v_left,
        });
        self.right.push_back(Break {
            raw: m + delta - self.off_right,
            ds: self.s_right,
            dv: self.v_right,
        });
        self.v_left = 0.0;
        self.v_right = 0.0;
        self.s_left = 0.0;
        self.s_right = 0.0;
        while self.left.front().is_some_and(|b| b.raw + self.off_left <= 0.0) {
            self.left.pop_front();
        }
        while self.right.front().is_some_and(|b| b.raw + self.off_right >= 1.0) {
            self.right.pop_front();
        }
    }
}

/// Projection of sorted-order values onto
/// `{e in [0,1]^n : |e[i+1] - e[i]| <= gaps[i]}`.
///
/// Dynamic programming over the derivative of the convex value function,
/// which stays piecewise linear in the free coordinate.
pub fn lipschitz_box_projection(y: &[f64], gaps: &[f64]) -> Vec<f64> {
    let n = y.len();
    if n == 0 {
        return Vec::new();
    }
    debug_assert_eq!(gaps.len(), n - 1);
    let mut minimisers = Vec::with_capacity(n);
    let mut f = Derivative::new();
    for i in 0..n {
        if i > 0 && gaps[i - 1] > 0.0 {
            f.erode(gaps[i - 1]);
        }
        f.add_quadratic(y[i]);
        minimisers.push(f.settle());
    }
    let mut x = vec![0.0; n];
    x[n - 1] = minimisers[n - 1];
    for i in (0..n - 1).rev() {
        let d = gaps[i];
        x[i] = minimisers[i].clamp(x[i + 1] - d, x[i + 1] + d);
    }
    x
}

/// Projection onto the probability simplex scaled to total `radius`.
pub fn simplex_projection(y: &[f64], radius: f64) -> Vec<f64> {
    let mut u: Vec<f64> = y.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - radius) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// Projection onto `{w >= 0, sum w <= 1}`.
pub fn capped_simplex_projection(y: &[f64]) -> Vec<f64> {
    let pos: Vec<f64> = y.iter().map(|v| v.max(0.0)).collect();
    if pos.iter().sum::<f64>() <= 1.0 {
        pos
    } else {
        simplex_projection(y, 1.0)
    }
}

/// Finds `mu` with `h(mu) = target` for a nonincreasing, continuous `h`.
///
/// `h0 = h(0)` must already be known. `scale` sets the initial bracket width.
pub fn monotone_root(
    h: impl FnMut(f64) -> f64,
    h0: f64,
    target: f64,
    scale: f64,
    tol: f64,
) -> Result<f64> {
    monotone_root_from(h, 0.0, h0, target, scale, tol)
}

/// As [`monotone_root`], starting the bracket search at `start` where
/// `h(start) = h_start`.
pub fn monotone_root_from(
    mut h: impl FnMut(f64) -> f64,
    start: f64,
    h_start: f64,
    target: f64,
    scale: f64,
    tol: f64,
) -> Result<f64> {
    let g0 = h_start - target;
    if g0.abs() <= tol {
        return Ok(start);
    }
    // Bracket: a < b with g(a) >= 0 >= g(b).
    let (mut a, mut ga, mut b, mut gb);
    let mut step = scale.max(1e-12);
    if g0 > 0.0 {
        a = start;
        ga = g0;
        loop {
            let gs = h(start + step) - target;
            if gs <= 0.0 {
                b = start + step;
                gb = gs;
                break;
            }
            a = start + step;
            ga = gs;
            step *= 2.0;
            if step > 1e15 {
                return Err(Error::Infeasible("budget lower bound cannot be reached".into()));
            }
        }
    } else {
        b = start;
        gb = g0;
        loop {
            let gs = h(start - step) - target;
            if gs >= 0.0 {
                a = start - step;
                ga = gs;
                break;
            }
            b = start - step;
            gb = gs;
            step *= 2.0;
            if step > 1e15 {
                return Err(Error::Infeasible("budget upper bound cannot be reached".into()));
            }
        }
    }
    if ga.abs() <= tol {
        return Ok(a);
    }
    if gb.abs() <= tol {
        return Ok(b);
    }
    // Illinois regula falsi with bisection safeguard.
    let mut side = 0i8;
    for _ in 0..300 {
        let width = b - a;
        let mut c = if ga - gb > 0.0 { a + ga * width / (ga - gb) } else { 0.5 * (a + b) };
        if !(c > a && c < b) {
            c = 0.5 * (a + b);
        }
        let gc = h(c) - target;
        if gc.abs() <= tol || width <= 1e-15 * (1.0 + a.abs().max(b.abs())) {
            return Ok(c);
        }
        if gc > 0.0 {
            a = c;
            ga = gc;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        } else {
            b = c;
            gb = gc;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        }
    }
    Ok(if ga.abs() < gb.abs() { a } else { b })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pava_averages_violations() {
        assert_eq!(pava(&[0.9, 0.1], &[1.0, 1.0]), vec![0.5, 0.5]);
        assert_eq!(pava(&[1.0, 3.0, 2.0, 4.0], &[1.0; 4]), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn ties_share_value() {
        let out = isotonic_with_ties(&[0.2, 0.4, 0.1], &[0, 2]);
        for v in out {
            assert!((v - 0.7 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn lipschitz_dp_beats_naive_clipping() {
        let out = lipschitz_box_projection(&[-1.0, 0.5], &[0.1]);
        assert!((out[0] - 0.0).abs() < 1e-12);
        assert!((out[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn lipschitz_two_point_example() {
        let out = lipschitz_box_projection(&[0.0, 0.9], &[0.1]);
        assert!((out[0] - 0.4).abs() < 1e-12);
        assert!((out[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn simplex_cases() {
        assert_eq!(capped_simplex_projection(&[0.2, -1.0, 0.3]), vec![0.2, 0.0, 0.3]);
        let p = capped_simplex_projection(&[1.0, 1.0]);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn root_of_piecewise_linear() {
        let h = |mu: f64| (0.7 - mu).clamp(0.0, 1.0) * 0.5 + (0.2 - mu).clamp(0.0, 1.0) * 0.5;
        let mu = monotone_root(h, h(0.0), 0.2, 1.0, 1e-14).unwrap();
        assert!((h(mu) - 0.2).abs() < 1e-14);
        assert!(monotone_root(h, h(0.0), 1.5, 1.0, 1e-14).is_err());
    }
}
