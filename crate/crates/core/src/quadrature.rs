//! Trapezoidal rules on the ordered simplex `t₀ ≤ t₂ ≤ t₁ ≤ t`.

use num_complex::Complex64;

/// Endpoint-halved trapezoid weight of node `i` on an `n`-step grid (without `h`).
pub fn trapezoid_weight(i: usize, n: usize) -> f64 {
    if i == 0 || i == n {
        0.5
    } else {
        1.0
    }
}

/// Weight of the node pair `(i, j)`, `i ≥ j`, in the simplex rule with step `h`.
/// Diagonal nodes carry half the product weight; the rule integrates
/// constants exactly.
pub fn simplex_weight(i: usize, j: usize, n: usize, h: f64) -> f64 {
    debug_assert!(i >= j);
    let w = h * h * trapezoid_weight(i, n) * trapezoid_weight(j, n);
    if i == j {
        0.5 * w
    } else {
        w
    }
}

/// `∫_{t0}^{t} dt₁ ∫_{t0}^{t₁} dt₂ f(i, j)` sampled at grid indices.
pub fn simplex_trapezoid(n: usize, h: f64, f: impl Fn(usize, usize) -> Complex64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..=n {
        let mut col = Complex64::new(0.0, 0.0);
        for i in j..=n {
            col += f(i, j) * simplex_weight(i, j, n, h);
        }
        acc += col;
    }
    acc
}

/// The simplex rule on every leading sub-grid: entry `k` integrates over
/// `[t₀, t₀ + k h]` with `k` steps (entry 0 is zero).
///
/// `rows[i]` must hold `f(i, j)` for `j = 0..=i`.
pub fn simplex_trapezoid_cumulative(rows: &[Vec<Complex64>], h: f64) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(rows.len());
    let mut interior = Complex64::new(0.0, 0.0);
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), k + 1, "row {k} must hold {} values", k + 1);
        if k == 0 {
            out.push(Complex64::new(0.0, 0.0));
            let g0 = row[0] * 0.25;
            interior += g0 * 0.5;
            continue;
        }
        let mut s = row[0] * 0.5;
        for v in &row[1..k] {
            s += v;
        }
        out.push((interior + (s + row[k] * 0.25) * 0.5) * (h * h));
        interior += s + row[k] * 0.5;
    }
    out
}

/// One-dimensional trapezoid over uniformly spaced samples.
pub fn trapezoid(values: &[Complex64], h: f64) -> Complex64 {
    let n = values.len().saturating_sub(1);
    values
        .iter()
        .enumerate()
        .map(|(i, v)| v * trapezoid_weight(i, n))
        .sum::<Complex64>()
        * h
}

/// Richardson error estimate `|T(h) − T(2h)| / 3` for a second-order rule.
pub fn richardson_error(fine: Complex64, coarse: Complex64) -> f64 {
    (fine - coarse).norm() / 3.0
}

/// Second-order Richardson extrapolation `T(h) + (T(h) − T(2h))/3`.
pub fn richardson_extrapolate(fine: Complex64, coarse: Complex64) -> Complex64 {
    fine + (fine - coarse) / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_are_exact() {
        let n = 17;
        let t = 3.4;
        let v = simplex_trapezoid(n, t / n as f64, |_, _| Complex64::new(2.0, 0.0));
        assert!((v.re - t * t).abs() < 1e-13);
    }

    #[test]
    fn symmetric_linear_functions_are_exact() {
        // ∫∫ (t₁ + t₂) over the simplex of side T is T³/2.
        let n = 40;
        let t = 2.0;
        let h = t / n as f64;
        let v = simplex_trapezoid(n, h, |i, j| Complex64::new((i + j) as f64 * h, 0.0));
        assert!((v.re - t.powi(3) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn cumulative_rule_matches_direct_sums() {
        let f = |i: usize, j: usize| {
            Complex64::new((0.3 * i as f64).sin() + 0.1 * j as f64, 0.2 * j as f64)
        };
        let rows: Vec<Vec<Complex64>> = (0..=12)
            .map(|i| (0..=i).map(|j| f(i, j)).collect())
            .collect();
        let h = 0.37;
        let cum = simplex_trapezoid_cumulative(&rows, h);
        assert_eq!(cum[0], Complex64::new(0.0, 0.0));
        for (k, c) in cum.iter().enumerate().skip(1) {
            let direct = simplex_trapezoid(k, h, f);
            assert!((c - direct).norm() < 1e-13, "k = {k}");
        }
    }

    #[test]
    fn second_order_convergence() {
        let exact = {
            // ∫₀¹ dt₁ ∫₀^{t₁} dt₂ e^{t₁+t₂} = (e − 1)² / 2
            let e = std::f64::consts::E;
            (e - 1.0).powi(2) / 2.0
        };
        let eval = |n: usize| {
            let h = 1.0 / n as f64;
            simplex_trapezoid(n, h, |i, j| Complex64::new(((i + j) as f64 * h).exp(), 0.0)).re
        };
        let e1 = (eval(32) - exact).abs();
        let e2 = (eval(64) - exact).abs();
        assert!(e1 / e2 > 3.5);
        let r =
            richardson_extrapolate(Complex64::new(eval(64), 0.0), Complex64::new(eval(32), 0.0));
        assert!((r.re - exact).abs() < e2 / 20.0);
    }
}
