//! Dense linear solves for the Newton–Raphson correction.

/// Solve `A x = rhs` in place by LU with partial pivoting.
///
/// `a` is row-major `n × n` and is overwritten by its factors; `rhs` is
/// overwritten by the solution. Returns `None` when a pivot underflows
/// `1e-14` relative to the largest entry of `A`.
pub fn lu_solve(a: &mut [f64], rhs: &mut [f64]) -> Option<()> {
    let n = rhs.len();
    debug_assert_eq!(a.len(), n * n);
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    let tiny = scale * 1e-14;

    for k in 0..n {
        let mut piv = k;
        let mut best = a[k * n + k].abs();
        for r in k + 1..n {
            let v = a[r * n + k].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if !(best > tiny) {
            return None;
        }
        if piv != k {
            for c in 0..n {
                a.swap(k * n + c, piv * n + c);
            }
            rhs.swap(k, piv);
        }
        let d = a[k * n + k];
        for r in k + 1..n {
            let f = a[r * n + k] / d;
            if f == 0.0 {
                continue;
            }
            a[r * n + k] = f;
            for c in k + 1..n {
                a[r * n + c] -= f * a[k * n + c];
            }
            rhs[r] -= f * rhs[k];
        }
    }
    for k in (0..n).rev() {
        let mut s = rhs[k];
        for c in k + 1..n {
            s -= a[k * n + c] * rhs[c];
        }
        rhs[k] = s / a[k * n + k];
    }
    Some(())
}
