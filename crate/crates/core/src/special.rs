//! Bessel functions of the first kind for the Chebyshev propagator.

/// `J_0(x) ..= J_n(x)` for real `x`, by Miller's backward recurrence
/// normalized with `J_0 + 2 sum J_2k = 1`.
pub fn bessel_j_sequence(n: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    if x.abs() < 1e-20 {
        out[0] = 1.0;
        if n >= 1 {
            out[1] = 0.5 * x;
        }
        return out;
    }
    let ax = x.abs();
    let start = {
        let m = n.max(ax.ceil() as usize);
        let m = m + 20 + (40.0 * m as f64).sqrt() as usize;
        m + (m & 1)
    };
    let mut next = 0.0f64;
    let mut cur = 1e-300f64;
    let mut norm = 0.0f64;
    let mut vals = vec![0.0; start + 1];
    vals[start] = cur;
    for k in (1..=start).rev() {
        let prev = 2.0 * k as f64 / ax * cur - next;
        next = cur;
        cur = prev;
        vals[k - 1] = cur;
        if cur.abs() > 1e200 {
            for v in vals[k - 1..].iter_mut() {
                *v *= 1e-200;
            }
            next *= 1e-200;
            cur *= 1e-200;
        }
    }
    for (k, v) in vals.iter().enumerate() {
        if k == 0 {
            norm += v;
        } else if k % 2 == 0 {
            norm += 2.0 * v;
        }
    }
    for k in 0..=n {
        let v = vals[k] / norm;
        out[k] = if x < 0.0 && k % 2 == 1 { -v } else { v };
    }
    out
}

/// Upper bound on `sum_{k > order} |J_k(x)|` from `|J_k(x)| <= (|x|/2)^k / k!`.
pub fn bessel_tail_bound(order: usize, x: f64) -> f64 {
    let half = x.abs() / 2.0;
    let k0 = order + 1;
    if half == 0.0 {
        return 0.0;
    }
    let ratio = half / (k0 as f64 + 1.0);
    if ratio >= 1.0 {
        return f64::INFINITY;
    }
    let mut log_term = k0 as f64 * half.ln();
    for k in 1..=k0 {
        log_term -= (k as f64).ln();
    }
    log_term.exp() / (1.0 - ratio)
}
