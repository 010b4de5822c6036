use crate::error::{Error, Result};

/// Exact binomial coefficient; exact in `u64` for every `n <= 62`.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 1..=k as u64 {
        // acc * (n - k + i) is always divisible by i at this point
        acc = acc * (n as u64 - k as u64 + i) / i;
    }
    acc
}

/// Shapley kernel weight of a coalition of size `s` among `m` players:
/// `(m - 1) / (C(m, s) * s * (m - s))`.
///
/// Empty and full coalitions have infinite weight and are rejected; the
/// regression treats them as hard constraints instead.
pub fn shapley_kernel_weight(m: usize, s: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::Config(format!(
            "kernel weight needs at least 2 players, got {m}"
        )));
    }
    if s == 0 || s >= m {
        return Err(Error::Domain(format!(
            "coalition size {s} has infinite kernel weight for {m} players"
        )));
    }
    // evaluate on the smaller side so weight(m, s) and weight(m, m - s) are bitwise equal
    let small = s.min(m - s);
    let denom = binomial(m, small) as f64 * small as f64 * (m - small) as f64;
    Ok((m - 1) as f64 / denom)
}
