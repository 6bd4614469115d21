/// Trailing moving average; the first `window − 1` points average the
/// available prefix.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    for (i, &x) in series.iter().enumerate() {
        acc += x;
        if i >= w {
            acc -= series[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

/// Plateau test: the means of the last two non-overlapping windows differ by
/// less than `tol` relative to the earlier one. Needs `2·window` points.
pub fn check_convergence(history: &[f64], window: usize, tol: f64) -> bool {
    if window == 0 || history.len() < 2 * window {
        return false;
    }
    let n = history.len();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let prev = mean(&history[n - 2 * window..n - window]);
    let last = mean(&history[n - window..]);
    (last - prev).abs() <= tol * prev.abs().max(f64::MIN_POSITIVE)
}
