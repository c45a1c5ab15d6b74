//! Composite Newton–Cotes rules on uniform grids.

/// Composite Simpson rule with `intervals` subintervals (rounded up to even).
pub fn simpson<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, intervals: usize) -> f64 {
    let n = (intervals.max(2) + 1) & !1;
    let h = (b - a) / n as f64;
    let mut odd = 0.0;
    let mut even = 0.0;
    for i in 1..n {
        let v = f(a + i as f64 * h);
        if i % 2 == 1 {
            odd += v;
        } else {
            even += v;
        }
    }
    h / 3.0 * (f(a) + f(b) + 4.0 * odd + 2.0 * even)
}

/// Composite trapezoid rule over `intervals + 1` equally spaced nodes.
pub fn trapezoid<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals.max(1);
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h)).sum();
    h * (0.5 * (f(a) + f(b)) + inner)
}

/// `intervals + 1` equally spaced nodes from `a` to `b`, endpoints exact.
pub fn uniform_nodes(a: f64, b: f64, intervals: usize) -> Vec<f64> {
    let n = intervals.max(1);
    let h = (b - a) / n as f64;
    (0..=n)
        .map(|i| if i == n { b } else { a + i as f64 * h })
        .collect()
}
