//! Helpers shared by unit tests.

use rand::Rng;

/// Composite Simpson rule with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let x = a + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * h / 3.0
}

/// Poisson draw by inversion; fine for the small means used in tests.
pub fn poisson(rng: &mut impl Rng, mean: f64) -> f64 {
    let u: f64 = rng.random();
    let mut k = 0.0;
    let mut p = libm::exp(-mean);
    let mut cdf = p;
    while u > cdf && p > 0.0 {
        k += 1.0;
        p *= mean / k;
        cdf += p;
    }
    k
}
