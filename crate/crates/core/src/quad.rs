//! Small quadrature and fitting helpers shared by the experiment layers.

use std::f64::consts::PI;

/// Surface measure of the unit sphere S^{d-1} in R^d.
pub fn sphere_area(d: usize) -> f64 {
    let n = d as f64;
    2.0 * PI.powf(n / 2.0) / gamma(n / 2.0)
}

/// Volume of the unit ball in R^d.
pub fn ball_volume(d: usize) -> f64 {
    sphere_area(d) / d as f64
}

/// Gamma function on positive half-integers and integers (all we need).
pub fn gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7.
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return PI / ((PI * x).sin() * gamma(1.0 - x));
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
}

/// Composite Simpson rule on `[a, b]` with `n` (rounded up to even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = if n % 2 == 1 { n + 1 } else { n.max(2) };
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let x = a + h * i as f64;
        s += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
    }
    s * h / 3.0
}

/// Integral of a radial profile `g(|ξ|)` over R^d, split at `breaks` so that
/// jump discontinuities of `g` sit on panel boundaries.
pub fn radial_integral(d: usize, g: impl Fn(f64) -> f64, breaks: &[f64], rmax: f64) -> f64 {
    let mut pts = vec![0.0];
    pts.extend(breaks.iter().copied().filter(|&b| b > 0.0 && b < rmax));
    pts.push(rmax);
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        // Evaluate strictly inside the panel so one-sided limits are used at jumps.
        let eps = 1e-13 * b.max(1.0);
        total += simpson(|r| g(r.clamp(a + eps, b - eps)) * r.powi(d as i32 - 1), a, b, 2000);
    }
    sphere_area(d) * total
}

/// Deterministic, roughly uniform unit directions in R^d.
pub fn unit_directions(d: usize, count: usize) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|i| {
                let t = 2.0 * PI * (i as f64 + 0.5) / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        3 => {
            // Fibonacci sphere.
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|i| {
                    let y = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                    let r = (1.0 - y * y).sqrt();
                    let t = golden * i as f64;
                    vec![r * t.cos(), y, r * t.sin()]
                })
                .collect()
        }
        _ => {
            use rand::{Rng, SeedableRng};
            use rand_chacha::ChaCha8Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed + d as u64);
            (0..count)
                .map(|_| loop {
                    let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let n = crate::real::norm(&v);
                    if n > 1e-3 && n <= 1.0 {
                        break v.iter().map(|x| x / n).collect();
                    }
                })
                .collect()
        }
    }
}

/// Least-squares fit of `y ≈ a + b·x`; returns `(a, b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.len() < 2 {
        return (y.first().copied().unwrap_or(0.0), 0.0);
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return (my, 0.0);
    }
    let b = sxy / sxx;
    (my - b * mx, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sphere_areas() {
        assert_relative_eq!(sphere_area(2), 2.0 * PI, max_relative = 1e-12);
        assert_relative_eq!(sphere_area(3), 4.0 * PI, max_relative = 1e-12);
        assert_relative_eq!(ball_volume(3), 4.0 * PI / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn radial_integral_of_indicator_moments() {
        // ∫_{B_1} (|ξ|^2 + 1) dξ in R^3
        let v = radial_integral(3, |r| if r <= 1.0 { r * r + 1.0 } else { 0.0 }, &[1.0], 2.0);
        assert_relative_eq!(v, 4.0 * PI / 5.0 + 4.0 * PI / 3.0, max_relative = 1e-9);
    }

    #[test]
    fn fit_recovers_line() {
        let x = [0.1, 0.2, 0.5];
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 2.0 * v).collect();
        let (a, b) = linear_fit(&x, &y);
        assert_relative_eq!(a, 3.0, epsilon = 1e-12);
        assert_relative_eq!(b, -2.0, epsilon = 1e-12);
    }

    #[test]
    fn directions_are_unit() {
        for d in 2..=4 {
            for v in unit_directions(d, 17) {
                assert_relative_eq!(crate::real::norm(&v), 1.0, epsilon = 1e-12);
            }
        }
    }
}
