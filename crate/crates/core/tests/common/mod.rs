//! Reference computations written without the library, used as oracles.
#![allow(dead_code)]

/// Central finite differences of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Plain gradient descent on `curvature/2 · ‖x − center‖²` from the origin.
/// Returns the iterate after every step.
pub fn plain_sgd_bowl(center: &[f64], curvature: f64, gamma: f64, steps: usize) -> Vec<Vec<f64>> {
    let mut x = vec![0.0; center.len()];
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let g: Vec<f64> = x.iter().zip(center).map(|(a, c)| curvature * (a - c)).collect();
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= gamma * gi;
        }
        out.push(x.clone());
    }
    out
}

/// `sup τ·exp(−α·τ^{1/β})` over `[0, tau_max]`: integer grid, then a
/// golden-section search in the bracket around the best grid point.
pub fn chi_scan(alpha: f64, beta: f64, tau_max: f64) -> f64 {
    let phi = |t: f64| t * (-alpha * t.powf(1.0 / beta)).exp();
    let mut best = 0.0;
    let mut best_t = 0.0;
    let mut t = 0.0;
    while t <= tau_max {
        let v = phi(t);
        if v > best {
            best = v;
            best_t = t;
        }
        t += 1.0;
    }
    let (mut a, mut b) = ((best_t - 1.0).max(0.0), (best_t + 1.0).min(tau_max));
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if phi(c) > phi(d) {
            b = d;
        } else {
            a = c;
        }
    }
    best.max(phi((a + b) / 2.0))
}

/// Smallest honest count over all windows of `2f+1` consecutive entries.
pub fn min_honest_per_window(honest: &[bool], f: usize) -> Option<usize> {
    let w = 2 * f + 1;
    (honest.len() >= w).then(|| honest.windows(w).map(|s| s.iter().filter(|h| **h).count()).min().unwrap())
}

/// Longest run of consecutive `false` entries.
pub fn longest_false_run(honest: &[bool]) -> usize {
    let (mut best, mut cur) = (0, 0);
    for h in honest {
        cur = if *h { 0 } else { cur + 1 };
        best = best.max(cur);
    }
    best
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation.
pub fn stddev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}
