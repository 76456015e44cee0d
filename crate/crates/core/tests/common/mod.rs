//! Reference implementations used to check the library. Everything here is
//! written the slow, obvious way and shares no code with the crate.

#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal by Box-Muller.
pub fn normal(r: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = r.random::<f64>().max(1e-300);
    let u2: f64 = r.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

pub fn random_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(r)).collect()
}

/// Index of the closest entry by plain squared distance, first on ties.
pub fn linear_scan(x: &[f64], entries: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, e) in entries.iter().enumerate() {
        let mut d = 0.0;
        for k in 0..x.len() {
            d += (x[k] - e[k]).powi(2);
        }
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Residual quantization by repeated linear scans.
pub fn rvq_oracle(z: &[f64], books: &[Vec<Vec<f64>>]) -> Vec<usize> {
    let mut r = z.to_vec();
    let mut out = Vec::new();
    for b in books {
        let i = linear_scan(&r, b);
        for k in 0..r.len() {
            r[k] -= b[i][k];
        }
        out.push(i);
    }
    out
}

/// Eigenvalues of a symmetric matrix (row-major, n x n) by cyclic Jacobi
/// rotations, descending.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Squared singular values of the column-centered rows, descending.
pub fn centered_spectrum(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    let p = rows[0].len();
    let mean: Vec<f64> = (0..p).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n as f64).collect();
    let mut g = vec![vec![0.0; p]; p];
    for r in rows {
        for i in 0..p {
            let a = r[i] - mean[i];
            for j in 0..p {
                g[i][j] += a * (r[j] - mean[j]);
            }
        }
    }
    jacobi_eigenvalues(g)
}

/// Magnitudes of bins `0..=n/2` by the defining sum.
pub fn dft_magnitudes(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let a = -2.0 * PI * (k * t) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

/// Orthonormal DCT-II by the defining sum.
pub fn dct_oracle(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * k as f64 * (i as f64 + 0.5) / n).cos())
                .sum();
            s * if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() }
        })
        .collect()
}

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Within-cluster sum of squares with cluster means as centers.
pub fn partition_cost(points: &[Vec<f64>], assign: &[usize], k: usize) -> f64 {
    let dim = points[0].len();
    let mut cost = 0.0;
    for c in 0..k {
        let members: Vec<&Vec<f64>> = points.iter().zip(assign).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
        if members.is_empty() {
            continue;
        }
        let mean: Vec<f64> = (0..dim).map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64).collect();
        cost += members.iter().map(|p| sq(p, &mean)).sum::<f64>();
    }
    cost
}

/// Visit every assignment of `n` items to `k` labels.
pub fn for_each_assignment(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut a = vec![0usize; n];
    loop {
        f(&a);
        let mut i = 0;
        loop {
            if i == n {
                return;
            }
            a[i] += 1;
            if a[i] < k {
                break;
            }
            a[i] = 0;
            i += 1;
        }
    }
}

fn sizes_ok(a: &[usize], k: usize, tau: usize) -> bool {
    (0..k).all(|c| a.iter().filter(|&&x| x == c).count() >= tau)
}

/// Minimum cost of assigning points to fixed centers with every center
/// receiving at least `tau` points.
pub fn brute_constrained_assign(points: &[Vec<f64>], centers: &[Vec<f64>], tau: usize) -> f64 {
    let k = centers.len();
    let mut best = f64::INFINITY;
    for_each_assignment(points.len(), k, |a| {
        if sizes_ok(a, k, tau) {
            let c: f64 = points.iter().zip(a).map(|(p, &j)| sq(p, &centers[j])).sum();
            best = best.min(c);
        }
    });
    best
}

/// Minimum within-cluster cost over all partitions into `k` clusters of at
/// least `tau` points each.
pub fn brute_constrained_kmeans(points: &[Vec<f64>], k: usize, tau: usize) -> f64 {
    let mut best = f64::INFINITY;
    for_each_assignment(points.len(), k, |a| {
        if a[0] == 0 && sizes_ok(a, k, tau.max(1)) {
            best = best.min(partition_cost(points, a, k));
        }
    });
    best
}

/// Nearest beat by exhaustive scan; ties resolve to the earlier time.
pub fn nearest_beat(t: f64, beats: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    for &b in beats {
        best = best.min((b - t).abs());
    }
    beats
        .iter()
        .copied()
        .filter(|b| (b - t).abs() == best)
        .fold(f64::INFINITY, f64::min)
}

/// Fréchet distance between Gaussians with commuting (co-diagonalizable)
/// covariances given by their eigenvalues in a shared basis.
pub fn frechet_commuting(mean_gap_sq: f64, var_a: &[f64], var_b: &[f64]) -> f64 {
    mean_gap_sq
        + var_a
            .iter()
            .zip(var_b)
            .map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2))
            .sum::<f64>()
}

/// A random orthogonal matrix by Gram-Schmidt on Gaussian columns.
pub fn random_rotation(r: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < n {
        let mut v = random_vec(r, n);
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for k in 0..n {
                v[k] -= d * u[k];
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            q.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    q
}

pub fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// Pearson chi-square statistic.
pub fn chi_square(observed: &[usize], expected: &[f64]) -> f64 {
    observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum()
}

/// Precision and recall of detections against references within `tol`,
/// matching each reference at most once.
pub fn precision_recall(detected: &[f64], reference: &[f64], tol: f64) -> (f64, f64) {
    let mut used = vec![false; reference.len()];
    let mut hits = 0;
    for d in detected {
        if let Some(j) = (0..reference.len()).find(|&j| !used[j] && (reference[j] - d).abs() <= tol) {
            used[j] = true;
            hits += 1;
        }
    }
    let p = if detected.is_empty() { 0.0 } else { hits as f64 / detected.len() as f64 };
    let r = if reference.is_empty() { 1.0 } else { hits as f64 / reference.len() as f64 };
    (p, r)
}
