//! Reference estimators and data generators shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use shapehazard::{rng, Dims, SubjectRecord, SurvivalDataset};

fn exp_draw<R: Rng>(r: &mut R, rate: f64) -> f64 {
    -(1.0 - r.gen::<f64>()).ln() / rate
}

/// Additive-hazards data: `λ(t|Z) = 1 + 0.3·Za + 0.2·Zb`.
pub fn additive_data(n: usize, seed: u64) -> SurvivalDataset {
    let mut r = rng::stream(seed, &[0]);
    let subjects = (0..n)
        .map(|i| {
            let za = r.gen::<f64>();
            let zb = if r.gen::<f64>() < 0.5 { 1.0 } else { 0.0 };
            let t = exp_draw(&mut r, 1.0 + 0.3 * za + 0.2 * zb);
            let c = exp_draw(&mut r, 0.4);
            SubjectRecord::fixed(i.to_string(), t.min(c), t <= c, vec![], vec![], vec![za, zb])
        })
        .collect();
    SurvivalDataset::new(subjects, Dims::new(0, 0, 2)).unwrap()
}

/// Proportional-hazards data: `λ(t|Z) = 2t·exp(0.7·Za − 0.4·Zb)`.
pub fn cox_data(n: usize, seed: u64) -> SurvivalDataset {
    let mut r = rng::stream(seed, &[0]);
    let subjects = (0..n)
        .map(|i| {
            let za = r.gen::<f64>() * 2.0 - 1.0;
            let zb = if r.gen::<f64>() < 0.4 { 1.0 } else { 0.0 };
            let e = exp_draw(&mut r, (0.7 * za - 0.4 * zb).exp());
            let t = e.sqrt();
            let c = exp_draw(&mut r, 0.5);
            SubjectRecord::fixed(i.to_string(), t.min(c), t <= c, vec![], vec![za, zb], vec![])
        })
        .collect();
    SurvivalDataset::new(subjects, Dims::new(0, 2, 0)).unwrap()
}

pub fn covariate_rows(data: &SurvivalDataset) -> Vec<Vec<f64>> {
    data.subjects().iter().map(|s| s.covariates.stacked_initial()).collect()
}

fn solve2(a: [[f64; 2]; 2], b: [f64; 2]) -> [f64; 2] {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [
        (a[1][1] * b[0] - a[0][1] * b[1]) / det,
        (a[0][0] * b[1] - a[1][0] * b[0]) / det,
    ]
}

/// Lin–Ying estimator `A⁻¹b` with `A = Σ∫Y_i(Z_i − Z̄)^{⊗2}dt` and
/// `b = Σ∫(Z_i − Z̄)dN_i`, integrating up to the largest observed time.
pub fn lin_ying(data: &SurvivalDataset) -> [f64; 2] {
    let z = covariate_rows(data);
    let times: Vec<f64> = data.subjects().iter().map(|s| s.time).collect();
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mean_at = |t: f64| {
        let at_risk: Vec<usize> = (0..times.len()).filter(|&j| times[j] >= t).collect();
        let m = at_risk.len() as f64;
        let zbar = [0, 1].map(|k| at_risk.iter().map(|&j| z[j][k]).sum::<f64>() / m);
        (at_risk, zbar)
    };
    let mut a = [[0.0; 2]; 2];
    let mut b = [0.0; 2];
    let mut last = 0.0;
    for &i in &order {
        let t = times[i];
        let (at_risk, zbar) = mean_at(t);
        let dt = t - last;
        for &j in &at_risk {
            let d = [z[j][0] - zbar[0], z[j][1] - zbar[1]];
            for r in 0..2 {
                for c in 0..2 {
                    a[r][c] += dt * d[r] * d[c];
                }
            }
        }
        if data.subjects()[i].event {
            b[0] += z[i][0] - zbar[0];
            b[1] += z[i][1] - zbar[1];
        }
        last = t;
    }
    solve2(a, b)
}

/// Cox maximum partial likelihood (Breslow) by Newton–Raphson.
pub fn cox_mle(data: &SurvivalDataset) -> [f64; 2] {
    let z = covariate_rows(data);
    let times: Vec<f64> = data.subjects().iter().map(|s| s.time).collect();
    let mut beta = [0.0; 2];
    for _ in 0..50 {
        let mut u = [0.0; 2];
        let mut info = [[0.0; 2]; 2];
        for (i, s) in data.subjects().iter().enumerate() {
            if !s.event {
                continue;
            }
            let (mut s0, mut s1, mut s2) = (0.0, [0.0; 2], [[0.0; 2]; 2]);
            for j in (0..z.len()).filter(|&j| times[j] >= times[i]) {
                let w = (beta[0] * z[j][0] + beta[1] * z[j][1]).exp();
                s0 += w;
                for r in 0..2 {
                    s1[r] += w * z[j][r];
                    for c in 0..2 {
                        s2[r][c] += w * z[j][r] * z[j][c];
                    }
                }
            }
            for r in 0..2 {
                u[r] += z[i][r] - s1[r] / s0;
                for c in 0..2 {
                    info[r][c] += s2[r][c] / s0 - s1[r] * s1[c] / (s0 * s0);
                }
            }
        }
        let step = solve2(info, u);
        beta = [beta[0] + step[0], beta[1] + step[1]];
        if step[0].abs().max(step[1].abs()) < 1e-13 {
            break;
        }
    }
    beta
}

/// Nelson–Aalen estimate at each distinct event time, as `(t, Λ̂(t))`.
pub fn nelson_aalen(data: &SurvivalDataset) -> Vec<(f64, f64)> {
    let mut times: Vec<(f64, bool)> = data.subjects().iter().map(|s| (s.time, s.event)).collect();
    times.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = times.len();
    let mut out = Vec::new();
    let mut na = 0.0;
    let mut i = 0;
    while i < n {
        let t = times[i].0;
        let mut j = i;
        let mut d = 0.0;
        while j < n && times[j].0 == t {
            d += times[j].1 as u8 as f64;
            j += 1;
        }
        if d > 0.0 {
            na += d / (n - i) as f64;
            out.push((t, na));
        }
        i = j;
    }
    out
}

/// Two groups whose hazards cross at t = 1: `Z = 1` has hazard 3 before
/// and 0 after, `Z = 0` has 0 before and 3 after; exponential censoring
/// with rate 0.2. `Z` enters the multiplicative part.
pub fn crossing_data(n: usize, seed: u64) -> SurvivalDataset {
    let mut r = rng::stream(seed, &[0]);
    let subjects = (0..n)
        .map(|i| {
            let z = if r.gen::<f64>() < 0.5 { 1.0 } else { 0.0 };
            let e = exp_draw(&mut r, 3.0);
            let t = if z == 1.0 {
                if e < 1.0 {
                    e
                } else {
                    f64::INFINITY
                }
            } else {
                1.0 + e
            };
            let c = exp_draw(&mut r, 0.2);
            SubjectRecord::fixed(i.to_string(), t.min(c), t <= c, vec![], vec![z], vec![])
        })
        .collect();
    SurvivalDataset::new(subjects, Dims::new(0, 1, 0)).unwrap()
}

/// Binary `Z` with a multiplicative effect, `λ(t|Z) = 2^Z/(1+t)`, no
/// censoring; `Z` is placed in the additive part, which misspecifies it.
pub fn multiplicative_as_additive(n: usize, seed: u64) -> SurvivalDataset {
    let mut r = rng::stream(seed, &[0]);
    let subjects = (0..n)
        .map(|i| {
            let z = if r.gen::<f64>() < 0.5 { 1.0 } else { 0.0 };
            let e = exp_draw(&mut r, 2f64.powf(z));
            SubjectRecord::fixed(i.to_string(), e.exp_m1(), true, vec![], vec![], vec![z])
        })
        .collect();
    SurvivalDataset::new(subjects, Dims::new(0, 0, 1)).unwrap()
}
