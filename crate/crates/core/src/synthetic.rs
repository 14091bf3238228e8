//! Synthetic panels with planted structure, for tests, fixtures and demos.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::AdjacencyMatrix;
use crate::linalg::Matrix;
use crate::panel::{Frequency, PanelDataset, PopulationVector};

#[derive(Debug, Clone)]
pub struct SyntheticPanel {
    pub panel: PanelDataset,
    pub adjacency: AdjacencyMatrix,
    pub populations: PopulationVector,
}

impl SyntheticPanel {
    /// Writes `panel.csv`, `adjacency.csv` and `population.csv` into `dir`.
    pub fn write_files(&self, dir: impl AsRef<std::path::Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.panel.write_csv(dir.join("panel.csv"))?;
        crate::graph::write_adjacency(dir.join("adjacency.csv"), &self.adjacency, self.panel.regions())?;
        self.populations.write_csv(dir.join("population.csv"), self.panel.regions())
    }
}

/// A Monday, so daily indicator 0 is the first date.
pub fn start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 6).expect("valid date")
}

fn region_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("r{i:02}")).collect()
}

/// Undirected ring: each region linked to its two neighbors.
pub fn ring_adjacency(n: usize) -> AdjacencyMatrix {
    let mut w = Matrix::zeros(n, n);
    for i in 0..n {
        if n > 1 {
            w[(i, (i + 1) % n)] = 1.0;
            w[(i, (i + n - 1) % n)] = 1.0;
        }
    }
    AdjacencyMatrix::new(w).expect("ring weights are valid")
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; enough for noise injection.
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn assemble(rows: Vec<Vec<f64>>, frequency: Frequency, populations: Vec<f64>) -> Result<SyntheticPanel> {
    let n = populations.len();
    Ok(SyntheticPanel {
        panel: PanelDataset::from_rows(start_date(), frequency, region_names(n), &rows)?,
        adjacency: ring_adjacency(n),
        populations: PopulationVector::new(populations)?,
    })
}

/// Daily multiplicative weekday factors, Monday first.
pub const WEEKDAY_FACTORS: [f64; 7] = [1.25, 1.1, 1.0, 0.95, 0.9, 0.55, 0.45];

/// Daily counts `level_i(t) · w[weekday(t)] · (1 + noise)` with slowly
/// drifting levels.
pub fn weekday_panel(n: usize, len: usize, noise: f64, seed: u64) -> Result<SyntheticPanel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<f64> = (0..n).map(|_| 50.0 + 150.0 * rng.random::<f64>()).collect();
    let phase: Vec<f64> = (0..n).map(|_| 2.0 * std::f64::consts::PI * rng.random::<f64>()).collect();
    let rows = (0..len)
        .map(|t| {
            (0..n)
                .map(|i| {
                    let level = base[i] * (1.0 + 0.3 * (2.0 * std::f64::consts::PI * t as f64 / 90.0 + phase[i]).sin());
                    (level * WEEKDAY_FACTORS[t % 7] * (1.0 + noise * normal(&mut rng))).max(0.0)
                })
                .collect()
        })
        .collect();
    assemble(rows, Frequency::Daily, base.iter().map(|b| b * 1000.0).collect())
}

/// Noisy incidence from a ring metapopulation SIR epidemic seeded in node 0.
pub fn sir_panel(n: usize, len: usize, noise: f64, seed: u64) -> Result<SyntheticPanel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pops: Vec<f64> = (0..n).map(|_| 1e5 * (0.5 + rng.random::<f64>())).collect();
    let beta: Vec<f64> = (0..n).map(|_| 0.25 + 0.1 * rng.random::<f64>()).collect();
    let gamma = 0.12;
    let coupling = 0.1;
    let mut s = pops.clone();
    let mut i: Vec<f64> = (0..n).map(|k| if k == 0 { 50.0 } else { 1.0 }).collect();
    for k in 0..n {
        s[k] -= i[k];
    }
    let mut rows = Vec::with_capacity(len);
    for _ in 0..len {
        let mixed: Vec<f64> = (0..n)
            .map(|k| {
                let nb = if n > 1 { (i[(k + 1) % n] + i[(k + n - 1) % n]) / 2.0 } else { i[k] };
                (1.0 - coupling) * i[k] + coupling * nb
            })
            .collect();
        let z: Vec<f64> = (0..n).map(|k| (beta[k] * s[k] / pops[k] * mixed[k]).min(s[k])).collect();
        for k in 0..n {
            s[k] -= z[k];
            i[k] += z[k] - gamma * i[k];
        }
        rows.push(z.iter().map(|v| (v * (1.0 + noise * normal(&mut rng))).max(0.0)).collect());
    }
    assemble(rows, Frequency::Daily, pops)
}

/// Each node follows the lagged mean of its ring neighbors around `mean`.
pub fn neighbor_lag_panel(n: usize, len: usize, seed: u64) -> Result<SyntheticPanel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = 100.0;
    let mut x: Vec<f64> = (0..n).map(|_| mean + 20.0 * normal(&mut rng)).collect();
    let mut rows = Vec::with_capacity(len);
    for _ in 0..len {
        rows.push(x.clone());
        x = (0..n)
            .map(|k| {
                let nb = (x[(k + 1) % n] + x[(k + n - 1) % n]) / 2.0;
                (mean + 0.95 * (nb - mean) + 3.0 * normal(&mut rng)).max(0.0)
            })
            .collect();
    }
    assemble(rows, Frequency::Daily, vec![1e4; n])
}

/// Noiseless `a_i + b_i t`.
pub fn linear_trend_panel(n: usize, len: usize, frequency: Frequency) -> Result<SyntheticPanel> {
    let rows = (0..len)
        .map(|t| (0..n).map(|i| 10.0 + 5.0 * i as f64 + (0.5 + 0.25 * i as f64) * t as f64).collect())
        .collect();
    assemble(rows, frequency, vec![1e6; n])
}

/// A mixed-signal daily panel: seasonal waves, weekday modulation, noise and
/// a sprinkling of exact zeros. Used for the bundled CLI fixture.
pub fn fixture_panel(n: usize, len: usize, seed: u64) -> Result<SyntheticPanel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<f64> = (0..n).map(|_| 20.0 + 80.0 * rng.random::<f64>()).collect();
    let rows = (0..len)
        .map(|t| {
            (0..n)
                .map(|i| {
                    let wave = 1.0 + 0.8 * (2.0 * std::f64::consts::PI * (t as f64 + 9.0 * i as f64) / 70.0).sin();
                    let v = base[i] * wave * WEEKDAY_FACTORS[t % 7] * (1.0 + 0.15 * normal(&mut rng));
                    if rng.random::<f64>() < 0.02 {
                        0.0
                    } else {
                        v.max(0.0).round()
                    }
                })
                .collect()
        })
        .collect();
    assemble(rows, Frequency::Daily, base.iter().map(|b| (b * 500.0).round()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic_and_valid() {
        let a = weekday_panel(3, 50, 0.02, 1).unwrap();
        let b = weekday_panel(3, 50, 0.02, 1).unwrap();
        assert_eq!(a.panel, b.panel);
        assert_eq!(sir_panel(4, 80, 0.0, 2).unwrap().panel.len(), 80);
        assert_eq!(neighbor_lag_panel(5, 30, 3).unwrap().panel.num_regions(), 5);
        assert_eq!(linear_trend_panel(2, 10, Frequency::Weekly).unwrap().panel.row(1), &[10.5, 15.75]);
        assert_eq!(fixture_panel(3, 20, 4).unwrap().panel.len(), 20);
    }

    #[test]
    fn sir_panel_has_an_epidemic_wave() {
        let p = sir_panel(3, 200, 0.0, 5).unwrap().panel;
        let peak = (0..200).map(|t| p.row(t)[0]).fold(0.0, f64::max);
        assert!(peak > 10.0 * p.row(0)[0]);
    }
}
