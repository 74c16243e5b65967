//! Monte Carlo harness over many paths.
//!
//! Path `i` of a batch always runs on the random streams of index `i`, and the
//! per-path results are reduced in index order, so every estimate is
//! bit-identical for any rayon pool size.

use std::io::{self, Write};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_recurrence_criterion, norm_sq, CriterionReport, Regime, SwitchingDiffusionModel};
use crate::simulate::{run_to_first_switch, simulate_until_hit_indexed, Engine, HitResult, SimParams};
use crate::stats::{mean_stderr, MCEstimate};

/// Time after which a hitting-time path is censored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxTime {
    Fixed(f64),
    /// `k · C_z (|x0|² + 1)` with the explicit bound constants of the criterion.
    TheoryMultiple(f64),
}

impl MaxTime {
    pub fn resolve(&self, criterion: &CriterionReport, x0: &[f64], z0: Regime) -> Result<f64> {
        match *self {
            MaxTime::Fixed(t) => Ok(t),
            MaxTime::TheoryMultiple(k) => {
                let c = criterion.constants().map_err(|_| {
                    Error::Precondition(format!(
                        "max_time must be given explicitly when the criterion fails ({})",
                        criterion.reason
                    ))
                })?;
                let cz = match z0 {
                    Regime::Zero => c.c_z0,
                    Regime::One => c.c_z1,
                };
                Ok(k * cz * (norm_sq(x0) + 1.0))
            }
        }
    }
}

impl Default for MaxTime {
    fn default() -> Self {
        MaxTime::TheoryMultiple(50.0)
    }
}

/// Settings shared by the hitting-time estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitConfig {
    pub m1: f64,
    pub n_paths: usize,
    /// `dt` and `seed` are used; the run length comes from `max_time`.
    pub params: SimParams,
    pub max_time: MaxTime,
    /// Overrides the default ε of the balance relation.
    pub eps: Option<f64>,
}

impl HitConfig {
    pub fn new(m1: f64, n_paths: usize, params: SimParams) -> Self {
        HitConfig {
            m1,
            n_paths,
            params,
            max_time: MaxTime::default(),
            eps: None,
        }
    }
}

/// Runs `n_paths` independent [`simulate_until_hit`](crate::simulate::simulate_until_hit)
/// paths, path `i` on stream `i`.
pub fn hitting_samples(
    model: &SwitchingDiffusionModel,
    x0: &[f64],
    z0: Regime,
    m1: f64,
    n_paths: usize,
    params: &SimParams,
    max_time: f64,
) -> Result<Vec<HitResult>> {
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| simulate_until_hit_indexed(model, x0, z0, m1, params, max_time, i))
        .collect()
}

/// Estimates `E_{x,z} τ` for the embedded stopping time `τ`.
pub fn estimate_hitting_moment(
    model: &SwitchingDiffusionModel,
    x0: &[f64],
    z0: Regime,
    cfg: &HitConfig,
) -> Result<MCEstimate> {
    if cfg.n_paths < 100 {
        return Err(Error::Precondition(format!("n_paths = {} < 100", cfg.n_paths)));
    }
    let criterion = check_recurrence_criterion(model, cfg.eps);
    if !criterion.recurrent {
        warn!("recurrence criterion not satisfied: {}", criterion.reason);
    }
    let max_time = cfg.max_time.resolve(&criterion, x0, z0)?;
    let hits = hitting_samples(model, x0, z0, cfg.m1, cfg.n_paths, &cfg.params, max_time)?;
    let taus: Vec<Option<f64>> = hits.iter().map(|h| h.tau_embedded).collect();
    MCEstimate::from_samples(&taus)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Start {
    pub x0: Vec<f64>,
    pub z0: Regime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub x0: Vec<f64>,
    pub z0: Regime,
    pub estimate: MCEstimate,
    pub theory_bound: f64,
    pub max_time: f64,
    pub satisfied: bool,
}

impl BoundRow {
    pub fn radius(&self) -> f64 {
        norm_sq(&self.x0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub m1: f64,
    pub rows: Vec<BoundRow>,
    pub constants_used: CriterionReport,
}

impl BoundReport {
    pub fn all_satisfied(&self) -> bool {
        self.rows.iter().all(|r| r.satisfied)
    }

    /// Whether the estimates for starting regime `z0` are nondecreasing in `|x0|`
    /// up to three combined standard errors.
    pub fn nondecreasing_in_radius(&self, z0: Regime) -> bool {
        let mut rows: Vec<&BoundRow> = self.rows.iter().filter(|r| r.z0 == z0).collect();
        rows.sort_by(|a, b| a.radius().total_cmp(&b.radius()));
        rows.windows(2).all(|w| {
            let (a, b) = (&w[0].estimate, &w[1].estimate);
            let se = (a.stderr * a.stderr + b.stderr * b.stderr).sqrt();
            b.mean >= a.mean - 3.0 * se
        })
    }

    /// One row per start: `x0_1..x0_d, z0, n, n_censored, mean, stderr, ci_lo, ci_hi, theory_bound, satisfied`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let dim = self.rows.first().map_or(1, |r| r.x0.len());
        write_row_header(&mut w, dim)?;
        for r in &self.rows {
            write_row(&mut w, &r.x0, r.z0, &r.estimate, Some(r.theory_bound), Some(r.satisfied))?;
        }
        Ok(())
    }
}

pub fn write_row_header<W: Write>(w: &mut W, dim: usize) -> io::Result<()> {
    for i in 1..=dim {
        write!(w, "x0_{i},")?;
    }
    writeln!(w, "z0,n,n_censored,mean,stderr,ci_lo,ci_hi,theory_bound,satisfied")
}

pub fn write_row<W: Write>(
    w: &mut W,
    x0: &[f64],
    z0: Regime,
    e: &MCEstimate,
    theory_bound: Option<f64>,
    satisfied: Option<bool>,
) -> io::Result<()> {
    for v in x0 {
        write!(w, "{v},")?;
    }
    write!(
        w,
        "{z0},{},{},{},{},{},{},",
        e.n_samples, e.n_censored, e.mean, e.stderr, e.ci95_lo, e.ci95_hi
    )?;
    match theory_bound {
        Some(b) => write!(w, "{b},")?,
        None => write!(w, ",")?,
    }
    match satisfied {
        Some(s) => writeln!(w, "{s}"),
        None => writeln!(w),
    }
}

/// Checks `E τ ≤ |x0|²/c` (plus `1/λ̲_1` when starting in regime 1) at each start.
pub fn verify_theorem_bound(
    model: &SwitchingDiffusionModel,
    starts: &[Start],
    cfg: &HitConfig,
) -> Result<BoundReport> {
    let criterion = check_recurrence_criterion(model, cfg.eps);
    let constants = *criterion.constants()?;
    for s in starts {
        if norm_sq(&s.x0).sqrt() <= cfg.m1 {
            return Err(Error::Precondition(format!(
                "start {:?} lies inside the M1 = {} ball",
                s.x0, cfg.m1
            )));
        }
    }
    let mut rows = Vec::with_capacity(starts.len());
    for s in starts {
        let max_time = cfg.max_time.resolve(&criterion, &s.x0, s.z0)?;
        let estimate = estimate_hitting_moment(
            model,
            &s.x0,
            s.z0,
            &HitConfig {
                max_time: MaxTime::Fixed(max_time),
                ..*cfg
            },
        )?;
        let theory_bound = constants.theory_bound(norm_sq(&s.x0), s.z0);
        rows.push(BoundRow {
            x0: s.x0.clone(),
            z0: s.z0,
            satisfied: estimate.mean + 3.0 * estimate.stderr <= theory_bound,
            estimate,
            theory_bound,
            max_time,
        });
    }
    Ok(BoundReport {
        m1: cfg.m1,
        rows,
        constants_used: criterion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub x0: Vec<f64>,
    pub z0: Regime,
    /// Mean of `|X_T|² − |x0|²` at the first switch `T`.
    pub empirical_lhs: f64,
    pub stderr: f64,
    pub mean_switch_time: f64,
    pub switch_time_stderr: f64,
    /// `−(R_- − ε)/λ̄_0` from regime 0, `(R_+ + ε)/λ̲_1` from regime 1; absent when the criterion fails.
    pub theory_rhs: Option<f64>,
    /// `empirical_lhs ≤ theory_rhs + 3·stderr`.
    pub satisfied: Option<bool>,
    pub n_paths: usize,
    pub n_censored: usize,
}

/// Change of `|X|²` over the first regime interval (`[0, T_1]` from regime 0,
/// `[0, T_0]` from regime 1) against its Lyapunov bound.
pub fn lyapunov_drift_check(
    model: &SwitchingDiffusionModel,
    x0: &[f64],
    z0: Regime,
    m1: f64,
    n_paths: usize,
    params: &SimParams,
    eps: Option<f64>,
) -> Result<DriftReport> {
    params.validate()?;
    let r0_sq = norm_sq(x0);
    if r0_sq.sqrt() <= m1 {
        return Err(Error::Precondition(format!(
            "|x0| = {} must exceed M1 = {m1}",
            r0_sq.sqrt()
        )));
    }
    if n_paths < 1000 {
        return Err(Error::Precondition(format!("n_paths = {n_paths} < 1000")));
    }
    let samples: Vec<Option<(f64, f64)>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let end = run_to_first_switch(
                model,
                x0,
                z0,
                params.dt,
                params.horizon,
                params.seed,
                i,
                |_, _, _| {},
            )?;
            Ok(end.map(|(t, x)| (norm_sq(&x) - r0_sq, t)))
        })
        .collect::<Result<_>>()?;
    let observed: Vec<(f64, f64)> = samples.iter().flatten().copied().collect();
    let n_censored = n_paths - observed.len();
    if 10 * n_censored > n_paths {
        return Err(Error::Reliability(format!(
            "{n_censored} of {n_paths} paths censored before the first switch"
        )));
    }
    let lhs: Vec<f64> = observed.iter().map(|p| p.0).collect();
    let times: Vec<f64> = observed.iter().map(|p| p.1).collect();
    let (empirical_lhs, stderr) = mean_stderr(&lhs);
    let (mean_switch_time, switch_time_stderr) = mean_stderr(&times);
    let criterion = check_recurrence_criterion(model, eps);
    let theory_rhs = criterion.constants.map(|k| {
        let b = model.bounds();
        match z0 {
            Regime::Zero => -(b.big_r_minus - k.eps) / b.lam0_hi,
            Regime::One => (b.big_r_plus + k.eps) / b.lam1_lo,
        }
    });
    Ok(DriftReport {
        x0: x0.to_vec(),
        z0,
        empirical_lhs,
        stderr,
        mean_switch_time,
        switch_time_stderr,
        satisfied: theory_rhs.map(|rhs| empirical_lhs <= rhs + 3.0 * stderr),
        theory_rhs,
        n_paths,
        n_censored,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinLayout {
    /// `bins` cells per coordinate over `[−w, w)`.
    Axis,
    /// `bins` shells of `|x|` over `[0, w)`.
    Radial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub layout: BinLayout,
    pub bins: usize,
    pub half_width: f64,
    /// Separate cells per regime.
    pub by_regime: bool,
}

impl HistogramSpec {
    /// Box `[−3·M1, 3·M1]^d`; radial shells for `d > 1`.
    pub fn default_for(m1: f64, dim: usize, bins: usize) -> Self {
        HistogramSpec {
            layout: if dim == 1 { BinLayout::Axis } else { BinLayout::Radial },
            bins,
            half_width: 3.0 * m1,
            by_regime: false,
        }
    }

    fn spatial_cells(&self, dim: usize) -> Option<usize> {
        match self.layout {
            BinLayout::Axis => self.bins.checked_pow(dim as u32),
            BinLayout::Radial => Some(self.bins),
        }
    }

    fn edges(&self) -> Vec<f64> {
        let (lo, hi) = match self.layout {
            BinLayout::Axis => (-self.half_width, self.half_width),
            BinLayout::Radial => (0.0, self.half_width),
        };
        (0..=self.bins)
            .map(|i| lo + (hi - lo) * i as f64 / self.bins as f64)
            .collect()
    }

    #[inline]
    fn cell(&self, x: &[f64], z: Regime, spatial: usize) -> Option<usize> {
        let w = self.half_width;
        let nb = self.bins as f64;
        let idx = match self.layout {
            BinLayout::Axis => {
                let mut idx = 0usize;
                for v in x {
                    if !(v >= &-w && v < &w) {
                        return None;
                    }
                    let k = (((v + w) / (2.0 * w)) * nb) as usize;
                    idx = idx * self.bins + k.min(self.bins - 1);
                }
                idx
            }
            BinLayout::Radial => {
                let r = norm_sq(x).sqrt();
                if r >= w {
                    return None;
                }
                ((r / w * nb) as usize).min(self.bins - 1)
            }
        };
        Some(if self.by_regime {
            idx + z.index() * spatial
        } else {
            idx
        })
    }
}

/// Time-average occupation measure of a single long path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub spec: HistogramSpec,
    pub dim: usize,
    /// Shared per-axis (or radial) edges.
    pub bin_edges: Vec<f64>,
    /// Cell masses, regime-major when `by_regime`, then row-major over axes.
    pub masses: Vec<f64>,
    pub out_of_range: f64,
    /// Number of integration steps accumulated.
    pub n_samples: u64,
}

impl Histogram {
    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum::<f64>() + self.out_of_range
    }

    fn same_shape(&self, other: &Histogram) -> bool {
        self.spec.layout == other.spec.layout
            && self.spec.by_regime == other.spec.by_regime
            && self.dim == other.dim
            && self.bin_edges == other.bin_edges
            && self.masses.len() == other.masses.len()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let spatial = self.spec.spatial_cells(self.dim).unwrap_or(0);
        let axes = match self.spec.layout {
            BinLayout::Axis => self.dim,
            BinLayout::Radial => 1,
        };
        write!(w, "cell,regime")?;
        match self.spec.layout {
            BinLayout::Axis => {
                for i in 1..=axes {
                    write!(w, ",lo_{i},hi_{i}")?;
                }
            }
            BinLayout::Radial => write!(w, ",r_lo,r_hi")?,
        }
        writeln!(w, ",mass")?;
        for (cell, mass) in self.masses.iter().enumerate() {
            let (regime, mut rest) = if self.spec.by_regime {
                ((cell / spatial).to_string(), cell % spatial)
            } else {
                ("all".to_string(), cell)
            };
            let mut idx = vec![0; axes];
            for slot in idx.iter_mut().rev() {
                *slot = rest % self.spec.bins;
                rest /= self.spec.bins;
            }
            write!(w, "{cell},{regime}")?;
            for k in idx {
                write!(w, ",{},{}", self.bin_edges[k], self.bin_edges[k + 1])?;
            }
            writeln!(w, ",{mass}")?;
        }
        write!(w, "out_of_range,all")?;
        for _ in 0..axes {
            write!(w, ",,")?;
        }
        writeln!(w, ",{}", self.out_of_range)
    }
}

/// Occupation histogram of `X` (optionally jointly with `Z`) over `[burn_in, horizon]`.
pub fn estimate_invariant_histogram(
    model: &SwitchingDiffusionModel,
    x0: &[f64],
    z0: Regime,
    burn_in: f64,
    horizon: f64,
    spec: &HistogramSpec,
    params: &SimParams,
) -> Result<Histogram> {
    if !(burn_in >= 0.0 && horizon > burn_in && horizon.is_finite()) {
        return Err(Error::Precondition(format!(
            "need 0 ≤ burn_in < horizon, got burn_in = {burn_in}, horizon = {horizon}"
        )));
    }
    if spec.bins == 0 || !(spec.half_width > 0.0) {
        return Err(Error::range("bins", "need bins ≥ 1 and a positive box"));
    }
    let spatial = spec
        .spatial_cells(model.dim())
        .filter(|&n| n <= 10_000_000)
        .ok_or_else(|| Error::range("bins", "too many cells; use radial binning"))?;
    let criterion = model.check_recurrence_criterion();
    if !criterion.recurrent {
        warn!("recurrence criterion not satisfied: {}", criterion.reason);
    }
    let cells = if spec.by_regime { 2 * spatial } else { spatial };
    let mut weights = vec![0.0; cells];
    let mut outside = 0.0;
    let mut n_samples = 0u64;
    let mut eng = Engine::new(model, x0, z0, params.dt, horizon, params.seed, 0)?;
    while !eng.finished() {
        let t0 = eng.t;
        let cell = spec.cell(&eng.x, eng.z, spatial);
        eng.advance()?;
        let w = eng.t - t0.max(burn_in);
        if w > 0.0 {
            n_samples += 1;
            match cell {
                Some(c) => weights[c] += w,
                None => outside += w,
            }
        }
    }
    let total: f64 = weights.iter().sum::<f64>() + outside;
    Ok(Histogram {
        spec: *spec,
        dim: model.dim(),
        bin_edges: spec.edges(),
        masses: weights.iter().map(|w| w / total).collect(),
        out_of_range: outside / total,
        n_samples,
    })
}

/// `½ Σ |p − q|` over all cells and the out-of-range bucket.
pub fn tv_distance(h1: &Histogram, h2: &Histogram) -> Result<f64> {
    if !h1.same_shape(h2) {
        return Err(Error::ShapeMismatch(format!(
            "{} cells / {} edges vs {} cells / {} edges",
            h1.masses.len(),
            h1.bin_edges.len(),
            h2.masses.len(),
            h2.bin_edges.len()
        )));
    }
    let body: f64 = h1
        .masses
        .iter()
        .zip(&h2.masses)
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok((0.5 * (body + (h1.out_of_range - h2.out_of_range).abs())).min(1.0))
}
