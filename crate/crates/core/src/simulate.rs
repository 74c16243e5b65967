//! Trajectory generation.
//!
//! `X` is advanced by Euler–Maruyama on the regular grid `k·dt`. Regime
//! switches are realised by thinning a homogeneous Poisson clock of rate
//! `λ̄ = max(λ̄_0, λ̄_1)`: the integration sub-step ends exactly at each
//! candidate time, and the candidate is accepted with probability
//! `λ_{Z_{t-}}(X_t) / λ̄`. `X` is continuous across switches.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{norm_sq, Regime, SwitchingDiffusionModel};
use crate::rng::PathStreams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Keep every `record_stride`-th grid point.
    pub record_stride: usize,
}

impl SimParams {
    pub fn new(dt: f64, horizon: f64, seed: u64) -> Self {
        SimParams {
            dt,
            horizon,
            seed,
            record_stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::range("dt", format!("must be finite and > 0, got {}", self.dt)));
        }
        if !(self.horizon.is_finite() && self.horizon >= self.dt) {
            return Err(Error::range(
                "horizon",
                format!("must be finite and ≥ dt = {}, got {}", self.dt, self.horizon),
            ));
        }
        if self.record_stride == 0 {
            return Err(Error::range("record_stride", "must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    /// Index `n` of `T_n`. Paths started in regime 0 carry the marker `T_0 = 0`
    /// and number real switches from 1; paths started in regime 1 number them from 0.
    pub n: u64,
    pub time: f64,
    pub x_at: Vec<f64>,
    pub new_regime: Regime,
}

impl SwitchEvent {
    fn origin_marker(x0: &[f64]) -> Self {
        SwitchEvent {
            n: 0,
            time: 0.0,
            x_at: x0.to_vec(),
            new_regime: Regime::Zero,
        }
    }

    /// True for the `T_0 = 0` convention entry of a path started in regime 0.
    pub fn is_origin_marker(&self) -> bool {
        self.n == 0 && self.time == 0.0 && self.new_regime == Regime::Zero
    }
}

/// Index of the first real switch of a path started in `z0`.
pub(crate) fn first_switch_index(z0: Regime) -> u64 {
    match z0 {
        Regime::Zero => 1,
        Regime::One => 0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub dim: usize,
    pub times: Vec<f64>,
    /// Row-major `times.len() × dim`.
    pub xs: Vec<f64>,
    pub zs: Vec<Regime>,
    pub events: Vec<SwitchEvent>,
    pub min_abs_x_running: Vec<f64>,
    /// The path was cut at the horizon rather than stopped by an event.
    pub censored: bool,
    pub seed: u64,
    pub path_index: u64,
}

impl PathRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn z0(&self) -> Regime {
        self.zs[0]
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "time")?;
        for i in 1..=self.dim {
            write!(w, ",x_{i}")?;
        }
        writeln!(w, ",z")?;
        for (i, t) in self.times.iter().enumerate() {
            write!(w, "{t}")?;
            for v in self.x(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w, ",{}", self.zs[i])?;
        }
        Ok(())
    }
}

pub fn write_events_csv<W: Write>(events: &[SwitchEvent], dim: usize, mut w: W) -> io::Result<()> {
    write!(w, "n,T_n")?;
    for i in 1..=dim {
        write!(w, ",x_{i}")?;
    }
    writeln!(w, ",new_regime")?;
    for e in events {
        write!(w, "{},{}", e.n, e.time)?;
        for v in &e.x_at {
            write!(w, ",{v}")?;
        }
        writeln!(w, ",{}", e.new_regime)?;
    }
    Ok(())
}

/// `u < λ / λ̄`; fails if the dominating bound is violated.
pub fn thinning_accept(lambda_current: f64, lambda_bar: f64, u: f64) -> Result<bool> {
    if !(lambda_current <= lambda_bar) || !(lambda_current > 0.0) {
        return Err(Error::DominatingRate {
            rate: lambda_current,
            bound: lambda_bar,
        });
    }
    Ok(u < lambda_current / lambda_bar)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum StepKind {
    Grid,
    Rejected,
    Switched,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Step {
    pub h: f64,
    pub kind: StepKind,
    /// The step ended on a regular grid point (possibly also a candidate time).
    pub on_grid: bool,
}

/// Euler–Maruyama integrator with a thinned switching clock.
pub(crate) struct Engine<'m> {
    model: &'m SwitchingDiffusionModel,
    dt: f64,
    end_time: f64,
    lambda_bar: f64,
    streams: PathStreams,
    pub t: f64,
    pub x: Vec<f64>,
    pub z: Regime,
    next_candidate: f64,
    grid_index: u64,
    drift: Vec<f64>,
}

impl<'m> Engine<'m> {
    pub fn new(
        model: &'m SwitchingDiffusionModel,
        x0: &[f64],
        z0: Regime,
        dt: f64,
        end_time: f64,
        seed: u64,
        path_index: u64,
    ) -> Result<Self> {
        check_start(model, x0)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::range("dt", format!("must be finite and > 0, got {dt}")));
        }
        if !(end_time > 0.0) {
            return Err(Error::range("horizon", format!("must be > 0, got {end_time}")));
        }
        let mut engine = Engine {
            model,
            dt,
            end_time,
            lambda_bar: model.lambda_bar(),
            streams: PathStreams::new(seed, path_index),
            t: 0.0,
            x: x0.to_vec(),
            z: z0,
            next_candidate: 0.0,
            grid_index: 0,
            drift: vec![0.0; x0.len()],
        };
        engine.next_candidate = engine.exp_gap();
        Ok(engine)
    }

    pub fn finished(&self) -> bool {
        self.t >= self.end_time
    }

    fn exp_gap(&mut self) -> f64 {
        let u: f64 = self.streams.switching.sample(Open01);
        -u.ln() / self.lambda_bar
    }

    #[inline]
    fn integrate(&mut self, h: f64) -> Result<()> {
        self.model.drift(self.z).eval_into(&self.x, &mut self.drift);
        let s = self.model.diffusion().sigma(self.z) * h.sqrt();
        for (xi, bi) in self.x.iter_mut().zip(&self.drift) {
            let xi_noise: f64 = StandardNormal.sample(&mut self.streams.noise);
            *xi += bi * h + s * xi_noise;
        }
        if self.x.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NumericalBlowup {
                last_valid_time: self.t,
            })
        }
    }

    /// Advances to the next grid point or candidate switch time, whichever comes first.
    pub fn advance(&mut self) -> Result<Step> {
        let next_grid = ((self.grid_index + 1) as f64 * self.dt).min(self.end_time);
        if self.next_candidate <= next_grid {
            let h = self.next_candidate - self.t;
            self.integrate(h)?;
            self.t = self.next_candidate;
            let on_grid = self.t == next_grid;
            if on_grid {
                self.grid_index += 1;
            }
            let rate = self.model.intensity(self.z).eval(&self.x);
            let u: f64 = self.streams.switching.random();
            let accepted = thinning_accept(rate, self.lambda_bar, u)?;
            if accepted {
                self.z = self.z.other();
            }
            self.next_candidate = self.t + self.exp_gap();
            Ok(Step {
                h,
                kind: if accepted {
                    StepKind::Switched
                } else {
                    StepKind::Rejected
                },
                on_grid,
            })
        } else {
            let h = next_grid - self.t;
            self.integrate(h)?;
            self.t = next_grid;
            self.grid_index += 1;
            Ok(Step {
                h,
                kind: StepKind::Grid,
                on_grid: true,
            })
        }
    }

    pub fn grid_index(&self) -> u64 {
        self.grid_index
    }
}

fn check_start(model: &SwitchingDiffusionModel, x0: &[f64]) -> Result<()> {
    if x0.len() != model.dim() {
        return Err(Error::range(
            "x0",
            format!("expected {} components, got {}", model.dim(), x0.len()),
        ));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::range("x0", "components must be finite"));
    }
    Ok(())
}

pub fn simulate_path(
    model: &SwitchingDiffusionModel,
    x0: &[f64],
    z0: Regime,
    params: &SimParams,
) -> Result<PathRecord> {
    simulate_path_indexed(model, x0, z0, params, 0)
}

/// [`simulate_path`] on the random streams of path `path_index`.
pub fn simulate_path_indexed(
    model: &SwitchingDiffusionModel,
    x0: &[f64],
    z0: Regime,
    params: &SimParams,
    path_index: u64,
) -> Result<PathRecord> {
    params.validate()?;
    let mut eng = Engine::new(model, x0, z0, params.dt, params.horizon, params.seed, path_index)?;
    let dim = model.dim();
    let mut rec = PathRecord {
        dim,
        times: Vec::new(),
        xs: Vec::new(),
        zs: Vec::new(),
        events: Vec::new(),
        min_abs_x_running: Vec::new(),
        censored: true,
        seed: params.seed,
        path_index,
    };
    let mut running_min = f64::INFINITY;
    let mut push = |rec: &mut PathRecord, t: f64, x: &[f64], z: Regime| {
        running_min = running_min.min(norm_sq(x).sqrt());
        rec.times.push(t);
        rec.xs.extend_from_slice(x);
        rec.zs.push(z);
        rec.min_abs_x_running.push(running_min);
    };
    push(&mut rec, 0.0, x0, z0);
    if z0 == Regime::Zero {
        rec.events.push(SwitchEvent::origin_marker(x0));
    }
    let mut next_n = first_switch_index(z0);
    let stride = params.record_stride as u64;
    while !eng.finished() {
        let step = eng.advance()?;
        let switched = step.kind == StepKind::Switched;
        if switched {
            rec.events.push(SwitchEvent {
                n: next_n,
                time: eng.t,
                x_at: eng.x.clone(),
                new_regime: eng.z,
            });
            next_n += 1;
        }
        let keep_grid = step.on_grid && eng.grid_index() % stride == 0;
        if switched || keep_grid || eng.finished() {
            push(&mut rec, eng.t, &eng.x, eng.z);
        }
    }
    Ok(rec)
}

/// Events and end state of a path run by [`simulate_until_hit`].
#[derive(Debug, Clone, PartialEq)]
pub struct PathSummary {
    /// Switch events up to the stopping time, including the `T_0 = 0` marker for `z0 = 0`.
    pub events: Vec<SwitchEvent>,
    pub end_time: f64,
    pub x_end: Vec<f64>,
    pub z_end: Regime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HitResult {
    /// First grid time with `|X| ≤ M1`; `None` when censored.
    pub tau_m1: Option<f64>,
    /// First switching time `T_n` with `|X_{T_n}| ≤ M1`; `None` when censored.
    pub tau_embedded: Option<f64>,
    pub summary: PathSummary,
}

pub fn simulate_until_hit(
    model: &SwitchingDiffusionModel,
    x0: &[f64],
    z0: Regime,
    m1: f64,
    params: &SimParams,
    max_time: f64,
) -> Result<HitResult> {
    simulate_until_hit_indexed(model, x0, z0, m1, params, max_time, 0)
}

pub fn simulate_until_hit_indexed(
    model: &SwitchingDiffusionModel,
    x0: &[f64],
    z0: Regime,
    m1: f64,
    params: &SimParams,
    max_time: f64,
    path_index: u64,
) -> Result<HitResult> {
    if !(m1 > 0.0) {
        return Err(Error::range("m1", format!("must be > 0, got {m1}")));
    }
    if !(max_time > 0.0 && max_time.is_finite()) {
        return Err(Error::range("max_time", format!("must be finite and > 0, got {max_time}")));
    }
    let m1_sq = m1 * m1;
    let mut eng = Engine::new(model, x0, z0, params.dt, max_time, params.seed, path_index)?;
    let mut events = Vec::new();
    let mut tau_m1 = None;
    let mut tau_embedded = None;
    let inside0 = norm_sq(x0) <= m1_sq;
    if inside0 {
        tau_m1 = Some(0.0);
    }
    if z0 == Regime::Zero {
        events.push(SwitchEvent::origin_marker(x0));
        if inside0 {
            tau_embedded = Some(0.0);
        }
    }
    let mut next_n = first_switch_index(z0);
    while tau_embedded.is_none() && !eng.finished() {
        let step = eng.advance()?;
        let inside = norm_sq(&eng.x) <= m1_sq;
        // observed on the grid and at accepted switches, never at rejected candidates
        let observed = step.on_grid || step.kind == StepKind::Switched;
        if observed && inside && tau_m1.is_none() {
            tau_m1 = Some(eng.t);
        }
        if step.kind == StepKind::Switched {
            events.push(SwitchEvent {
                n: next_n,
                time: eng.t,
                x_at: eng.x.clone(),
                new_regime: eng.z,
            });
            next_n += 1;
            if inside {
                tau_embedded = Some(eng.t);
            }
        }
    }
    Ok(HitResult {
        tau_m1,
        tau_embedded,
        summary: PathSummary {
            events,
            end_time: eng.t,
            x_end: eng.x,
            z_end: eng.z,
        },
    })
}

/// Runs a path until its first real regime switch (`T_1` from regime 0,
/// `T_0` from regime 1) and hands each step to `visit(t_before, x_before, h)`.
/// Returns the state at the switch, or `None` if `end_time` came first.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_to_first_switch<F>(
    model: &SwitchingDiffusionModel,
    x0: &[f64],
    z0: Regime,
    dt: f64,
    end_time: f64,
    seed: u64,
    path_index: u64,
    mut visit: F,
) -> Result<Option<(f64, Vec<f64>)>>
where
    F: FnMut(f64, &[f64], f64),
{
    let mut eng = Engine::new(model, x0, z0, dt, end_time, seed, path_index)?;
    let mut prev_x = x0.to_vec();
    while !eng.finished() {
        let t_before = eng.t;
        prev_x.copy_from_slice(&eng.x);
        let step = eng.advance()?;
        visit(t_before, &prev_x, step.h);
        if step.kind == StepKind::Switched {
            return Ok(Some((eng.t, eng.x.clone())));
        }
    }
    Ok(None)
}
