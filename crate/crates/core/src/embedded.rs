//! The chain observed at switching times `T_0 < T_1 < …` and the quantities
//! bounded along it: regime holding times, the embedded stopping time
//! `τ = inf{T_n : |X_{T_n}| ≤ M1}`, and the time spent near the origin before
//! the first switch.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{norm_sq, Regime, SwitchingDiffusionModel};
use crate::simulate::{run_to_first_switch, PathRecord, SimParams, SwitchEvent};
use crate::stats::mean_stderr;

/// Switching times of a path, with the `T_0 = 0` marker first when the path starts in regime 0.
pub fn extract_switch_times(path: &PathRecord) -> Vec<SwitchEvent> {
    path.events.clone()
}

/// Earliest `T_n` with `|X_{T_n}| ≤ M1`, or `None` when no event qualifies.
pub fn embedded_tau(events: &[SwitchEvent], m1: f64) -> Option<f64> {
    let m1_sq = m1 * m1;
    events
        .iter()
        .find(|e| norm_sq(&e.x_at) <= m1_sq)
        .map(|e| e.time)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalStats {
    pub regime: Regime,
    pub count: usize,
    pub mean: f64,
    pub stderr: f64,
    /// `1/λ̄_z`
    pub lemma_lo: f64,
    /// `1/λ̲_z`
    pub lemma_hi: f64,
    pub within_bounds: bool,
    /// Open intervals in this regime cut off by the end of a path.
    pub excluded: usize,
}

/// Pools the completed holding times in `regime` over many event lists.
///
/// A holding time runs from an event entering `regime` to the next event. The
/// trailing interval of each list has no closing event and is excluded. A path
/// started in regime 1 has no event at time 0, so its initial stay is not counted.
pub fn interval_stats<'a, I>(
    event_batches: I,
    regime: Regime,
    model: &SwitchingDiffusionModel,
) -> Result<IntervalStats>
where
    I: IntoIterator<Item = &'a [SwitchEvent]>,
{
    let mut durations = Vec::new();
    let mut excluded = 0;
    for events in event_batches {
        for pair in events.windows(2) {
            if pair[0].new_regime == regime {
                durations.push(pair[1].time - pair[0].time);
            }
        }
        if events.last().is_some_and(|e| e.new_regime == regime) {
            excluded += 1;
        }
    }
    if durations.len() < 2 {
        return Err(Error::InsufficientSample(format!(
            "{} completed interval(s) in regime {regime}, need at least 2",
            durations.len()
        )));
    }
    let (mean, stderr) = mean_stderr(&durations);
    let lemma_lo = 1.0 / model.lambda_hi(regime);
    let lemma_hi = 1.0 / model.lambda_lo(regime);
    Ok(IntervalStats {
        regime,
        count: durations.len(),
        mean,
        stderr,
        lemma_lo,
        lemma_hi,
        within_bounds: mean + 3.0 * stderr >= lemma_lo && mean - 3.0 * stderr <= lemma_hi,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationReport {
    /// Inner radius `M`.
    pub m: f64,
    pub start_radius: f64,
    pub z0: Regime,
    /// Mean of `∫_0^{T} 1(inf_{s≤t} |X_s| ≤ M) dt` up to the first switch `T`.
    pub mean_occupation: f64,
    pub stderr: f64,
    pub mean_first_switch: f64,
    pub n_paths: usize,
    /// Paths that reached the horizon before switching; excluded from the means.
    pub n_censored: usize,
    pub warning: Option<String>,
}

/// Time spent after first entering the `M`-ball, accumulated until the first
/// regime switch (`T_1` from regime 0, `T_0` from regime 1).
pub fn occupation_time_near_origin(
    model: &SwitchingDiffusionModel,
    x0: &[f64],
    z0: Regime,
    m: f64,
    params: &SimParams,
    n_paths: usize,
) -> Result<OccupationReport> {
    params.validate()?;
    let start_radius = norm_sq(x0).sqrt();
    if !(m > 0.0) {
        return Err(Error::range("m", format!("must be > 0, got {m}")));
    }
    if start_radius < m {
        return Err(Error::Precondition(format!(
            "start radius {start_radius} lies inside the M = {m} ball"
        )));
    }
    if n_paths < 100 {
        return Err(Error::Precondition(format!("n_paths = {n_paths} < 100")));
    }
    if params.record_stride != 1 {
        return Err(Error::Precondition(
            "occupation integrals need record_stride = 1".into(),
        ));
    }
    let samples: Vec<Option<(f64, f64)>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut running_inf = f64::INFINITY;
            let mut occupation = 0.0;
            let m_sq = m * m;
            let end = run_to_first_switch(
                model,
                x0,
                z0,
                params.dt,
                params.horizon,
                params.seed,
                i,
                |_, x, h| {
                    running_inf = running_inf.min(norm_sq(x));
                    if running_inf <= m_sq {
                        occupation += h;
                    }
                },
            )?;
            Ok(end.map(|(t, _)| (occupation, t)))
        })
        .collect::<Result<_>>()?;
    let observed: Vec<(f64, f64)> = samples.iter().flatten().copied().collect();
    let n_censored = n_paths - observed.len();
    if observed.is_empty() {
        return Err(Error::EstimationFailure(
            "no path switched regime before the horizon".into(),
        ));
    }
    let occ: Vec<f64> = observed.iter().map(|p| p.0).collect();
    let times: Vec<f64> = observed.iter().map(|p| p.1).collect();
    let (mean_occupation, stderr) = mean_stderr(&occ);
    let (mean_first_switch, _) = mean_stderr(&times);
    let warning = (2 * n_censored > n_paths).then(|| {
        format!("{n_censored} of {n_paths} paths censored before the first switch")
    });
    Ok(OccupationReport {
        m,
        start_radius,
        z0,
        mean_occupation,
        stderr,
        mean_first_switch,
        n_paths,
        n_censored,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, reference_spec, IntensityFamily};
    use crate::simulate::simulate_path;
    use proptest::prelude::*;

    fn ev(n: u64, time: f64, x: f64, z: Regime) -> SwitchEvent {
        SwitchEvent {
            n,
            time,
            x_at: vec![x],
            new_regime: z,
        }
    }

    #[test]
    fn extraction_is_verbatim_with_marker() {
        let m = build_model(&reference_spec()).unwrap();
        let p = SimParams::new(1e-3, 10.0, 1);
        let rec = simulate_path(&m, &[3.0], Regime::Zero, &p).unwrap();
        let evs = extract_switch_times(&rec);
        assert_eq!(evs, rec.events);
        assert!(evs[0].is_origin_marker());
        assert!(evs[1..].iter().all(|e| !e.is_origin_marker()));
    }

    #[test]
    fn no_switch_paths() {
        let mut s = reference_spec();
        s.intensity_0 = IntensityFamily::Constant { lambda: 1e-9 };
        s.intensity_1 = IntensityFamily::Constant { lambda: 1e-9 };
        let m = build_model(&s).unwrap();
        let p = SimParams::new(1e-2, 1.0, 0);
        let rec = simulate_path(&m, &[3.0], Regime::Zero, &p).unwrap();
        assert_eq!(extract_switch_times(&rec).len(), 1);
        let rec = simulate_path(&m, &[3.0], Regime::One, &p).unwrap();
        assert!(extract_switch_times(&rec).is_empty());
        assert!(rec.censored);
    }

    #[test]
    fn poisson_event_count() {
        // oracle: N(100) ~ Poisson(100) for unit constant rates
        let mut s = reference_spec();
        s.intensity_0 = IntensityFamily::Constant { lambda: 1.0 };
        s.intensity_1 = IntensityFamily::Constant { lambda: 1.0 };
        let m = build_model(&s).unwrap();
        let rec = simulate_path(&m, &[1.0], Regime::One, &SimParams::new(1e-2, 100.0, 11)).unwrap();
        let n = extract_switch_times(&rec).len() as f64;
        assert!((n - 100.0).abs() <= 4.0 * 10.0, "{n}");
    }

    #[test]
    fn embedded_tau_examples() {
        let evs = vec![ev(0, 0.3, 0.5, Regime::Zero), ev(1, 0.7, 0.1, Regime::One)];
        assert_eq!(embedded_tau(&evs, 2.0), Some(0.3));
        let far = vec![ev(0, 0.3, 5.0, Regime::Zero), ev(1, 0.7, -3.0, Regime::One)];
        assert_eq!(embedded_tau(&far, 2.0), None);
        assert_eq!(embedded_tau(&[], 2.0), None);
    }

    proptest! {
        #[test]
        fn embedded_tau_matches_linear_scan(
            xs in proptest::collection::vec(-6.0..6.0f64, 0..20),
            m1 in 0.1..5.0f64,
        ) {
            let evs: Vec<SwitchEvent> = xs.iter().enumerate()
                .map(|(i, &x)| ev(i as u64, i as f64 + 0.5, x, if i % 2 == 0 { Regime::One } else { Regime::Zero }))
                .collect();
            let mut oracle = None;
            for e in &evs {
                if e.x_at[0].abs() <= m1 {
                    oracle = Some(e.time);
                    break;
                }
            }
            prop_assert_eq!(embedded_tau(&evs, m1), oracle);
        }
    }

    #[test]
    fn interval_stats_pools_and_excludes() {
        let m = build_model(&reference_spec()).unwrap();
        let a = vec![
            ev(0, 0.0, 3.0, Regime::Zero),
            ev(1, 2.0, 3.0, Regime::One),
            ev(2, 2.5, 3.0, Regime::Zero),
            ev(3, 4.0, 3.0, Regime::One),
        ];
        let b = vec![ev(0, 1.0, 3.0, Regime::Zero), ev(1, 4.0, 3.0, Regime::One)];
        let s0 = interval_stats([a.as_slice(), b.as_slice()], Regime::Zero, &m).unwrap();
        assert_eq!(s0.count, 3);
        assert!((s0.mean - (2.0 + 1.5 + 3.0) / 3.0).abs() < 1e-15);
        assert_eq!(s0.excluded, 0);
        assert_eq!((s0.lemma_lo, s0.lemma_hi), (2.0, 2.0));
        let s1 = interval_stats([a.as_slice(), b.as_slice()], Regime::One, &m);
        assert!(matches!(s1, Err(Error::InsufficientSample(_))));
    }

    #[test]
    fn constant_rate_intervals_match_exponential_mean() {
        let m = build_model(&reference_spec()).unwrap();
        let p = SimParams {
            record_stride: 1000,
            ..SimParams::new(1e-2, 3000.0, 21)
        };
        let rec = simulate_path(&m, &[1.0], Regime::Zero, &p).unwrap();
        let s1 = interval_stats([rec.events.as_slice()], Regime::One, &m).unwrap();
        assert!(s1.count > 500);
        assert!(s1.within_bounds);
        assert!((s1.mean - 0.5).abs() <= 3.0 * s1.stderr, "{s1:?}");
        assert_eq!((s1.lemma_lo, s1.lemma_hi), (0.5, 0.5));
    }

    #[test]
    fn occupation_edge_cases() {
        let m = build_model(&reference_spec()).unwrap();
        let p = SimParams::new(1e-3, 200.0, 3);
        // started on the sphere: the indicator is on from t = 0
        let r = occupation_time_near_origin(&m, &[1.0], Regime::Zero, 1.0, &p, 400).unwrap();
        assert_eq!(r.mean_occupation, r.mean_first_switch);
        assert!(r.mean_first_switch + 3.0 * r.stderr >= 2.0 && r.mean_first_switch - 3.0 * r.stderr <= 2.0);
        // far start, tiny ball: never entered before the first switch
        let r = occupation_time_near_origin(&m, &[40.0], Regime::One, 0.5, &p, 200).unwrap();
        assert_eq!(r.mean_occupation, 0.0);
        assert!(r.warning.is_none());

        assert!(occupation_time_near_origin(&m, &[0.5], Regime::Zero, 1.0, &p, 200).is_err());
        assert!(occupation_time_near_origin(&m, &[5.0], Regime::Zero, 1.0, &p, 50).is_err());
        let strided = SimParams { record_stride: 2, ..p };
        assert!(occupation_time_near_origin(&m, &[5.0], Regime::Zero, 1.0, &strided, 200).is_err());
    }

    #[test]
    fn occupation_censoring_warning() {
        let m = build_model(&reference_spec()).unwrap();
        let p = SimParams::new(1e-2, 0.5, 3);
        let r = occupation_time_near_origin(&m, &[5.0], Regime::Zero, 1.0, &p, 100).unwrap();
        assert!(r.warning.is_some());
        assert!(r.n_censored > 50);
    }
}
