//! Dither-gradient tracking of the measurement basis.
//!
//! Each measurement basis has its own controller. The feedback signal is the
//! squared Frobenius distance between the measurement matrix and the
//! identity, `E = 2(j2² + j3²)`. When `E` exceeds the threshold the four
//! squeezer voltages are tuned one at a time: measure `E1`, dither the
//! voltage by `D`, measure `E2`, remove the dither and step by
//! `τ (E2 - E1) / D`. Sweeps repeat until `E` drops under the threshold.
//! A voltage that would leave its drive range is reset to the range center.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{ChannelModel, EpcParams, EpcState};
use crate::photon_sim::{
    measurement_matrix, outcome_probs, qber_from_tally, reveal_sample, simulate_batch,
    simulate_batch_per_pulse, Basis, BatchOptics, DetectionTally, MeasurementMatrix, SourceParams,
};
use crate::poincare::Rotation;
use crate::series::{Row, TimeSeries};

/// Squared Frobenius distance between `mm` and the identity.
pub fn feedback_error(mm: &MeasurementMatrix) -> f64 {
    2.0 * (mm.j2 * mm.j2 + mm.j3 * mm.j3)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Dither voltage `D`, volts.
    pub dither: f64,
    /// Step gain `τ`, volts² per unit of `E`. Negative to descend.
    pub tau: f64,
    /// Correction starts once `E` reaches this value.
    pub e_threshold: f64,
    /// Fraction of sifted events revealed for each `E` evaluation.
    pub sample_fraction: f64,
    /// Maximum sweeps over the four squeezers per feedback cycle.
    pub max_cycles_per_correction: u32,
    /// Pulses simulated per `E` evaluation.
    pub batch_pulses: u64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            dither: 1.0,
            tau: -300.0,
            e_threshold: 0.002,
            sample_fraction: 0.1,
            max_cycles_per_correction: 200,
            // ≈25k sifted events per basis at the default link, so ≈2500
            // revealed
            batch_pulses: 100_000_000,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let f = |name: &str| format!("{prefix}.{name}");
        if !(self.dither.is_finite() && self.dither > 0.0) {
            return Err(Error::config(f("dither"), "must be > 0"));
        }
        // -0.0 is accepted: it freezes the controller
        if !(self.tau.is_finite() && self.tau.is_sign_negative()) {
            return Err(Error::config(f("tau"), "must be negative"));
        }
        if !(self.e_threshold > 0.0 && self.e_threshold < 2.0) {
            return Err(Error::config(f("e_threshold"), "must lie in (0, 2)"));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(Error::config(f("sample_fraction"), "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Controller of one measurement basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub epc: EpcState,
    /// Most recent `E`; `None` until the first measurement.
    pub last_e: Option<f64>,
    pub cycle_count: u64,
    pub correction_active: bool,
    /// Range resets during the latest cycle.
    pub recenter_events: u32,
    /// False when the latest correction ran out of sweeps.
    pub converged: bool,
}

impl ControllerState {
    pub fn new(epc: EpcState) -> Self {
        ControllerState {
            epc,
            last_e: None,
            cycle_count: 0,
            correction_active: false,
            recenter_events: 0,
            converged: true,
        }
    }
}

/// Source of feedback measurements for a controller.
pub trait ErrorProbe {
    /// Returns `E` for `basis` with the basis arm's controller set to `epc`.
    fn measure_e(&mut self, epc: &EpcState, basis: Basis) -> Result<f64>;
}

/// Exact `E` of a plant without shot noise.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticProbe {
    pub channel: Rotation,
    noise: Option<(SourceParams, f64)>,
}

impl AnalyticProbe {
    /// Ideal detectors: `j2 = j3 = (1 - a·R a) / 2`.
    pub fn noiseless(channel: Rotation) -> Self {
        AnalyticProbe {
            channel,
            noise: None,
        }
    }

    /// Expected matrix including dark counts and the misalignment floor.
    pub fn with_source(channel: Rotation, src: SourceParams, eta: f64) -> Self {
        AnalyticProbe {
            channel,
            noise: Some((src, eta)),
        }
    }

    pub fn matrix(&self, epc: &EpcState, basis: Basis) -> MeasurementMatrix {
        let r = Rotation::compose(&epc.rotation(), &self.channel);
        let j = |bit: usize| {
            let sent = basis.state(bit);
            let arriving = r.apply(sent);
            match &self.noise {
                None => 0.5 * (1.0 - arriving.dot(&sent)).max(0.0),
                Some((src, eta)) => {
                    let p = outcome_probs(&arriving, &sent, src, *eta);
                    p.wrong / (p.correct + p.wrong)
                }
            }
        };
        let (j2, j3) = (j(0), j(1));
        MeasurementMatrix {
            j1: 1.0 - j2,
            j2,
            j3,
            j4: 1.0 - j3,
        }
    }

    pub fn error(&self, epc: &EpcState, basis: Basis) -> f64 {
        feedback_error(&self.matrix(epc, basis))
    }
}

impl ErrorProbe for AnalyticProbe {
    fn measure_e(&mut self, epc: &EpcState, basis: Basis) -> Result<f64> {
        Ok(self.error(epc, basis))
    }
}

/// Which batch sampler a Monte Carlo probe uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampler {
    /// Binomial-chain sampler, O(1) per batch.
    #[default]
    Aggregated,
    /// Literal per-pulse loop.
    PerPulse,
}

/// Batch size and reveal fraction of one basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampling {
    pub batch_pulses: u64,
    pub sample_fraction: f64,
}

impl From<&ControllerConfig> for Sampling {
    fn from(c: &ControllerConfig) -> Self {
        Sampling {
            batch_pulses: c.batch_pulses,
            sample_fraction: c.sample_fraction,
        }
    }
}

/// Measures `E` from fresh simulated batches. Every batch is sifted key
/// material; all of it accumulates in [`MonteCarloProbe::key_tally`].
#[derive(Debug, Clone)]
pub struct MonteCarloProbe<R> {
    pub channel: Rotation,
    arms: [Rotation; 2],
    src: SourceParams,
    eta: f64,
    sampling: [Sampling; 2],
    sampler: Sampler,
    rng: R,
    pub key_tally: DetectionTally,
}

impl<R: Rng> MonteCarloProbe<R> {
    pub fn new(src: SourceParams, eta: f64, sampling: [Sampling; 2], rng: R) -> Self {
        MonteCarloProbe {
            channel: Rotation::IDENTITY,
            arms: [Rotation::IDENTITY; 2],
            src,
            eta,
            sampling,
            sampler: Sampler::Aggregated,
            rng,
            key_tally: DetectionTally::default(),
        }
    }

    pub fn with_sampler(mut self, sampler: Sampler) -> Self {
        self.sampler = sampler;
        self
    }

    pub fn set_arm(&mut self, basis: Basis, epc: &EpcState) {
        self.arms[basis.index()] = epc.rotation();
    }

    pub fn optics(&self) -> BatchOptics {
        BatchOptics {
            channel: self.channel,
            epc_z: self.arms[0],
            epc_x: self.arms[1],
        }
    }

    /// Simulates one batch at the current settings.
    pub fn batch(&mut self, n_pulses: u64) -> Result<DetectionTally> {
        if n_pulses == 0 {
            return Err(Error::InsufficientData("batch of zero pulses".into()));
        }
        let optics = self.optics();
        let tally = match self.sampler {
            Sampler::Aggregated => {
                simulate_batch(n_pulses, &optics, &self.src, self.eta, &mut self.rng)?
            }
            Sampler::PerPulse => {
                simulate_batch_per_pulse(n_pulses, &optics, &self.src, self.eta, &mut self.rng)?
            }
        };
        self.key_tally += tally;
        Ok(tally)
    }

    /// `E` of the revealed part of `tally`.
    pub fn revealed_error(&mut self, tally: &DetectionTally, basis: Basis) -> Result<f64> {
        let fraction = self.sampling[basis.index()].sample_fraction;
        let revealed = reveal_sample(tally, fraction, &mut self.rng)?;
        Ok(feedback_error(&measurement_matrix(&revealed, basis)?))
    }

    pub fn take_key_tally(&mut self) -> DetectionTally {
        std::mem::take(&mut self.key_tally)
    }
}

impl<R: Rng> ErrorProbe for MonteCarloProbe<R> {
    fn measure_e(&mut self, epc: &EpcState, basis: Basis) -> Result<f64> {
        self.set_arm(basis, epc);
        let tally = self.batch(self.sampling[basis.index()].batch_pulses)?;
        self.revealed_error(&tally, basis)
    }
}

/// Fresh `E` for the controller's current voltages.
pub fn measure_e<P: ErrorProbe + ?Sized>(
    state: &ControllerState,
    basis: Basis,
    probe: &mut P,
) -> Result<f64> {
    probe.measure_e(&state.epc, basis)
}

/// What one squeezer adjustment did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adjustment {
    pub e1: f64,
    pub e2: f64,
    /// Signed dither actually applied (negative at the top of the range).
    pub dither: f64,
    pub recentered: bool,
}

/// Tunes squeezer `index` (0-based) once.
///
/// The dither is applied downwards when `v + D` would exceed the range.
pub fn adjust_squeezer<P: ErrorProbe + ?Sized>(
    state: &mut ControllerState,
    index: usize,
    basis: Basis,
    cfg: &ControllerConfig,
    probe: &mut P,
) -> Result<Adjustment> {
    if index >= 4 {
        return Err(Error::InvalidArgument(format!(
            "squeezer index {index} out of range"
        )));
    }
    let v = state.epc.squeezer(index).voltage();
    let e1 = measure_e(state, basis, probe)?;
    let sq = state.epc.squeezer(index);
    let d = if sq.in_range(v + cfg.dither) {
        cfg.dither
    } else {
        -cfg.dither
    };
    state.epc.squeezer_mut(index).set_voltage(v + d)?;
    let e2 = match measure_e(state, basis, probe) {
        Ok(e) => e,
        Err(err) => {
            state.epc.squeezer_mut(index).set_voltage(v)?;
            return Err(err);
        }
    };
    // remove the dither and take the gradient step from the original voltage
    let target = v + cfg.tau * (e2 - e1) / d;
    let sq = state.epc.squeezer_mut(index);
    let recentered = if sq.in_range(target) {
        sq.set_voltage(target)?;
        false
    } else {
        sq.recenter();
        state.recenter_events += 1;
        true
    };
    state.last_e = Some(e2);
    Ok(Adjustment {
        e1,
        e2,
        dither: d,
        recentered,
    })
}

/// Summary of one control cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CycleReport {
    /// `E` was already under the threshold; voltages untouched.
    pub held: bool,
    pub converged: bool,
    pub sweeps: u32,
    pub recenters: u32,
}

/// One feedback cycle for one basis: hold while `E` is under the threshold,
/// otherwise sweep the four squeezers until it is, or until
/// `max_cycles_per_correction` sweeps have run. `E` is re-measured at the
/// settled voltages after every sweep.
pub fn control_cycle<P: ErrorProbe + ?Sized>(
    state: &mut ControllerState,
    basis: Basis,
    cfg: &ControllerConfig,
    probe: &mut P,
) -> Result<CycleReport> {
    state.cycle_count += 1;
    state.recenter_events = 0;
    let e = match state.last_e {
        Some(e) => e,
        None => {
            let e = measure_e(state, basis, probe)?;
            state.last_e = Some(e);
            e
        }
    };
    if e < cfg.e_threshold {
        state.correction_active = false;
        state.converged = true;
        return Ok(CycleReport {
            held: true,
            converged: true,
            sweeps: 0,
            recenters: 0,
        });
    }
    state.correction_active = true;
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < cfg.max_cycles_per_correction {
        for i in 0..4 {
            adjust_squeezer(state, i, basis, cfg, probe)?;
        }
        sweeps += 1;
        // E2 was taken at a dithered voltage; judge the settled voltages
        let e = measure_e(state, basis, probe)?;
        state.last_e = Some(e);
        if e < cfg.e_threshold {
            converged = true;
            break;
        }
    }
    state.correction_active = !converged;
    state.converged = converged;
    Ok(CycleReport {
        held: false,
        converged,
        sweeps,
        recenters: state.recenter_events,
    })
}

/// Channel and controller-axis evolution shared by both bases.
#[derive(Debug, Clone)]
pub struct World<R> {
    pub channel: ChannelModel,
    pub epc_params: EpcParams,
    pub channel_rng: R,
    pub drift_rng: R,
}

/// Run-level settings of [`track`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackSettings {
    pub controllers: [ControllerConfig; 2],
    pub fc_seconds: f64,
    pub control_enabled: bool,
}

/// Closed-loop run over `duration` feedback cycles.
///
/// Per cycle: advance the channel and the squeezer axes, simulate one
/// monitoring batch, estimate `E` per basis from its revealed part, then run
/// the Z controller and the X controller in that order. The recorded error
/// rate is the sifted error rate of the monitoring batch, i.e. the state the
/// link was in before this cycle's correction.
pub fn track<R: Rng, Q: Rng>(
    z: &mut ControllerState,
    x: &mut ControllerState,
    world: &mut World<R>,
    probe: &mut MonteCarloProbe<Q>,
    settings: &TrackSettings,
    duration: u64,
) -> TimeSeries {
    let mut series = TimeSeries::new();
    let monitor_pulses = settings.controllers[0]
        .batch_pulses
        .max(settings.controllers[1].batch_pulses);
    for cycle in 0..duration {
        probe.channel = world.channel.step(1.0, &mut world.channel_rng);
        let sigma = world.epc_params.axis_drift_sigma;
        z.epc = z.epc.drift_axes(sigma, 1.0, &mut world.drift_rng);
        x.epc = x.epc.drift_axes(sigma, 1.0, &mut world.drift_rng);
        probe.set_arm(Basis::Z, &z.epc);
        probe.set_arm(Basis::X, &x.epc);

        let mut ok = true;
        let (mut qber, mut e) = (f64::NAN, [f64::NAN; 2]);
        match probe.batch(monitor_pulses) {
            Ok(tally) => {
                qber = qber_from_tally(&tally).unwrap_or(f64::NAN);
                for basis in Basis::ALL {
                    match probe.revealed_error(&tally, basis) {
                        Ok(v) => e[basis.index()] = v,
                        Err(_) => ok = false,
                    }
                }
            }
            Err(_) => ok = false,
        }
        probe.take_key_tally();

        let mut recenter = 0;
        if settings.control_enabled {
            for (basis, state) in [(Basis::Z, &mut *z), (Basis::X, &mut *x)] {
                let ev = e[basis.index()];
                state.last_e = ev.is_finite().then_some(ev);
                match control_cycle(state, basis, &settings.controllers[basis.index()], probe) {
                    Ok(report) => {
                        ok &= report.converged;
                        recenter += report.recenters;
                    }
                    Err(_) => {
                        ok = false;
                        recenter += state.recenter_events;
                    }
                }
            }
        }
        let zv = z.epc.voltages();
        let xv = x.epc.voltages();
        series.push(Row::new(
            cycle,
            settings.fc_seconds,
            qber,
            e,
            [zv[0], zv[1], zv[2], zv[3], xv[0], xv[1], xv[2], xv[3]],
            recenter,
            ok,
        ));
    }
    series
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poincare::StokesVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn epc() -> EpcState {
        EpcState::nominal(&EpcParams::default()).unwrap()
    }

    #[test]
    fn feedback_error_examples() {
        assert_eq!(feedback_error(&MeasurementMatrix::IDENTITY), 0.0);
        let mm = MeasurementMatrix::from_off_diagonal(0.5, 0.5).unwrap();
        assert_eq!(feedback_error(&mm), 1.0);
        let probe = AnalyticProbe::noiseless(Rotation::about(StokesVector::D, 60f64.to_radians()));
        let mm = probe.matrix(&epc(), Basis::Z);
        assert!((mm.j2 - 0.25).abs() < 1e-12 && (mm.j3 - 0.25).abs() < 1e-12);
        assert!((probe.error(&epc(), Basis::Z) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn frobenius_identity_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let mm = MeasurementMatrix::from_off_diagonal(rng.random(), rng.random()).unwrap();
            let rows = mm.as_rows();
            let ident = [[1.0, 0.0], [0.0, 1.0]];
            let full: f64 = (0..2)
                .flat_map(|i| (0..2).map(move |j| (i, j)))
                .map(|(i, j)| (rows[i][j] - ident[i][j]).powi(2))
                .sum();
            let e = feedback_error(&mm);
            assert!((full - e).abs() < 1e-15);
            assert!((0.0..=4.0).contains(&e));
        }
    }

    #[test]
    fn config_validation() {
        assert!(ControllerConfig::default().validate("c").is_ok());
        let bad = ControllerConfig {
            tau: 1.0,
            ..ControllerConfig::default()
        };
        assert!(matches!(bad.validate("c"), Err(Error::Config { .. })));
        let frozen = ControllerConfig {
            tau: -0.0,
            ..ControllerConfig::default()
        };
        assert!(frozen.validate("c").is_ok());
        let bad = ControllerConfig {
            sample_fraction: 0.0,
            ..ControllerConfig::default()
        };
        assert!(bad.validate("c").is_err());
    }

    #[test]
    fn aligned_noiseless_plant_reads_zero() {
        let mut probe = MonteCarloProbe::new(
            SourceParams::ideal(0.1),
            0.01,
            [Sampling::from(&ControllerConfig::default()); 2],
            ChaCha8Rng::seed_from_u64(1),
        );
        let state = ControllerState::new(epc());
        for basis in Basis::ALL {
            assert_eq!(measure_e(&state, basis, &mut probe).unwrap(), 0.0);
        }
    }

    #[test]
    fn zero_batch_is_insufficient() {
        let cfg = ControllerConfig {
            batch_pulses: 0,
            ..ControllerConfig::default()
        };
        let mut probe = MonteCarloProbe::new(
            SourceParams::default(),
            0.01,
            [Sampling::from(&cfg); 2],
            ChaCha8Rng::seed_from_u64(1),
        );
        let state = ControllerState::new(epc());
        assert!(matches!(
            measure_e(&state, Basis::Z, &mut probe),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn small_batch_surfaces_empty_row() {
        let cfg = ControllerConfig {
            batch_pulses: 10,
            ..ControllerConfig::default()
        };
        let mut probe = MonteCarloProbe::new(
            SourceParams::default(),
            0.01,
            [Sampling::from(&cfg); 2],
            ChaCha8Rng::seed_from_u64(1),
        );
        let state = ControllerState::new(epc());
        assert!(matches!(
            measure_e(&state, Basis::X, &mut probe),
            Err(Error::EmptyRow {
                basis: Basis::X,
                ..
            })
        ));
    }

    #[test]
    fn monte_carlo_e_converges_to_analytic() {
        let channel = Rotation::about(StokesVector::new(0.0, 0.6, 0.8).unwrap(), 0.5);
        let analytic = AnalyticProbe::noiseless(channel).error(&epc(), Basis::Z);
        let mut probe = MonteCarloProbe::new(
            SourceParams::ideal(0.1),
            0.01,
            [Sampling::from(&ControllerConfig::default()); 2],
            ChaCha8Rng::seed_from_u64(21),
        );
        probe.channel = channel;
        let state = ControllerState::new(epc());
        let n = 100;
        let e: Vec<f64> = (0..n)
            .map(|_| measure_e(&state, Basis::Z, &mut probe).unwrap())
            .collect();
        let mean = e.iter().sum::<f64>() / n as f64;
        let sd = (e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        // E is a convex function of the sample j's; its small bias is well
        // inside three standard errors at this sample size
        assert!(
            (mean - analytic).abs() < 3.0 * sd / (n as f64).sqrt(),
            "{mean} vs {analytic}"
        );
    }

    #[test]
    fn flat_response_keeps_voltage() {
        let mut state = ControllerState::new(epc());
        state.epc.squeezer_mut(1).set_voltage(33.3).unwrap();
        // aligned noiseless plant about the squeezer axis: E stays zero
        let mut probe = AnalyticProbe::noiseless(Rotation::IDENTITY);
        let mut flat = state.clone();
        flat.epc.set_voltages([75.0, 75.0, 75.0, 75.0]).unwrap();
        let adj = adjust_squeezer(
            &mut flat,
            0,
            Basis::Z,
            &ControllerConfig::default(),
            &mut probe,
        )
        .unwrap();
        assert_eq!(adj.e1, adj.e2);
        assert_eq!(flat.epc.squeezer(0).voltage(), 75.0);
        assert!(!adj.recentered);
    }

    #[test]
    fn update_opposes_the_gradient() {
        let cfg = ControllerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        for _ in 0..200 {
            let axis = crate::optics::random_unit(&mut rng);
            let channel = Rotation::about(axis, rng.random_range(0.2..1.4));
            let mut probe = AnalyticProbe::noiseless(channel);
            let mut state = ControllerState::new(epc());
            let mut v = [0.0; 4];
            for x in v.iter_mut() {
                *x = rng.random_range(20.0..130.0);
            }
            state.epc.set_voltages(v).unwrap();
            let i = rng.random_range(0..4);
            // central finite difference with step D/10
            let h = cfg.dither / 10.0;
            let e_at = |dv: f64| {
                let mut s = state.epc;
                s.squeezer_mut(i).set_voltage(v[i] + dv).unwrap();
                probe.error(&s, Basis::Z)
            };
            let grad = (e_at(h) - e_at(-h)) / (2.0 * h);
            let curvature = (e_at(h) - 2.0 * e_at(0.0) + e_at(-h)) / (h * h);
            // the forward difference over D keeps the sign only while the
            // slope dominates the curvature term
            if grad.abs() <= curvature.abs() * cfg.dither {
                continue;
            }
            adjust_squeezer(&mut state, i, Basis::Z, &cfg, &mut probe).unwrap();
            let step = state.epc.squeezer(i).voltage() - v[i];
            assert_eq!(step.signum(), -grad.signum(), "grad {grad} step {step}");
            checked += 1;
        }
        assert!(checked > 100);
    }

    #[test]
    fn out_of_range_update_recenters() {
        // probe whose E jumps by a large amount after the dither
        struct Jump(u32);
        impl ErrorProbe for Jump {
            fn measure_e(&mut self, _: &EpcState, _: Basis) -> Result<f64> {
                self.0 += 1;
                Ok(if self.0 % 2 == 1 { 0.5 } else { 0.4 })
            }
        }
        let cfg = ControllerConfig::default();
        let mut state = ControllerState::new(epc());
        // τ (E2 - E1) / D = -300 * -0.1 = +30 V; from 130 V this lands at 160 V
        state.epc.squeezer_mut(2).set_voltage(130.0).unwrap();
        let adj = adjust_squeezer(&mut state, 2, Basis::X, &cfg, &mut Jump(0)).unwrap();
        assert!(adj.recentered);
        assert_eq!(state.epc.squeezer(2).voltage(), 75.0);
        assert_eq!(state.recenter_events, 1);
    }

    #[test]
    fn dither_goes_down_at_top_of_range() {
        let cfg = ControllerConfig::default();
        let mut state = ControllerState::new(epc());
        state.epc.squeezer_mut(0).set_voltage(149.5).unwrap();
        let mut probe = AnalyticProbe::noiseless(Rotation::about(StokesVector::R, 0.4));
        let adj = adjust_squeezer(&mut state, 0, Basis::Z, &cfg, &mut probe).unwrap();
        assert_eq!(adj.dither, -1.0);
    }

    #[test]
    fn below_threshold_holds() {
        let cfg = ControllerConfig::default();
        let mut state = ControllerState::new(epc());
        state.last_e = Some(0.001);
        let before = state.epc.voltages();
        let mut probe = AnalyticProbe::noiseless(Rotation::about(StokesVector::R, 1.0));
        let r = control_cycle(&mut state, Basis::Z, &cfg, &mut probe).unwrap();
        assert!(r.held && r.converged);
        assert_eq!(state.epc.voltages(), before);
    }

    #[test]
    fn converges_from_thirty_degrees() {
        let cfg = ControllerConfig::default();
        let channel = Rotation::about(
            StokesVector::new(0.0, 0.6, 0.8).unwrap(),
            30f64.to_radians(),
        );
        let mut probe = AnalyticProbe::noiseless(channel);
        for basis in Basis::ALL {
            let mut state = ControllerState::new(epc());
            let r = control_cycle(&mut state, basis, &cfg, &mut probe).unwrap();
            assert!(r.converged, "{basis}: {r:?}");
            let mm = probe.matrix(&state.epc, basis);
            let e = feedback_error(&mm);
            assert!(e < cfg.e_threshold);
            // Cauchy-Schwarz: j2 + j3 <= sqrt(2 (j2² + j3²)) = sqrt(E)
            let basis_error = (mm.j2 + mm.j3) / 2.0;
            assert!(basis_error <= e.sqrt() / 2.0 + 1e-15);
            assert!(basis_error < cfg.e_threshold.sqrt() / 2.0);
        }
    }

    #[test]
    fn frozen_gain_never_converges() {
        let cfg = ControllerConfig {
            tau: -0.0,
            max_cycles_per_correction: 5,
            ..ControllerConfig::default()
        };
        let mut probe = AnalyticProbe::noiseless(Rotation::about(StokesVector::R, 0.8));
        let mut state = ControllerState::new(epc());
        state.epc.set_voltages([12.5, 99.0, 140.25, 3.0]).unwrap();
        let before = state.epc.voltages();
        let r = control_cycle(&mut state, Basis::Z, &cfg, &mut probe).unwrap();
        assert!(!r.converged);
        assert_eq!(r.sweeps, 5);
        assert_eq!(state.epc.voltages(), before);
    }

    #[test]
    fn gradient_estimate_is_first_order() {
        // forward-difference error halves with the dither
        let channel = Rotation::about(StokesVector::new(0.48, 0.6, 0.64).unwrap(), 0.9);
        let probe = AnalyticProbe::noiseless(channel);
        let mut e = epc();
        e.set_voltages([60.0, 90.0, 70.0, 80.0]).unwrap();
        let at = |dv: f64| {
            let mut s = e;
            s.squeezer_mut(1).set_voltage(90.0 + dv).unwrap();
            probe.error(&s, Basis::X)
        };
        let h = 1e-4;
        let truth = (at(h) - at(-h)) / (2.0 * h);
        let err = |d: f64| ((at(d) - at(0.0)) / d - truth).abs();
        let ratio = err(1.0) / err(0.5);
        assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn zero_error_iff_basis_axis_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for basis in Basis::ALL {
            for k in 0..200 {
                // half the cases rotate about the basis axis itself
                let axis = if k % 2 == 0 {
                    basis.axis()
                } else {
                    crate::optics::random_unit(&mut rng)
                };
                let channel = Rotation::about(axis, rng.random_range(0.1..3.0));
                let probe = AnalyticProbe::noiseless(channel);
                let e = probe.error(&epc(), basis);
                let fixed = channel.apply(basis.axis()).angle_to(&basis.axis()) < 1e-9;
                let optics = BatchOptics {
                    channel,
                    ..BatchOptics::aligned()
                };
                let q = crate::photon_sim::expected_basis_qber(
                    &optics,
                    basis,
                    &SourceParams::ideal(0.1),
                    0.01,
                );
                assert_eq!(e < 1e-15, fixed, "{basis} {k}");
                assert_eq!(q < 1e-12, fixed);
            }
        }
    }
}
