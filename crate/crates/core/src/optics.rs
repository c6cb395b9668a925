//! Physical plant: the four-squeezer polarization controller, the fiber
//! channel and the link budget.
//!
//! A squeezer rotates the polarization about its (slowly wandering) axis by
//! an angle linear in the drive voltage. Squeezers 1 and 3 share a nominal
//! axis on `+s1`; squeezers 2 and 4 share one on `+s2`, a quarter turn away
//! on the equator.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poincare::{cross, norm, Rotation, StokesVector};

/// Static description of one controller model, shared by all squeezers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpcParams {
    /// Rotation per volt, radians.
    pub gain: f64,
    /// Relative per-squeezer gain spread; each squeezer draws a factor in
    /// `[1 - gain_jitter, 1 + gain_jitter]`.
    pub gain_jitter: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Largest angle an axis may wander from its nominal direction, degrees.
    pub max_axis_wander_deg: f64,
    /// Axis random-walk step, radians per feedback cycle.
    pub axis_drift_sigma: f64,
}

impl Default for EpcParams {
    fn default() -> Self {
        EpcParams {
            gain: std::f64::consts::PI / 75.0,
            gain_jitter: 0.1,
            v_min: 0.0,
            v_max: 150.0,
            max_axis_wander_deg: 10.0,
            axis_drift_sigma: 2e-3,
        }
    }
}

impl EpcParams {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let f = |name: &str| format!("{prefix}.{name}");
        if !(self.gain.is_finite() && self.gain > 0.0) {
            return Err(Error::config(f("gain"), "must be positive"));
        }
        if !(0.0..1.0).contains(&self.gain_jitter) {
            return Err(Error::config(f("gain_jitter"), "must lie in [0, 1)"));
        }
        if !(self.v_min.is_finite() && self.v_max.is_finite() && self.v_min < self.v_max) {
            return Err(Error::config(
                f("v_max"),
                "voltage range must satisfy v_min < v_max",
            ));
        }
        if !(0.0..=180.0).contains(&self.max_axis_wander_deg) {
            return Err(Error::config(
                f("max_axis_wander_deg"),
                "must lie in [0, 180]",
            ));
        }
        if !(self.axis_drift_sigma.is_finite() && self.axis_drift_sigma >= 0.0) {
            return Err(Error::config(f("axis_drift_sigma"), "must be non-negative"));
        }
        Ok(())
    }
}

/// One fiber squeezer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqueezerState {
    axis: StokesVector,
    nominal_axis: StokesVector,
    gain: f64,
    voltage: f64,
    v_min: f64,
    v_max: f64,
    max_axis_wander: f64,
}

impl SqueezerState {
    /// A squeezer on its nominal axis, driven at the center of its range.
    pub fn new(
        nominal_axis: StokesVector,
        gain: f64,
        v_min: f64,
        v_max: f64,
        max_axis_wander: f64,
    ) -> Result<Self> {
        if !(gain.is_finite() && gain > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gain must be positive, got {gain}"
            )));
        }
        if !(v_min.is_finite() && v_max.is_finite() && v_min < v_max) {
            return Err(Error::InvalidArgument(format!(
                "invalid voltage range [{v_min}, {v_max}]"
            )));
        }
        Ok(SqueezerState {
            axis: nominal_axis,
            nominal_axis,
            gain,
            voltage: 0.5 * (v_min + v_max),
            v_min,
            v_max,
            max_axis_wander,
        })
    }

    pub fn axis(&self) -> StokesVector {
        self.axis
    }

    pub fn nominal_axis(&self) -> StokesVector {
        self.nominal_axis
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn voltage(&self) -> f64 {
        self.voltage
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    /// Center of the drive range.
    pub fn center(&self) -> f64 {
        0.5 * (self.v_min + self.v_max)
    }

    pub fn in_range(&self, v: f64) -> bool {
        v >= self.v_min && v <= self.v_max
    }

    pub fn set_voltage(&mut self, v: f64) -> Result<()> {
        if !self.in_range(v) {
            return Err(Error::InvalidArgument(format!(
                "voltage {v} outside [{}, {}]",
                self.v_min, self.v_max
            )));
        }
        self.voltage = v;
        Ok(())
    }

    pub fn recenter(&mut self) {
        self.voltage = self.center();
    }

    /// Moves the axis, clamping it to the wander cone around the nominal
    /// axis.
    pub fn set_axis(&mut self, axis: StokesVector) {
        self.axis = clamp_to_cone(axis, self.nominal_axis, self.max_axis_wander);
    }

    /// Rotation currently applied by this squeezer: angle `gain * voltage`
    /// about its axis.
    pub fn rotation(&self) -> Rotation {
        Rotation::about(self.axis, self.gain * self.voltage)
    }
}

fn clamp_to_cone(axis: StokesVector, nominal: StokesVector, cap: f64) -> StokesVector {
    if axis.angle_to(&nominal) <= cap {
        return axis;
    }
    let d = axis.dot(&nominal);
    let a = axis.to_array();
    let n = nominal.to_array();
    let perp = [a[0] - d * n[0], a[1] - d * n[1], a[2] - d * n[2]];
    if norm(perp) < 1e-12 {
        // antipodal: any direction on the cone will do
        let t = any_perpendicular(nominal);
        return cone_point(nominal, t, cap);
    }
    cone_point(nominal, StokesVector::renormalize(perp), cap)
}

fn cone_point(nominal: StokesVector, dir: StokesVector, angle: f64) -> StokesVector {
    let (s, c) = angle.sin_cos();
    let n = nominal.to_array();
    let t = dir.to_array();
    StokesVector::renormalize([
        c * n[0] + s * t[0],
        c * n[1] + s * t[1],
        c * n[2] + s * t[2],
    ])
}

fn any_perpendicular(v: StokesVector) -> StokesVector {
    let a = v.to_array();
    let helper = if a[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    StokesVector::renormalize(cross(a, helper))
}

/// Uniform random direction perpendicular to `v`.
fn random_perpendicular<R: Rng + ?Sized>(v: StokesVector, rng: &mut R) -> StokesVector {
    let a = v.to_array();
    loop {
        let g: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let d = g[0] * a[0] + g[1] * a[1] + g[2] * a[2];
        let p = [g[0] - d * a[0], g[1] - d * a[1], g[2] - d * a[2]];
        if norm(p) > 1e-9 {
            return StokesVector::renormalize(p);
        }
    }
}

/// Uniform random point on the sphere.
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> StokesVector {
    loop {
        let g: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        if norm(g) > 1e-9 {
            return StokesVector::renormalize(g);
        }
    }
}

/// The four-squeezer controller `X1..X4`. Light traverses `X1` first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpcState {
    squeezers: [SqueezerState; 4],
}

impl EpcState {
    pub fn new(squeezers: [SqueezerState; 4]) -> Result<Self> {
        let n = |i: usize| squeezers[i].nominal_axis;
        if n(0).angle_to(&n(2)) > 1e-9 || n(1).angle_to(&n(3)) > 1e-9 {
            return Err(Error::InvalidArgument(
                "squeezers 1/3 and 2/4 must share nominal axes".into(),
            ));
        }
        if n(0).dot(&n(1)).abs() > 1e-9 {
            return Err(Error::InvalidArgument(
                "the two nominal axes must be a quarter turn apart".into(),
            ));
        }
        Ok(EpcState { squeezers })
    }

    /// Controller with identical nominal gains and every squeezer at its
    /// range center.
    pub fn nominal(params: &EpcParams) -> Result<Self> {
        Self::with_gains(params, [params.gain; 4])
    }

    /// Controller whose squeezer gains are spread by `params.gain_jitter`.
    pub fn with_jitter<R: Rng + ?Sized>(params: &EpcParams, rng: &mut R) -> Result<Self> {
        let j = params.gain_jitter;
        let mut gains = [params.gain; 4];
        for g in gains.iter_mut() {
            let u: f64 = rng.random_range(-1.0..=1.0);
            *g *= 1.0 + j * u;
        }
        Self::with_gains(params, gains)
    }

    fn with_gains(params: &EpcParams, gains: [f64; 4]) -> Result<Self> {
        let wander = params.max_axis_wander_deg.to_radians();
        let axes = [
            StokesVector::H,
            StokesVector::D,
            StokesVector::H,
            StokesVector::D,
        ];
        let mut sq = Vec::with_capacity(4);
        for (axis, gain) in axes.into_iter().zip(gains) {
            sq.push(SqueezerState::new(
                axis,
                gain,
                params.v_min,
                params.v_max,
                wander,
            )?);
        }
        EpcState::new([sq[0], sq[1], sq[2], sq[3]])
    }

    pub fn squeezers(&self) -> &[SqueezerState; 4] {
        &self.squeezers
    }

    pub fn squeezer(&self, i: usize) -> &SqueezerState {
        &self.squeezers[i]
    }

    pub fn squeezer_mut(&mut self, i: usize) -> &mut SqueezerState {
        &mut self.squeezers[i]
    }

    pub fn voltages(&self) -> [f64; 4] {
        self.squeezers.map(|s| s.voltage)
    }

    pub fn set_voltages(&mut self, v: [f64; 4]) -> Result<()> {
        for (s, v) in self.squeezers.iter_mut().zip(v) {
            s.set_voltage(v)?;
        }
        Ok(())
    }

    /// Composite rotation `R4 ∘ R3 ∘ R2 ∘ R1`.
    pub fn rotation(&self) -> Rotation {
        self.squeezers.iter().fold(Rotation::IDENTITY, |acc, s| {
            Rotation::compose(&s.rotation(), &acc)
        })
    }

    /// Random-walks every squeezer axis by an angle of standard deviation
    /// `sigma * sqrt(dt)` in a uniformly random tangent direction, then
    /// re-projects onto the wander cone.
    pub fn drift_axes<R: Rng + ?Sized>(&self, sigma: f64, dt: f64, rng: &mut R) -> EpcState {
        let mut out = *self;
        if sigma == 0.0 || dt <= 0.0 {
            return out;
        }
        let step = sigma * dt.sqrt();
        for s in out.squeezers.iter_mut() {
            let t = random_perpendicular(s.axis, rng);
            let g: f64 = StandardNormal.sample(rng);
            s.set_axis(cone_point(s.axis, t, step * g));
        }
        out
    }
}

/// Fiber channel between the state preparation and Bob's controllers.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelModel {
    /// Fixed misalignment.
    Static { rotation: Rotation },
    /// Each cycle the channel picks up a small rotation of standard deviation
    /// `step_sigma * sqrt(dt)` radians about a random axis, which is
    /// resampled every `axis_resample_period` cycles.
    RandomWalk {
        step_sigma: f64,
        current: Rotation,
        axis_resample_period: u32,
        axis: StokesVector,
        since_resample: f64,
    },
    /// Deterministic scrambler turning at `rate_deg` per cycle about `axis`.
    Scrambler {
        axis: StokesVector,
        rate_deg: f64,
        accumulated_deg: f64,
        elapsed: f64,
    },
}

impl ChannelModel {
    pub fn random_walk(step_sigma: f64, axis_resample_period: u32) -> Self {
        ChannelModel::RandomWalk {
            step_sigma,
            current: Rotation::IDENTITY,
            axis_resample_period: axis_resample_period.max(1),
            axis: StokesVector::R,
            // forces an axis draw on the first step
            since_resample: f64::INFINITY,
        }
    }

    pub fn scrambler(axis: StokesVector, rate_deg: f64) -> Self {
        ChannelModel::Scrambler {
            axis,
            rate_deg,
            accumulated_deg: 0.0,
            elapsed: 0.0,
        }
    }

    /// Rotation the channel currently applies.
    pub fn current(&self) -> Rotation {
        match self {
            ChannelModel::Static { rotation } => *rotation,
            ChannelModel::RandomWalk { current, .. } => *current,
            ChannelModel::Scrambler {
                axis,
                accumulated_deg,
                ..
            } => Rotation::about(*axis, accumulated_deg.to_radians()),
        }
    }

    /// Advances the channel by `dt` feedback cycles and returns the rotation
    /// it applies afterwards.
    pub fn step<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> Rotation {
        if dt > 0.0 {
            match self {
                ChannelModel::Static { .. } => {}
                ChannelModel::RandomWalk {
                    step_sigma,
                    current,
                    axis_resample_period,
                    axis,
                    since_resample,
                } => {
                    if *since_resample >= f64::from(*axis_resample_period) {
                        *axis = random_unit(rng);
                        *since_resample = 0.0;
                    }
                    let g: f64 = StandardNormal.sample(rng);
                    let kick = Rotation::about(*axis, *step_sigma * dt.sqrt() * g);
                    *current = Rotation::compose(&kick, current);
                    *since_resample += dt;
                }
                ChannelModel::Scrambler {
                    rate_deg,
                    accumulated_deg,
                    elapsed,
                    ..
                } => {
                    // accumulate elapsed cycles, not degrees, so the wrap is exact
                    *elapsed += dt;
                    *accumulated_deg = (*rate_deg * *elapsed).rem_euclid(360.0);
                }
            }
        }
        self.current()
    }
}

/// Loss budget of the quantum link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkBudget {
    /// Fiber loss, dB per km.
    pub alpha: f64,
    /// Fiber length, km.
    pub length: f64,
    /// Bob's detector efficiency.
    pub eta_bob: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        LinkBudget {
            alpha: 0.2,
            length: 50.0,
            eta_bob: 0.1,
        }
    }
}

impl LinkBudget {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::config(format!("{prefix}.alpha"), "must be >= 0"));
        }
        if !(self.length.is_finite() && self.length >= 0.0) {
            return Err(Error::config(format!("{prefix}.length"), "must be >= 0"));
        }
        if !(self.eta_bob > 0.0 && self.eta_bob <= 1.0) {
            return Err(Error::config(
                format!("{prefix}.eta_bob"),
                "must lie in (0, 1]",
            ));
        }
        Ok(())
    }

    /// Overall efficiency `10^(-alpha * length / 10) * eta_bob`.
    pub fn transmittance(&self) -> f64 {
        10f64.powf(-self.alpha * self.length / 10.0) * self.eta_bob
    }
}
