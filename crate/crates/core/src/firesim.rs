//! Ground-truth wildfire field.
//!
//! Fire spots propagate with the first-order firespot model
//! `q' = C(F_c, U_c) * D(theta_c)` where the spread rate follows the
//! length-to-breadth closed form. Each active spot branches one child per
//! step (heading perturbed around the wind azimuth) until the per-fire spot
//! cap is reached, and every spot carries an intensity that ramps up over
//! [`RAMP_STEPS`] steps and then decays with a fuel time constant
//! `200 / F_c`. The rendered field is the max over spots of a truncated
//! Gaussian footprint, max-normalized over the episode.

use std::f64::consts::{PI, TAU};
use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed;

/// Field units travelled per unit of spread rate per step.
pub const SPATIAL_SCALE: f64 = 0.01;
/// Radius of a spot's Gaussian footprint, in field units.
pub const SPOT_RADIUS: f64 = 0.03;
/// Footprints are truncated beyond this many radii.
pub const FOOTPRINT_CUTOFF: f64 = 4.0;
pub const RAMP_STEPS: f64 = 5.0;
pub const BRANCH_SIGMA: f64 = PI / 8.0;
pub const DEFAULT_SPOT_CAP: usize = 200;
pub const DEFAULT_RESOLUTION: usize = 30;

/// `LB(U_c) = 0.936 e^{0.256 U_c} + 0.461 e^{-0.154 U_c} - 0.391`.
pub fn length_to_breadth(wind_speed: f64) -> Result<f64> {
    if !(wind_speed >= 0.0) || !wind_speed.is_finite() {
        return Err(invalid("wind_speed", format!("must be finite and >= 0, got {wind_speed}")));
    }
    Ok(0.936 * (0.256 * wind_speed).exp() + 0.461 * (-0.154 * wind_speed).exp() - 0.391)
}

/// Propagation speed `C = F_c (1 - LB / (LB + sqrt(LB^2 - 1)))`.
pub fn spread_rate(fuel: f64, wind_speed: f64) -> Result<f64> {
    if !(fuel > 0.0) || !fuel.is_finite() {
        return Err(invalid("fuel_coefficient", format!("must be finite and > 0, got {fuel}")));
    }
    let lb = length_to_breadth(wind_speed)?;
    let gb = lb * lb - 1.0;
    Ok(fuel * (1.0 - lb / (lb + gb.sqrt())))
}

/// Unit heading `[sin theta, cos theta]`; azimuth 0 points along +y.
pub fn direction(azimuth: f64) -> [f64; 2] {
    [azimuth.sin(), azimuth.cos()]
}

/// Steps a spot burns before its fuel is exhausted.
pub fn fuel_lifetime(fuel: f64) -> f64 {
    200.0 / fuel
}

/// Spot intensity as a function of age: linear ramp to 1.0 over
/// [`RAMP_STEPS`] steps, exponential decay with time constant `lifetime`,
/// and zero once the age exceeds `lifetime`.
pub fn intensity_profile(age: f64, lifetime: f64) -> f64 {
    if age > lifetime {
        return 0.0;
    }
    let peak_age = RAMP_STEPS - 1.0;
    if age < peak_age {
        (age + 1.0) / RAMP_STEPS
    } else {
        (-(age - peak_age) / lifetime).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FireOrigin {
    pub position: [f64; 2],
    pub ignition_time: u32,
}

/// Randomized dynamics parameters conditioning one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvCharacteristics {
    pub fuel_coefficient: f64,
    pub wind_speed: f64,
    pub wind_azimuth: f64,
    pub fire_origins: Vec<FireOrigin>,
    pub seed: u64,
}

impl EnvCharacteristics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fuel_coefficient > 0.0) || !self.fuel_coefficient.is_finite() {
            return Err(invalid("fuel_coefficient", "must be finite and > 0"));
        }
        if !(self.wind_speed >= 0.0) || !self.wind_speed.is_finite() {
            return Err(invalid("wind_speed", "must be finite and >= 0"));
        }
        if !self.wind_azimuth.is_finite() {
            return Err(invalid("wind_azimuth", "must be finite"));
        }
        for origin in &self.fire_origins {
            let [x, y] = origin.position;
            if !in_unit_square(x, y) {
                return Err(Error::OutOfDomain { x, y });
            }
        }
        Ok(())
    }
}

/// Ranges sampled by domain randomization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomizationSpec {
    pub fuel_min: f64,
    pub fuel_max: f64,
    pub wind_speed: f64,
    pub fire_count_min: u32,
    pub fire_count_max: u32,
    /// Ignitions are drawn from the first half of this many steps.
    pub ignition_horizon: u32,
}

impl Default for RandomizationSpec {
    fn default() -> Self {
        Self {
            fuel_min: 1.0,
            fuel_max: 10.0,
            wind_speed: 5.0,
            fire_count_min: 1,
            fire_count_max: 3,
            ignition_horizon: 32,
        }
    }
}

impl RandomizationSpec {
    /// Degenerate spec pinning the fuel coefficient and fire count.
    pub fn fixed(fuel: f64, fires: u32) -> Self {
        Self {
            fuel_min: fuel,
            fuel_max: fuel,
            fire_count_min: fires,
            fire_count_max: fires,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fuel_min > 0.0) || !(self.fuel_min <= self.fuel_max) || !self.fuel_max.is_finite() {
            return Err(invalid("fuel range", format!("need 0 < min <= max, got [{}, {}]", self.fuel_min, self.fuel_max)));
        }
        if !(self.wind_speed >= 0.0) {
            return Err(invalid("wind_speed", "must be >= 0"));
        }
        if self.fire_count_min > self.fire_count_max {
            return Err(invalid("fire count range", "min > max"));
        }
        Ok(())
    }
}

pub fn sample_environment<R: Rng + ?Sized>(rng: &mut R, spec: &RandomizationSpec) -> Result<EnvCharacteristics> {
    spec.validate()?;
    let fuel_coefficient = if spec.fuel_min == spec.fuel_max {
        spec.fuel_min
    } else {
        rng.gen_range(spec.fuel_min..=spec.fuel_max)
    };
    let wind_azimuth = rng.gen_range(0.0..TAU);
    let count = rng.gen_range(spec.fire_count_min..=spec.fire_count_max);
    let ignition_window = (spec.ignition_horizon / 2).max(1);
    let fire_origins = (0..count)
        .map(|_| FireOrigin {
            position: [rng.gen::<f64>(), rng.gen::<f64>()],
            ignition_time: rng.gen_range(0..ignition_window),
        })
        .collect();
    Ok(EnvCharacteristics {
        fuel_coefficient,
        wind_speed: spec.wind_speed,
        wind_azimuth,
        fire_origins,
        seed: rng.gen(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FireSpot {
    pub position: [f64; 2],
    pub heading: f64,
    pub age: f64,
    pub intensity: f64,
    pub fire: usize,
    /// Inactive spots no longer move or branch; they keep burning in place.
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FireState {
    pub spots: Vec<FireSpot>,
    pub time: u32,
    pub characteristics: EnvCharacteristics,
    pub spot_cap: usize,
    spots_per_fire: Vec<usize>,
    rng: ChaCha8Rng,
}

impl FireState {
    pub fn new(characteristics: EnvCharacteristics) -> Result<Self> {
        Self::with_spot_cap(characteristics, DEFAULT_SPOT_CAP)
    }

    pub fn with_spot_cap(characteristics: EnvCharacteristics, spot_cap: usize) -> Result<Self> {
        characteristics.validate()?;
        let rng = seed::rng(characteristics.seed);
        let mut state = Self {
            spots: Vec::new(),
            time: 0,
            spots_per_fire: vec![0; characteristics.fire_origins.len()],
            characteristics,
            spot_cap,
            rng,
        };
        state.ignite(0);
        Ok(state)
    }

    fn ignite(&mut self, time: u32) {
        let lifetime = fuel_lifetime(self.characteristics.fuel_coefficient);
        for (fire, origin) in self.characteristics.fire_origins.iter().enumerate() {
            if origin.ignition_time == time && self.spots_per_fire[fire] < self.spot_cap {
                self.spots.push(FireSpot {
                    position: origin.position,
                    heading: self.characteristics.wind_azimuth,
                    age: 0.0,
                    intensity: intensity_profile(0.0, lifetime),
                    fire,
                    active: true,
                });
                self.spots_per_fire[fire] += 1;
            }
        }
    }

    /// One propagation step of length `dt`, returning the successor state.
    pub fn step(&self, dt: f64) -> Result<Self> {
        let mut next = self.clone();
        next.advance(dt)?;
        Ok(next)
    }

    pub fn advance(&mut self, dt: f64) -> Result<()> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid("dt", format!("must be > 0, got {dt}")));
        }
        let c = &self.characteristics;
        let speed = spread_rate(c.fuel_coefficient, c.wind_speed)? * SPATIAL_SCALE;
        let lifetime = fuel_lifetime(c.fuel_coefficient);
        let azimuth = c.wind_azimuth;
        let branching = Normal::new(0.0, BRANCH_SIGMA).expect("positive sigma");

        let existing = self.spots.len();
        for i in 0..existing {
            let spot = &mut self.spots[i];
            spot.age += dt;
            spot.intensity = intensity_profile(spot.age, lifetime);
            if spot.intensity == 0.0 {
                spot.active = false;
            }
            if !spot.active {
                continue;
            }
            let [dx, dy] = direction(spot.heading);
            let x = spot.position[0] + speed * dt * dx;
            let y = spot.position[1] + speed * dt * dy;
            if !in_unit_square(x, y) {
                spot.position = [x.clamp(0.0, 1.0), y.clamp(0.0, 1.0)];
                spot.active = false;
                continue;
            }
            spot.position = [x, y];
            let fire = spot.fire;
            if self.spots_per_fire[fire] < self.spot_cap {
                let heading = azimuth + branching.sample(&mut self.rng);
                self.spots.push(FireSpot {
                    position: [x, y],
                    heading,
                    age: 0.0,
                    intensity: intensity_profile(0.0, lifetime),
                    fire,
                    active: true,
                });
                self.spots_per_fire[fire] += 1;
            }
        }
        self.time += 1;
        self.ignite(self.time);
        Ok(())
    }

    /// Unnormalized rendering of the current state on a `resolution`² lattice.
    pub fn render(&self, resolution: usize) -> Vec<f64> {
        let mut frame = vec![0.0; resolution * resolution];
        let spacing = 1.0 / (resolution - 1) as f64;
        let reach = FOOTPRINT_CUTOFF * SPOT_RADIUS;
        let inv = 1.0 / (2.0 * SPOT_RADIUS * SPOT_RADIUS);
        let mut wx = Vec::new();
        let mut wy = Vec::new();
        for spot in self.spots.iter().filter(|s| s.intensity > 0.0) {
            let [px, py] = spot.position;
            let (c0, c1) = cell_span(px, reach, spacing, resolution);
            let (r0, r1) = cell_span(py, reach, spacing, resolution);
            wx.clear();
            wx.extend((c0..=c1).map(|c| footprint(c as f64 * spacing - px, reach, inv)));
            wy.clear();
            wy.extend((r0..=r1).map(|r| footprint(r as f64 * spacing - py, reach, inv)));
            for (r, fy) in (r0..=r1).zip(&wy) {
                let row = &mut frame[r * resolution..(r + 1) * resolution];
                for (c, fx) in (c0..=c1).zip(&wx) {
                    let dx = c as f64 * spacing - px;
                    let dy = r as f64 * spacing - py;
                    if dx * dx + dy * dy > reach * reach {
                        continue;
                    }
                    let value = spot.intensity * fx * fy;
                    if value > row[c] {
                        row[c] = value;
                    }
                }
            }
        }
        frame
    }
}

fn footprint(d: f64, reach: f64, inv: f64) -> f64 {
    if d.abs() > reach {
        0.0
    } else {
        (-d * d * inv).exp()
    }
}

fn cell_span(center: f64, reach: f64, spacing: f64, resolution: usize) -> (usize, usize) {
    let lo = ((center - reach) / spacing).ceil().max(0.0) as usize;
    let hi = (((center + reach) / spacing).floor().max(0.0) as usize).min(resolution - 1);
    (lo.min(hi), hi)
}

/// `state` advanced one step of length `dt`.
pub fn step_fire(state: &FireState, dt: f64) -> Result<FireState> {
    state.step(dt)
}

pub(crate) fn in_unit_square(x: f64, y: f64) -> bool {
    (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y)
}

/// Episode of rendered intensity frames on a `resolution`² lattice whose
/// nodes sit at `(col / (R-1), row / (R-1))`. Frames are row-major with rows
/// along y.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthField {
    pub resolution: usize,
    pub frames: Vec<Vec<f64>>,
    pub characteristics: EnvCharacteristics,
}

impl GroundTruthField {
    /// Simulates `horizon` frames (t = 0..horizon) and max-normalizes them.
    pub fn simulate(characteristics: &EnvCharacteristics, resolution: usize, horizon: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(invalid("resolution", "must be >= 2"));
        }
        if horizon == 0 {
            return Err(invalid("horizon", "must be >= 1"));
        }
        let mut state = FireState::new(characteristics.clone())?;
        let mut frames = Vec::with_capacity(horizon);
        for t in 0..horizon {
            frames.push(state.render(resolution));
            if t + 1 < horizon {
                state.advance(1.0)?;
            }
        }
        let peak = frames.iter().flatten().copied().fold(0.0_f64, f64::max);
        if peak > 0.0 {
            for v in frames.iter_mut().flatten() {
                *v /= peak;
            }
        }
        Ok(Self {
            resolution,
            frames,
            characteristics: characteristics.clone(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.frames.len()
    }

    pub fn frame(&self, t: usize) -> Result<&[f64]> {
        self.frames.get(t).map(Vec::as_slice).ok_or(Error::TimeOutOfRange {
            t,
            horizon: self.horizon(),
        })
    }

    /// Bilinear interpolation of frame `t` at `location`.
    pub fn intensity_at(&self, location: [f64; 2], t: usize) -> Result<f64> {
        let [x, y] = location;
        if !in_unit_square(x, y) {
            return Err(Error::OutOfDomain { x, y });
        }
        let frame = self.frame(t)?;
        let r = self.resolution;
        let scale = (r - 1) as f64;
        let (gx, gy) = (x * scale, y * scale);
        let c0 = (gx.floor() as usize).min(r - 2);
        let r0 = (gy.floor() as usize).min(r - 2);
        let (fx, fy) = (gx - c0 as f64, gy - r0 as f64);
        let at = |row: usize, col: usize| frame[row * r + col];
        let v = (1.0 - fy) * ((1.0 - fx) * at(r0, c0) + fx * at(r0, c0 + 1))
            + fy * ((1.0 - fx) * at(r0 + 1, c0) + fx * at(r0 + 1, c0 + 1));
        Ok(v.clamp(0.0, 1.0))
    }

    /// Writes the field dump: magic `FWGT`, u32 version, u32 resolution,
    /// u32 horizon, characteristics, then row-major f32 frames (all LE).
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let c = &self.characteristics;
        w.write_all(b"FWGT")?;
        w.write_all(&FIELD_VERSION.to_le_bytes())?;
        w.write_all(&(self.resolution as u32).to_le_bytes())?;
        w.write_all(&(self.horizon() as u32).to_le_bytes())?;
        for v in [c.fuel_coefficient, c.wind_speed, c.wind_azimuth] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&c.seed.to_le_bytes())?;
        w.write_all(&(c.fire_origins.len() as u32).to_le_bytes())?;
        for o in &c.fire_origins {
            w.write_all(&o.position[0].to_le_bytes())?;
            w.write_all(&o.position[1].to_le_bytes())?;
            w.write_all(&o.ignition_time.to_le_bytes())?;
        }
        for v in self.frames.iter().flatten() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"FWGT" {
            return Err(Error::Format { what: "field dump", reason: "bad magic".into() });
        }
        let version = read_u32(&mut r)?;
        if version != FIELD_VERSION {
            return Err(Error::Format { what: "field dump", reason: format!("unsupported version {version}") });
        }
        let resolution = read_u32(&mut r)? as usize;
        let horizon = read_u32(&mut r)? as usize;
        let fuel_coefficient = read_f64(&mut r)?;
        let wind_speed = read_f64(&mut r)?;
        let wind_azimuth = read_f64(&mut r)?;
        let mut seed_bytes = [0u8; 8];
        r.read_exact(&mut seed_bytes)?;
        let n = read_u32(&mut r)? as usize;
        let mut fire_origins = Vec::with_capacity(n);
        for _ in 0..n {
            let x = read_f64(&mut r)?;
            let y = read_f64(&mut r)?;
            fire_origins.push(FireOrigin { position: [x, y], ignition_time: read_u32(&mut r)? });
        }
        let mut frames = Vec::with_capacity(horizon);
        let mut buf = [0u8; 4];
        for _ in 0..horizon {
            let mut frame = Vec::with_capacity(resolution * resolution);
            for _ in 0..resolution * resolution {
                r.read_exact(&mut buf)?;
                frame.push(f32::from_le_bytes(buf) as f64);
            }
            frames.push(frame);
        }
        Ok(Self {
            resolution,
            frames,
            characteristics: EnvCharacteristics {
                fuel_coefficient,
                wind_speed,
                wind_azimuth,
                fire_origins,
                seed: u64::from_le_bytes(seed_bytes),
            },
        })
    }
}

const FIELD_VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
