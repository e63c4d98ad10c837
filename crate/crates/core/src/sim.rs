//! Rotational rigid-body simulation for generating training and evaluation
//! trajectories.
//!
//! Dynamics follow the Euler equations `omega_dot = J^-1 (tau - omega x J
//! omega)` coupled with `R_dot = R hat(omega)`, integrated by a Lie-group RK4
//! (classical RK4 on a local exponential coordinate `sigma` and on `omega`,
//! with every substage rotation formed as `R0 exp(sigma)` and the step result
//! projected back onto SO(3)). Four torque scenarios are provided: free
//! rotation, linear control `-K omega`, configuration-dependent dipole torque
//! `m x (R^T B)`, and damped motion `-c omega`.
//!
//! The module also owns the corruption models applied to observations
//! (tangent-space Gaussian noise, random sample dropping with timestamp
//! jitter), the scenario config file format, and the trajectory CSV format
//! (`t,qw,qx,qy,qz`, scalar-first unit quaternions with `qw >= 0`).

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sg::RotationTrajectory;
use crate::so3::{
    exp_so3, hat_matrix, project_to_so3, sample_uniform_rotation, Rotation, TangentVector,
    TAYLOR_SWITCH,
};

/// Moment-of-inertia tensor: symmetric positive-definite, principal moments
/// satisfying the triangle inequality of a physical mass distribution.
#[derive(Clone, Debug)]
pub struct InertiaTensor {
    j: Matrix3<f64>,
    j_inv: Matrix3<f64>,
    principal: Vector3<f64>,
}

impl InertiaTensor {
    pub fn from_matrix(j: Matrix3<f64>) -> Result<Self> {
        if (j - j.transpose()).norm() > 1e-12 {
            return Err(Error::Config("inertia tensor is not symmetric".into()));
        }
        let eig = j.symmetric_eigen();
        let mut moments: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        moments.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let principal = Vector3::new(moments[0], moments[1], moments[2]);
        if principal.x <= 0.0 {
            return Err(Error::Config(format!(
                "inertia tensor has non-positive eigenvalue {}",
                principal.x
            )));
        }
        if !triangle_inequality_holds(&principal) {
            return Err(Error::Config(format!(
                "principal moments {principal:?} violate the triangle inequality"
            )));
        }
        let j_inv = j.try_inverse().ok_or(Error::Singular(principal.x))?;
        Ok(InertiaTensor {
            j,
            j_inv,
            principal,
        })
    }

    pub fn from_principal(moments: Vector3<f64>, orientation: &Rotation) -> Result<Self> {
        let d = Matrix3::from_diagonal(&moments);
        let r = orientation.matrix();
        InertiaTensor::from_matrix(r * d * r.transpose())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.j
    }

    pub fn inverse(&self) -> &Matrix3<f64> {
        &self.j_inv
    }

    /// Principal moments in ascending order.
    pub fn principal_moments(&self) -> Vector3<f64> {
        self.principal
    }
}

/// `lambda_i + lambda_j >= lambda_k` for all axis permutations.
pub fn triangle_inequality_holds(moments: &Vector3<f64>) -> bool {
    let (a, b, c) = (moments.x, moments.y, moments.z);
    a + b >= c && a + c >= b && b + c >= a
}

/// External torque scenarios from the simulation suite.
#[derive(Clone, Debug)]
pub enum TorqueModel {
    /// No external torque; angular momentum is conserved.
    Free,
    /// Linear control law `-K omega`.
    LinearControl { gain: Matrix3<f64> },
    /// Magnetic-dipole style torque `m x (R^T B)` (body-frame dipole in a
    /// uniform world field).
    ConfigDependent {
        dipole: Vector3<f64>,
        field: Vector3<f64>,
    },
    /// Dissipative damping `-c omega`.
    Damped { c: f64 },
}

/// Simulation state: orientation, body-frame angular velocity, time.
#[derive(Clone, Copy, Debug)]
pub struct SimState {
    pub rotation: Rotation,
    pub omega: TangentVector,
    pub t: f64,
}

/// External torque in the body frame.
pub fn torque(model: &TorqueModel, state: &SimState) -> TangentVector {
    match model {
        TorqueModel::Free => Vector3::zeros(),
        TorqueModel::LinearControl { gain } => -(gain * state.omega),
        TorqueModel::ConfigDependent { dipole, field } => {
            let body_field = state.rotation.matrix().transpose() * field;
            dipole.cross(&body_field)
        }
        TorqueModel::Damped { c } => -*c * state.omega,
    }
}

/// Inverse right Jacobian of SO(3):
/// `J_r(v)^-1 = I + 1/2 hat(v) + e(t) hat(v)^2` with
/// `e = 1/t^2 - (1 + cos t)/(2 t sin t)`.
fn right_jacobian_inv(v: &TangentVector) -> Matrix3<f64> {
    let theta = v.norm();
    let e = if theta < TAYLOR_SWITCH {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    let k = hat_matrix(v);
    Matrix3::identity() + 0.5 * k + e * (k * k)
}

fn dynamics(
    sigma: &TangentVector,
    omega: &TangentVector,
    base: &Rotation,
    inertia: &InertiaTensor,
    model: &TorqueModel,
    t: f64,
) -> (TangentVector, TangentVector) {
    let rotation = *base * exp_so3(sigma);
    let state = SimState {
        rotation,
        omega: *omega,
        t,
    };
    let tau = torque(model, &state);
    let sigma_dot = right_jacobian_inv(sigma) * omega;
    let omega_dot = inertia.inverse() * (tau - omega.cross(&(inertia.matrix() * omega)));
    (sigma_dot, omega_dot)
}

/// One RK4 step of the coupled rotational dynamics.
pub fn step(state: &SimState, inertia: &InertiaTensor, model: &TorqueModel, dt: f64) -> SimState {
    let zero = Vector3::zeros();
    let (ks1, kw1) = dynamics(&zero, &state.omega, &state.rotation, inertia, model, state.t);
    let (ks2, kw2) = dynamics(
        &(0.5 * dt * ks1),
        &(state.omega + 0.5 * dt * kw1),
        &state.rotation,
        inertia,
        model,
        state.t + 0.5 * dt,
    );
    let (ks3, kw3) = dynamics(
        &(0.5 * dt * ks2),
        &(state.omega + 0.5 * dt * kw2),
        &state.rotation,
        inertia,
        model,
        state.t + 0.5 * dt,
    );
    let (ks4, kw4) = dynamics(
        &(dt * ks3),
        &(state.omega + dt * kw3),
        &state.rotation,
        inertia,
        model,
        state.t + dt,
    );
    let sigma = dt / 6.0 * (ks1 + 2.0 * ks2 + 2.0 * ks3 + ks4);
    let omega = state.omega + dt / 6.0 * (kw1 + 2.0 * kw2 + 2.0 * kw3 + kw4);
    let raw = *state.rotation.matrix() * exp_so3(&sigma).matrix();
    let rotation = project_to_so3(&raw).expect("rotation drift beyond repair");
    SimState {
        rotation,
        omega,
        t: state.t + dt,
    }
}

/// Log-uniform principal-moment proposal on [0.5, 3.0] kg m^2.
pub fn draw_principal_moments<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    let lo = 0.5f64.ln();
    let hi = 3.0f64.ln();
    Vector3::new(
        rng.random_range(lo..hi).exp(),
        rng.random_range(lo..hi).exp(),
        rng.random_range(lo..hi).exp(),
    )
}

/// Random inertia tensor: log-uniform principal moments (triangle-inequality
/// rejection) conjugated by a Haar-uniform rotation.
pub fn sample_inertia<R: Rng + ?Sized>(rng: &mut R) -> InertiaTensor {
    let moments = loop {
        let m = draw_principal_moments(rng);
        if triangle_inequality_holds(&m) {
            break m;
        }
    };
    let orientation = sample_uniform_rotation(rng);
    InertiaTensor::from_principal(moments, &orientation)
        .expect("sampled moments satisfy the invariants")
}

/// Default per-axis standard deviation of the initial angular velocity.
pub const OMEGA_SIGMA_DEFAULT: f64 = 2.0;

/// Random initial state: Haar-uniform orientation and isotropic Gaussian
/// angular velocity, rejection-sampled away from `|omega| < omega_min`.
pub fn sample_initial_conditions<R: Rng + ?Sized>(
    rng: &mut R,
    omega_sigma: f64,
    omega_min: f64,
) -> SimState {
    let rotation = sample_uniform_rotation(rng);
    let omega = loop {
        let w = Vector3::new(
            omega_sigma * rng.sample::<f64, _>(StandardNormal),
            omega_sigma * rng.sample::<f64, _>(StandardNormal),
            omega_sigma * rng.sample::<f64, _>(StandardNormal),
        );
        if w.norm() >= omega_min {
            break w;
        }
    };
    SimState {
        rotation,
        omega,
        t: 0.0,
    }
}

/// Scenario variants exposed by the config file and CLI.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Free,
    LinearControl,
    ConfigDependent,
    Damped,
}

pub const VARIANT_NAMES: [&str; 4] = ["free", "linear-control", "config-dependent", "damped"];

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::Free => "free",
            Variant::LinearControl => "linear-control",
            Variant::ConfigDependent => "config-dependent",
            Variant::Damped => "damped",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free" => Ok(Variant::Free),
            "linear-control" => Ok(Variant::LinearControl),
            "config-dependent" => Ok(Variant::ConfigDependent),
            "damped" => Ok(Variant::Damped),
            other => Err(Error::Config(format!(
                "unknown variant '{other}'; valid variants: {}",
                VARIANT_NAMES.join(", ")
            ))),
        }
    }
}

fn default_duration() -> f64 {
    3.0
}
fn default_dt() -> f64 {
    1e-3
}
fn default_sample_hz() -> f64 {
    40.0
}
fn default_gain() -> f64 {
    0.3
}
fn default_damping() -> f64 {
    0.2
}
fn default_dipole() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}
fn default_field() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}
fn default_omega_sigma() -> f64 {
    OMEGA_SIGMA_DEFAULT
}
fn default_omega_min() -> f64 {
    0.5
}

/// Scenario configuration (key-value text file, TOML syntax).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub variant: Variant,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_sample_hz")]
    pub sample_hz: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub drop_prob: f64,
    #[serde(default)]
    pub jitter: f64,
    #[serde(default)]
    pub seed: u64,
    /// Gain magnitude for the linear-control scenario (`K = gain * I`).
    #[serde(default = "default_gain")]
    pub gain: f64,
    /// Damping coefficient for the damped scenario.
    #[serde(default = "default_damping")]
    pub damping: f64,
    /// Body-frame dipole moment for the config-dependent scenario.
    #[serde(default = "default_dipole")]
    pub dipole: [f64; 3],
    /// World-frame field for the config-dependent scenario.
    #[serde(default = "default_field")]
    pub field: [f64; 3],
    #[serde(default = "default_omega_sigma")]
    pub omega_sigma: f64,
    #[serde(default = "default_omega_min")]
    pub omega_min: f64,
}

impl ScenarioConfig {
    pub fn new(variant: Variant) -> Self {
        ScenarioConfig {
            variant,
            duration_s: default_duration(),
            dt: default_dt(),
            sample_hz: default_sample_hz(),
            noise_sigma: 0.0,
            drop_prob: 0.0,
            jitter: 0.0,
            seed: 0,
            gain: default_gain(),
            damping: default_damping(),
            dipole: default_dipole(),
            field: default_field(),
            omega_sigma: default_omega_sigma(),
            omega_min: default_omega_min(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ScenarioConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0) {
            return Err(Error::Config("duration_s must be positive".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if !(self.sample_hz > 0.0) {
            return Err(Error::Config("sample_hz must be positive".into()));
        }
        if 1.0 / self.sample_hz < self.dt {
            return Err(Error::Config(
                "sample_hz is finer than the integration step dt".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            return Err(Error::Config("drop_prob must lie in [0, 1)".into()));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::Config("jitter must be non-negative".into()));
        }
        if !(self.omega_min > 0.0 && self.omega_sigma > 0.0) {
            return Err(Error::Config(
                "omega_min and omega_sigma must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn torque_model(&self) -> TorqueModel {
        match self.variant {
            Variant::Free => TorqueModel::Free,
            Variant::LinearControl => TorqueModel::LinearControl {
                gain: self.gain * Matrix3::identity(),
            },
            Variant::ConfigDependent => TorqueModel::ConfigDependent {
                dipole: Vector3::from(self.dipole),
                field: Vector3::from(self.field),
            },
            Variant::Damped => TorqueModel::Damped { c: self.damping },
        }
    }
}

/// A simulated trajectory: clean observations at the sample rate plus the
/// full ground-truth states at those times.
#[derive(Clone, Debug)]
pub struct SimResult {
    pub observations: RotationTrajectory,
    pub states: Vec<SimState>,
    pub inertia: InertiaTensor,
}

/// Integrates one trajectory at fine `dt`, emitting observations at the
/// requested sample rate. Deterministic for a fixed config (the seed drives
/// inertia and initial conditions).
pub fn simulate(config: &ScenarioConfig) -> Result<SimResult> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    simulate_with_rng(config, &mut rng)
}

/// As [`simulate`], but drawing randomness from a caller-provided stream
/// (used by the dataset builder to derive many trajectories from one seed).
pub fn simulate_with_rng(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<SimResult> {
    config.validate()?;
    let inertia = sample_inertia(rng);
    let mut state = sample_initial_conditions(rng, config.omega_sigma, config.omega_min);
    let model = config.torque_model();

    let total_steps = (config.duration_s / config.dt).round() as usize;
    let emit_every = (1.0 / (config.sample_hz * config.dt)).round().max(1.0) as usize;

    let mut states = Vec::new();
    let mut samples = Vec::new();
    for i in 0..=total_steps {
        if i % emit_every == 0 {
            states.push(state);
            samples.push((state.t, state.rotation));
        }
        if i < total_steps {
            state = step(&state, &inertia, &model, config.dt);
            // Rebuild t from the step index so emitted timestamps carry no
            // accumulated summation error.
            state.t = (i + 1) as f64 * config.dt;
        }
    }
    Ok(SimResult {
        observations: RotationTrajectory::new(samples)?,
        states,
        inertia,
    })
}

/// Applies left-multiplicative tangent-space Gaussian noise:
/// `x~ = Exp(eps) x` with `eps ~ N(0, sigma^2 I_3)`.
pub fn corrupt<R: Rng + ?Sized>(
    traj: &RotationTrajectory,
    sigma: f64,
    rng: &mut R,
) -> Result<RotationTrajectory> {
    if sigma < 0.0 {
        return Err(Error::Config("noise sigma must be non-negative".into()));
    }
    if sigma == 0.0 {
        return Ok(traj.clone());
    }
    let samples = traj
        .samples()
        .iter()
        .map(|(t, x)| {
            let eps = Vector3::new(
                sigma * rng.sample::<f64, _>(StandardNormal),
                sigma * rng.sample::<f64, _>(StandardNormal),
                sigma * rng.sample::<f64, _>(StandardNormal),
            );
            (*t, exp_so3(&eps) * *x)
        })
        .collect();
    RotationTrajectory::new(samples)
}

/// Drops samples independently with probability `drop_prob` and perturbs the
/// retained timestamps by uniform jitter, clamped so ordering stays strict.
pub fn subsample_irregular<R: Rng + ?Sized>(
    traj: &RotationTrajectory,
    drop_prob: f64,
    jitter: f64,
    rng: &mut R,
) -> Result<RotationTrajectory> {
    if !(0.0..1.0).contains(&drop_prob) {
        return Err(Error::Config("drop_prob must lie in [0, 1)".into()));
    }
    let mut kept: Vec<(f64, Rotation)> = Vec::with_capacity(traj.len());
    for (t, x) in traj.samples() {
        let u: f64 = rng.random();
        if u >= drop_prob {
            kept.push((*t, *x));
        }
    }
    if kept.is_empty() {
        return Err(Error::Usage(
            "all samples dropped; trajectory would be empty".into(),
        ));
    }
    if jitter > 0.0 && kept.len() > 1 {
        let times: Vec<f64> = kept.iter().map(|s| s.0).collect();
        for i in 0..kept.len() {
            let gap_prev = if i == 0 {
                f64::INFINITY
            } else {
                times[i] - times[i - 1]
            };
            let gap_next = if i + 1 == kept.len() {
                f64::INFINITY
            } else {
                times[i + 1] - times[i]
            };
            let bound = jitter.min(0.49 * gap_prev.min(gap_next));
            let delta: f64 = rng.random_range(-1.0..1.0) * bound;
            kept[i].0 = times[i] + delta;
        }
    }
    RotationTrajectory::new(kept)
}

// ---------------------------------------------------------------------------
// Trajectory CSV I/O
// ---------------------------------------------------------------------------

pub const TRAJECTORY_CSV_HEADER: &str = "t,qw,qx,qy,qz";

pub fn write_trajectory_csv<W: Write>(out: &mut W, traj: &RotationTrajectory) -> Result<()> {
    writeln!(out, "{TRAJECTORY_CSV_HEADER}")?;
    for (t, x) in traj.samples() {
        let q = x.to_quaternion_wxyz();
        writeln!(out, "{t},{},{},{},{}", q[0], q[1], q[2], q[3])?;
    }
    Ok(())
}

/// Writes atomically: a temporary file in the same directory is renamed over
/// the target, so a killed run never leaves a truncated CSV.
pub fn save_trajectory_csv(path: &Path, traj: &RotationTrajectory) -> Result<()> {
    let mut buf = Vec::new();
    write_trajectory_csv(&mut buf, traj)?;
    atomic_write(path, &buf)
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("invalid output path {}", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_trajectory_csv(path: &Path) -> Result<RotationTrajectory> {
    let file = std::fs::File::open(file_path_ctx(path)?)?;
    let mut reader = BufReader::new(file);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    if header.trim() != TRAJECTORY_CSV_HEADER {
        return Err(Error::Parse {
            what: path.display().to_string(),
            detail: format!(
                "expected header '{TRAJECTORY_CSV_HEADER}', got '{}'",
                header.trim()
            ),
        });
    }
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                what: path.display().to_string(),
                detail: format!(
                    "line {}: expected 5 fields, got {}",
                    lineno + 2,
                    fields.len()
                ),
            });
        }
        let mut vals = [0.0f64; 5];
        for (i, f) in fields.iter().enumerate() {
            vals[i] = f.trim().parse().map_err(|e| Error::Parse {
                what: path.display().to_string(),
                detail: format!("line {}: {e}", lineno + 2),
            })?;
        }
        let rot = Rotation::from_quaternion_wxyz([vals[1], vals[2], vals[3], vals[4]]).map_err(
            |e| Error::Parse {
                what: path.display().to_string(),
                detail: format!("line {}: {e}", lineno + 2),
            },
        )?;
        samples.push((vals[0], rot));
    }
    RotationTrajectory::new(samples)
}

fn file_path_ctx(path: &Path) -> Result<&Path> {
    if path.as_os_str().is_empty() {
        return Err(Error::Config("empty trajectory path".into()));
    }
    Ok(path)
}
