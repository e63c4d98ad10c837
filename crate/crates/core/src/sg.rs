//! Savitzky-Golay regression on SO(3).
//!
//! Around each anchor observation `(t_k, x_k)` a second-order polynomial
//! `p(t; rho) = rho0 + rho1 t + 1/2 rho2 t^2` is fitted in the Lie algebra to
//! the relative rotations `Log(x_{k+m} x_k^-1)` over a window of `2n+1`
//! samples (clipped asymmetrically at sequence ends). The fit reduces to a
//! small weighted linear least-squares system whose normal matrix is solved
//! by Cholesky. Stitching the per-anchor polynomials through the exponential
//! map yields a smooth control path `phi(t) = Exp(p(t - t_k)) x_k` and its 9D
//! time derivative, the driving signal for CDE integration.
//!
//! The window weights may be learned: the solve is differentiable with
//! respect to the per-offset weights, and [`solve_coefficients_grad`]
//! provides the analytic gradient used during training.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::so3::{exp_so3, hat_matrix, log_so3, Rotation, TangentVector, TAYLOR_SWITCH};

/// Condition-number ceiling for the SG normal matrix.
pub const CONDITION_LIMIT: f64 = 1e12;

/// An ordered sequence of timestamped rotation observations.
#[derive(Clone, Debug)]
pub struct RotationTrajectory {
    samples: Vec<(f64, Rotation)>,
}

impl RotationTrajectory {
    /// Builds a trajectory, rejecting empty input and non-increasing times.
    pub fn new(samples: Vec<(f64, Rotation)>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Usage("trajectory has no samples".into()));
        }
        for w in samples.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Usage(format!(
                    "timestamps not strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        Ok(RotationTrajectory { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.samples[k].0
    }

    pub fn rotation(&self, k: usize) -> &Rotation {
        &self.samples[k].1
    }

    pub fn samples(&self) -> &[(f64, Rotation)] {
        &self.samples
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.0).collect()
    }

    pub fn first_time(&self) -> f64 {
        self.samples[0].0
    }

    pub fn last_time(&self) -> f64 {
        self.samples[self.samples.len() - 1].0
    }

    /// Sub-trajectory over the index range (used to carve history windows).
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.samples.len() {
            return Err(Error::Usage(format!(
                "slice {start}..{} out of bounds (len {})",
                start + len,
                self.samples.len()
            )));
        }
        RotationTrajectory::new(self.samples[start..start + len].to_vec())
    }
}

/// Second-order Lie-algebra polynomial coefficients at an anchor.
#[derive(Clone, Copy, Debug)]
pub struct SGCoefficients {
    /// Value term, radians.
    pub rho0: TangentVector,
    /// Velocity term, rad/s.
    pub rho1: TangentVector,
    /// Acceleration term, rad/s^2.
    pub rho2: TangentVector,
    pub anchor_time: f64,
    pub anchor_rotation: Rotation,
}

impl SGCoefficients {
    /// Evaluates `p` and `dp/dt` at time `t` (absolute, not an offset):
    /// value `rho0 + rho1 tau + 1/2 rho2 tau^2`, derivative `rho1 + rho2 tau`
    /// with `tau = t - anchor_time`.
    pub fn eval_polynomial(&self, t: f64) -> (TangentVector, TangentVector) {
        let tau = t - self.anchor_time;
        let value = self.rho0 + self.rho1 * tau + self.rho2 * (0.5 * tau * tau);
        let derivative = self.rho1 + self.rho2 * tau;
        (value, derivative)
    }
}

/// The windowed least-squares system for one anchor.
///
/// `a_hat` is the `(w)x(p+1)` Vandermonde matrix of time offsets with
/// `1/j!` column scaling, `a = a_hat (x) I_3` is its Kronecker expansion and
/// `b` stacks the Lie-algebra residuals `vee(Log(x_{k+m} x_k^-1))`.
#[derive(Clone, Debug)]
pub struct SGWindowSystem {
    a_hat: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    order: usize,
    anchor_time: f64,
    anchor_rotation: Rotation,
    /// Index into the shared `2n+1` weight vector of the first window row
    /// (nonzero when the window is clipped at the sequence start).
    first_weight_index: usize,
}

impl SGWindowSystem {
    pub fn a_hat(&self) -> &DMatrix<f64> {
        &self.a_hat
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn anchor_time(&self) -> f64 {
        self.anchor_time
    }

    pub fn anchor_rotation(&self) -> &Rotation {
        &self.anchor_rotation
    }

    pub fn window_len(&self) -> usize {
        self.a_hat.nrows()
    }

    pub fn first_weight_index(&self) -> usize {
        self.first_weight_index
    }
}

/// Builds the window system for anchor `k` with half-window `n` and
/// polynomial order `p` (the public fitting path fixes `p = 2`). Window
/// indices are clipped to the trajectory, so boundary anchors get
/// asymmetric windows.
pub fn build_window_system(
    traj: &RotationTrajectory,
    k: usize,
    n: usize,
    p: usize,
) -> Result<SGWindowSystem> {
    if k >= traj.len() {
        return Err(Error::Usage(format!(
            "anchor {k} out of range (len {})",
            traj.len()
        )));
    }
    if p == 0 {
        return Err(Error::Usage("polynomial order must be at least 1".into()));
    }
    let last = traj.len() - 1;
    let lo = k.saturating_sub(n);
    let hi = (k + n).min(last);
    let w = hi - lo + 1;

    let mut a_hat = DMatrix::zeros(w, p + 1);
    let mut b = DVector::zeros(3 * w);
    let anchor_time = traj.time(k);
    let anchor_rot = *traj.rotation(k);
    let anchor_inv = anchor_rot.inverse();

    for (row, idx) in (lo..=hi).enumerate() {
        let tau = traj.time(idx) - anchor_time;
        let mut col = 1.0;
        let mut fact = 1.0;
        for j in 0..=p {
            if j > 0 {
                col *= tau;
                fact *= j as f64;
            }
            a_hat[(row, j)] = col / fact;
        }
        let rel = traj.rotation(idx) * &anchor_inv;
        let residual = log_so3(&rel)?;
        b[3 * row] = residual.x;
        b[3 * row + 1] = residual.y;
        b[3 * row + 2] = residual.z;
    }

    let a = kron_identity3(&a_hat);
    Ok(SGWindowSystem {
        a_hat,
        a,
        b,
        order: p,
        anchor_time,
        anchor_rotation: anchor_rot,
        first_weight_index: n - (k - lo),
    })
}

/// Kronecker product with `I_3`: `(A (x) I_3)[3i+a, 3j+c] = A[i,j] delta_ac`.
fn kron_identity3(a_hat: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = a_hat.shape();
    let mut a = DMatrix::zeros(3 * r, 3 * c);
    for i in 0..r {
        for j in 0..c {
            let v = a_hat[(i, j)];
            for axis in 0..3 {
                a[(3 * i + axis, 3 * j + axis)] = v;
            }
        }
    }
    a
}

/// Learnable per-offset window weights, shared across anchors. Positivity is
/// enforced by mapping the raw parameters through softplus.
#[derive(Clone, Debug)]
pub struct SGWeights {
    raw: Vec<f64>,
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl SGWeights {
    /// Raw values chosen so every effective weight is exactly softplus^-1(1).
    pub fn uniform(half_window: usize) -> Self {
        let raw = vec![(std::f64::consts::E - 1.0).ln(); 2 * half_window + 1];
        SGWeights { raw }
    }

    pub fn from_raw(raw: Vec<f64>) -> Result<Self> {
        if raw.len() % 2 != 1 {
            return Err(Error::Usage(format!(
                "weight vector must have odd length 2n+1, got {}",
                raw.len()
            )));
        }
        Ok(SGWeights { raw })
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn half_window(&self) -> usize {
        (self.raw.len() - 1) / 2
    }

    /// Strictly positive effective weights, one per window offset.
    pub fn effective(&self) -> Vec<f64> {
        self.raw.iter().map(|&x| softplus(x)).collect()
    }
}

fn normal_system(
    sys: &SGWindowSystem,
    weights: Option<&[f64]>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let w_rows = sys.window_len();
    if let Some(w) = weights {
        if w.len() != w_rows {
            return Err(Error::Usage(format!(
                "expected {w_rows} window weights, got {}",
                w.len()
            )));
        }
        if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Usage(format!("non-positive window weight {bad}")));
        }
    }
    // A^T W A and A^T W b with W = diag(w) (x) I_3.
    let cols = sys.a.ncols();
    let mut m = DMatrix::zeros(cols, cols);
    let mut v = DVector::zeros(cols);
    for row in 0..w_rows {
        let wgt = weights.map_or(1.0, |w| w[row]);
        for axis in 0..3 {
            let r = 3 * row + axis;
            let a_row = sys.a.row(r);
            for i in 0..cols {
                let ai = a_row[i];
                if ai == 0.0 {
                    continue;
                }
                v[i] += wgt * ai * sys.b[r];
                for j in 0..cols {
                    m[(i, j)] += wgt * ai * a_row[j];
                }
            }
        }
    }
    Ok((m, v))
}

fn check_condition(m: &DMatrix<f64>) -> Result<()> {
    let eig = m.clone().symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for &l in eig.eigenvalues.iter() {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !cond.is_finite() || cond >= CONDITION_LIMIT {
        return Err(Error::IllConditioned(cond));
    }
    Ok(())
}

/// Solves the (optionally weighted) normal equations
/// `rho = (A^T W A)^-1 A^T W b` for the raw coefficient vector. `weights`
/// are effective per-offset values for this window; `None` means `W = I`.
pub fn solve_raw(sys: &SGWindowSystem, weights: Option<&[f64]>) -> Result<DVector<f64>> {
    let (m, v) = normal_system(sys, weights)?;
    check_condition(&m)?;
    let chol = m
        .clone()
        .cholesky()
        .ok_or(Error::IllConditioned(f64::INFINITY))?;
    Ok(chol.solve(&v))
}

/// Solves for the second-order coefficients at this window's anchor.
pub fn solve_coefficients(
    sys: &SGWindowSystem,
    weights: Option<&[f64]>,
) -> Result<SGCoefficients> {
    if sys.order != 2 {
        return Err(Error::Usage(format!(
            "coefficient solve requires order 2, system has order {}",
            sys.order
        )));
    }
    let rho = solve_raw(sys, weights)?;
    Ok(SGCoefficients {
        rho0: Vector3::new(rho[0], rho[1], rho[2]),
        rho1: Vector3::new(rho[3], rho[4], rho[5]),
        rho2: Vector3::new(rho[6], rho[7], rho[8]),
        anchor_time: sys.anchor_time,
        anchor_rotation: sys.anchor_rotation,
    })
}

/// Gradient of `upstream . rho` with respect to each *effective* window
/// weight, one entry per window row.
///
/// With `M = A^T W A`, `rho = M^-1 A^T W b` and `A_m`, `b_m` the rows for
/// offset `m`, the derivative is `d rho / d w_m = M^-1 A_m^T (b_m - A_m rho)`,
/// so the chained gradient is `s^T A_m^T r_m` with `s = M^-1 upstream`.
pub fn solve_coefficients_grad_effective(
    sys: &SGWindowSystem,
    weights: Option<&[f64]>,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    let cols = sys.a.ncols();
    if upstream.len() != cols {
        return Err(Error::Usage(format!(
            "upstream gradient length {} does not match coefficient count {cols}",
            upstream.len()
        )));
    }
    let (m, v) = normal_system(sys, weights)?;
    check_condition(&m)?;
    let chol = m
        .clone()
        .cholesky()
        .ok_or(Error::IllConditioned(f64::INFINITY))?;
    let rho = chol.solve(&v);
    let s = chol.solve(&DVector::from_column_slice(upstream));

    let mut grad = vec![0.0; sys.window_len()];
    for row in 0..sys.window_len() {
        let mut acc = 0.0;
        for axis in 0..3 {
            let r = 3 * row + axis;
            let a_row = sys.a.row(r);
            let mut pred = 0.0;
            let mut s_dot = 0.0;
            for c in 0..cols {
                pred += a_row[c] * rho[c];
                s_dot += a_row[c] * s[c];
            }
            acc += s_dot * (sys.b[r] - pred);
        }
        grad[row] = acc;
    }
    Ok(grad)
}

/// Gradient of `upstream . rho` with respect to the raw weight parameters of
/// `weights`, chained through softplus. Entries for offsets outside this
/// window (clipped at a boundary) are zero.
pub fn solve_coefficients_grad(
    sys: &SGWindowSystem,
    weights: &SGWeights,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    let eff = weights.effective();
    let lo = sys.first_weight_index;
    let hi = lo + sys.window_len();
    if hi > eff.len() {
        return Err(Error::Usage(format!(
            "window rows {lo}..{hi} exceed weight vector length {}",
            eff.len()
        )));
    }
    let g_eff = solve_coefficients_grad_effective(sys, Some(&eff[lo..hi]), upstream)?;
    let mut grad = vec![0.0; eff.len()];
    for (row, g) in g_eff.iter().enumerate() {
        grad[lo + row] = g * sigmoid(weights.raw[lo + row]);
    }
    Ok(grad)
}

/// Closed-form left Jacobian of SO(3):
/// `J_l(v) = I + (1 - cos t)/t^2 hat(v) + (t - sin t)/t^3 hat(v)^2`.
pub fn left_jacobian(v: &TangentVector) -> Matrix3<f64> {
    let theta = v.norm();
    let (c, d) = if theta < TAYLOR_SWITCH {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        (
            (1.0 - theta.cos()) / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    };
    let k = hat_matrix(v);
    Matrix3::identity() + c * k + d * (k * k)
}

/// Piecewise SG-polynomial control path on SO(3).
#[derive(Clone, Debug)]
pub struct ControlPath {
    coefficients: Vec<SGCoefficients>,
}

impl ControlPath {
    pub fn from_coefficients(coefficients: Vec<SGCoefficients>) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::Usage("control path needs at least one anchor".into()));
        }
        Ok(ControlPath { coefficients })
    }

    pub fn coefficients(&self) -> &[SGCoefficients] {
        &self.coefficients
    }

    /// Support interval `[t_0, t_N]`; queries beyond the end extrapolate
    /// with the final anchor's polynomial.
    pub fn support(&self) -> (f64, f64) {
        (
            self.coefficients[0].anchor_time,
            self.coefficients[self.coefficients.len() - 1].anchor_time,
        )
    }

    /// Index of the anchor nearest to `t` (ties resolve to the lower index).
    pub fn nearest_anchor(&self, t: f64) -> Result<usize> {
        let times: Vec<f64> = self.coefficients.iter().map(|c| c.anchor_time).collect();
        nearest_anchor_index(&times, t)
    }

    /// `phi(t) = Exp(p(t - t_k; rho_k)) x_k` for the nearest anchor `k`.
    pub fn value(&self, t: f64) -> Result<Rotation> {
        let c = &self.coefficients[self.nearest_anchor(t)?];
        let (p, _) = c.eval_polynomial(t);
        Ok(exp_so3(&p) * c.anchor_rotation)
    }

    /// Ten-channel control derivative `(1, flatten(dphi/dt))`.
    ///
    /// The spatial angular velocity comes from the chain rule of
    /// `d/dt Exp(p(t))`: `omega_s = J_l(p) dp/dt`, and
    /// `dphi/dt = hat(omega_s) phi`.
    pub fn derivative_9d(&self, t: f64) -> Result<[f64; 10]> {
        let c = &self.coefficients[self.nearest_anchor(t)?];
        let (p, dp) = c.eval_polynomial(t);
        let omega_s = left_jacobian(&p) * dp;
        let phi = exp_so3(&p) * c.anchor_rotation;
        let dphi = hat_matrix(&omega_s) * phi.matrix();
        let mut out = [0.0; 10];
        out[0] = 1.0;
        out[1..].copy_from_slice(&flatten_row_major(&dphi));
        Ok(out)
    }
}

/// Index of the time in `times` (sorted ascending) nearest to `t`, ties to
/// the lower index; `t` below the first time is out of support, `t` beyond
/// the last selects the final index (extrapolation).
pub fn nearest_anchor_index(times: &[f64], t: f64) -> Result<usize> {
    if times.is_empty() {
        return Err(Error::Usage("no anchors".into()));
    }
    if t < times[0] {
        return Err(Error::OutOfSupport { t, t0: times[0] });
    }
    let i = times.partition_point(|&x| x < t);
    if i == 0 {
        return Ok(0);
    }
    if i >= times.len() {
        return Ok(times.len() - 1);
    }
    if t - times[i - 1] <= times[i] - t {
        Ok(i - 1)
    } else {
        Ok(i)
    }
}

/// Row-major flattening of an arbitrary 3x3 matrix (same convention as
/// [`crate::so3::to_9d`]).
pub fn flatten_row_major(m: &Matrix3<f64>) -> [f64; 9] {
    [
        m[(0, 0)],
        m[(0, 1)],
        m[(0, 2)],
        m[(1, 0)],
        m[(1, 1)],
        m[(1, 2)],
        m[(2, 0)],
        m[(2, 1)],
        m[(2, 2)],
    ]
}

/// Fits one second-order window per sample index and assembles the control
/// path. Window failures are reported with the failing anchor index.
pub fn fit_path(
    traj: &RotationTrajectory,
    n: usize,
    weights: Option<&SGWeights>,
) -> Result<ControlPath> {
    if n == 0 {
        return Err(Error::Usage("half-window must be at least 1".into()));
    }
    if traj.len() < 2 * n + 1 {
        return Err(Error::Usage(format!(
            "trajectory has {} samples; need at least {} for half-window {n}",
            traj.len(),
            2 * n + 1
        )));
    }
    let eff = weights.map(|w| {
        if w.half_window() != n {
            Err(Error::Usage(format!(
                "weight vector sized for n={}, fit requested n={n}",
                w.half_window()
            )))
        } else {
            Ok(w.effective())
        }
    });
    let eff = match eff {
        Some(r) => Some(r?),
        None => None,
    };

    let mut coefficients = Vec::with_capacity(traj.len());
    for k in 0..traj.len() {
        let attempt = (|| {
            let sys = build_window_system(traj, k, n, 2)?;
            let lo = sys.first_weight_index();
            let slice = eff
                .as_ref()
                .map(|e| &e[lo..lo + sys.window_len()]);
            solve_coefficients(&sys, slice)
        })();
        match attempt {
            Ok(c) => coefficients.push(c),
            Err(e) => {
                return Err(Error::Window {
                    index: k,
                    source: Box::new(e),
                })
            }
        }
    }
    ControlPath::from_coefficients(coefficients)
}
