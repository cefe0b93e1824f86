//! Damped-least-squares inverse kinematics with an optional nullspace objective.

use nalgebra::{SMatrix, SVector, Vector6};
use serde::{Deserialize, Serialize};

use super::{JointLimits, JointVector, KinematicChain, Pose, NUM_JOINTS};
use crate::error::{Error, Result};

type JointRates = SVector<f64, NUM_JOINTS>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkParams {
    /// Damping factor lambda; the normal equations use lambda squared.
    pub damping: f64,
    pub max_iterations: usize,
    /// Metres.
    pub position_tol: f64,
    /// Radians.
    pub orientation_tol: f64,
    /// Largest |dq_i| allowed in one iteration (rad or m).
    pub step_clamp: f64,
    pub nullspace_gain: f64,
    /// Joints the solver may move. Locked joints keep their starting value.
    pub active: [bool; NUM_JOINTS],
}

impl Default for IkParams {
    fn default() -> Self {
        Self {
            damping: 0.1,
            max_iterations: 200,
            position_tol: 1e-4,
            orientation_tol: 1e-3,
            step_clamp: 0.1,
            nullspace_gain: 0.0,
            active: [true; NUM_JOINTS],
        }
    }
}

impl IkParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.damping) {
            return Err(Error::InvalidArgument("IK damping must be positive".into()));
        }
        if !positive(self.position_tol) || !positive(self.orientation_tol) {
            return Err(Error::InvalidArgument("IK tolerances must be positive".into()));
        }
        if !positive(self.step_clamp) {
            return Err(Error::InvalidArgument("IK step clamp must be positive".into()));
        }
        if !(self.nullspace_gain.is_finite() && self.nullspace_gain >= 0.0) {
            return Err(Error::InvalidArgument("nullspace gain must be >= 0".into()));
        }
        Ok(())
    }
}

/// Secondary joint-space objective projected into the Jacobian nullspace.
pub trait NullspaceObjective {
    /// Direction in joint space that improves the objective (an ascent direction).
    fn gradient(&self, q: &JointVector) -> JointRates;
}

impl<F> NullspaceObjective for F
where
    F: Fn(&JointVector) -> JointRates,
{
    fn gradient(&self, q: &JointVector) -> JointRates {
        self(q)
    }
}

/// Pulls every joint toward the middle of its travel, weighted by 1/span^2.
#[derive(Clone, Debug)]
pub struct JointCentering {
    pub limits: JointLimits,
}

impl NullspaceObjective for JointCentering {
    fn gradient(&self, q: &JointVector) -> JointRates {
        let center = self.limits.center();
        JointRates::from_fn(|i, _| {
            let span = self.limits.span(i).max(1e-9);
            (center[i] - q[i]) / (span * span)
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IkSolution {
    pub q: JointVector,
    /// Position residual in metres.
    pub position_residual: f64,
    /// Orientation residual in radians.
    pub orientation_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Iterates `dq = J^T (J J^T + lambda^2 I)^-1 e + k (I - J^+ J) g` from `q0` toward `target`.
///
/// Each step is scaled so `max |dq_i| <= step_clamp` and the result is projected back
/// onto the joint limits, so the returned configuration is always within limits.
pub fn solve_dls(
    chain: &KinematicChain,
    q0: &JointVector,
    target: &Pose,
    params: &IkParams,
    objective: Option<&dyn NullspaceObjective>,
) -> Result<IkSolution> {
    params.validate()?;
    chain.limits.check(q0)?;
    if !(target.position.iter().chain(target.rotation.iter()).all(|v| v.is_finite())) {
        return Err(Error::InvalidArgument("IK target is not finite".into()));
    }

    let mask = JointRates::from_fn(|i, _| if params.active[i] { 1.0 } else { 0.0 });
    let damping_sq = params.damping * params.damping;
    let mut q = *q0;
    let mut iterations = 0;

    loop {
        let frames = chain.frames_unchecked(&q);
        let (dp, dr) = frames[NUM_JOINTS].error_to(target);
        let position_residual = dp.norm();
        let orientation_residual = dr.norm();
        if !(position_residual.is_finite() && orientation_residual.is_finite()) {
            return Err(Error::NumericalFailure("non-finite pose error".into()));
        }
        let converged =
            position_residual < params.position_tol && orientation_residual < params.orientation_tol;
        if converged || iterations >= params.max_iterations {
            return Ok(IkSolution {
                q,
                position_residual,
                orientation_residual,
                iterations,
                converged,
            });
        }

        let jac = chain.jacobian_from_frames(&frames);
        let error = Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z);
        // Joints pinned at a limit and pushed further out are locked for this step,
        // so the rest of the chain takes up their share of the error.
        let mut free = mask;
        let mut dq = dls_step(&jac, &free, &error, damping_sq, &q, params, objective)?;
        for _ in 0..NUM_JOINTS {
            let pinned: Vec<usize> = (0..NUM_JOINTS)
                .filter(|&i| free[i] > 0.0)
                .filter(|&i| {
                    (q[i] <= chain.limits.lower[i] && dq[i] < 0.0) || (q[i] >= chain.limits.upper[i] && dq[i] > 0.0)
                })
                .collect();
            if pinned.is_empty() {
                break;
            }
            pinned.iter().for_each(|&i| free[i] = 0.0);
            dq = dls_step(&jac, &free, &error, damping_sq, &q, params, objective)?;
        }

        if !dq.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite joint step".into()));
        }
        let largest = dq.amax();
        if largest > params.step_clamp {
            dq *= params.step_clamp / largest;
        }
        q = chain.limits.clamp(&JointVector(q.0 + dq));
        iterations += 1;
    }
}

/// One damped step using only the joints with `free[i] == 1`.
fn dls_step(
    jac: &SMatrix<f64, 6, NUM_JOINTS>,
    free: &JointRates,
    error: &Vector6<f64>,
    damping_sq: f64,
    q: &JointVector,
    params: &IkParams,
    objective: Option<&dyn NullspaceObjective>,
) -> Result<JointRates> {
    let mut jac = *jac;
    for i in 0..NUM_JOINTS {
        if free[i] == 0.0 {
            jac.column_mut(i).fill(0.0);
        }
    }
    let normal = jac * jac.transpose() + SMatrix::<f64, 6, 6>::identity() * damping_sq;
    let y = normal
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("damped normal matrix not positive definite".into()))?
        .solve(error);
    let mut dq: JointRates = jac.transpose() * y;
    if let Some(objective) = objective.filter(|_| params.nullspace_gain > 0.0) {
        let g = objective.gradient(q).component_mul(free);
        let pinv = jac
            .pseudo_inverse(1e-9)
            .map_err(|e| Error::NumericalFailure(format!("pseudo-inverse: {e}")))?;
        let projector = SMatrix::<f64, NUM_JOINTS, NUM_JOINTS>::identity() - pinv * jac;
        dq += (projector * g).component_mul(free) * params.nullspace_gain;
    }
    Ok(dq)
}
