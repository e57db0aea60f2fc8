//! Bundled problem definitions.

use nalgebra::{DMatrix, DVector};

use crate::model::{
    CostSpec, ModeDynamics, Omega, ProblemSpec, ReferenceModel, SwitchedTrackingProblem,
};
use crate::snac::{SamplingMode, TrainConfig, WeightInit};

/// Step of the transformed grid for the Van der Pol example.
pub const VDP_DTHAT: f64 = 0.001;
/// Initial condition of the Van der Pol example.
pub const VDP_X0: [f64; 2] = [1.0, -0.5];
/// Switching time reported for the Van der Pol example in the literature.
pub const VDP_REFERENCE_T1: f64 = 2.654;

pub const LQ_DTHAT: f64 = 0.005;

/// Van der Pol oscillator followed by an unstable linear mode, tracking a
/// sinusoid on `[0, 3]`.
pub fn van_der_pol_spec() -> ProblemSpec {
    ProblemSpec {
        modes: vec![
            ModeDynamics::VanDerPol,
            ModeDynamics::Linear {
                a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, -1.0]),
                b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            },
        ],
        sequence: vec![0, 1],
        t0: 0.0,
        tf: 3.0,
        cost: CostSpec {
            s: DMatrix::from_diagonal(&DVector::from_vec(vec![1e5, 1e5])),
            qbar: DMatrix::from_diagonal(&DVector::from_vec(vec![1e5, 1e7])),
            rbar: DMatrix::from_element(1, 1, 1.0 / VDP_DTHAT),
        },
        reference: ReferenceModel::sinusoid(DVector::zeros(2)),
        omega: Omega {
            state_lo: DVector::from_vec(vec![-4.0, -4.0]),
            state_hi: DVector::from_vec(vec![4.0, 4.0]),
            switch_lo: Some(0.0),
            switch_hi: Some(3.0),
            switch_margin: None,
        },
        terminal_factor: 1.0,
    }
}

pub fn van_der_pol() -> SwitchedTrackingProblem {
    SwitchedTrackingProblem::new(van_der_pol_spec()).expect("bundled problem is valid")
}

pub fn van_der_pol_train_config() -> TrainConfig {
    TrainConfig {
        basis_degree: 3,
        eta: 1000,
        gamma: 5e-3,
        max_inner: 10,
        seed: 42,
        ridge: None,
        sampling: SamplingMode::Resample,
        init: WeightInit::WarmStart,
    }
}

/// Double integrator followed by a damped integrator, regulated to the
/// origin on `[0, 1]` with the switch in `[0.4, 0.6]`.
pub fn lq_two_mode_spec() -> ProblemSpec {
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    ProblemSpec {
        modes: vec![
            ModeDynamics::Linear {
                a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
                b: b.clone(),
            },
            ModeDynamics::Linear {
                a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -0.5]),
                b,
            },
        ],
        sequence: vec![0, 1],
        t0: 0.0,
        tf: 1.0,
        cost: CostSpec {
            s: DMatrix::identity(2, 2),
            qbar: DMatrix::identity(2, 2),
            rbar: DMatrix::identity(1, 1),
        },
        reference: ReferenceModel::constant(DVector::zeros(2)),
        omega: Omega {
            state_lo: DVector::from_vec(vec![-1.0, -1.0]),
            state_hi: DVector::from_vec(vec![1.0, 1.0]),
            switch_lo: Some(0.4),
            switch_hi: Some(0.6),
            switch_margin: None,
        },
        terminal_factor: 1.0,
    }
}

pub fn lq_two_mode() -> SwitchedTrackingProblem {
    SwitchedTrackingProblem::new(lq_two_mode_spec()).expect("bundled problem is valid")
}

pub fn lq_two_mode_train_config() -> TrainConfig {
    TrainConfig {
        basis_degree: 3,
        eta: 500,
        gamma: 1e-9,
        max_inner: 20,
        seed: 7,
        ridge: Some(0.0),
        sampling: SamplingMode::FixedBatch,
        init: WeightInit::WarmStart,
    }
}
