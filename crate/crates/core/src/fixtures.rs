//! Bundled domain fixtures used by the test suites, the experiment runner,
//! and the CLI defaults.

use crate::density::DensitySpec;
use crate::geometry::{DomainSpec, RatBox};
use crate::rat::{JsonRat, Rat};

fn rb(lo: &[(i128, i128)], hi: &[(i128, i128)]) -> RatBox {
    RatBox {
        lo: lo.iter().map(|&(p, q)| JsonRat(Rat::new(p, q))).collect(),
        hi: hi.iter().map(|&(p, q)| JsonRat(Rat::new(p, q))).collect(),
    }
}

fn pt(coords: &[(i128, i128)]) -> Vec<JsonRat> {
    coords.iter().map(|&(p, q)| JsonRat(Rat::new(p, q))).collect()
}

/// `D+ = (-1,0)`, `D- = (0,1)`, interface `{0}`.
pub fn interval_pair() -> DomainSpec {
    DomainSpec {
        dimension: 1,
        boxes_plus: vec![rb(&[(-1, 1)], &[(0, 1)])],
        boxes_minus: vec![rb(&[(0, 1)], &[(1, 1)])],
        anchor_plus: pt(&[(-1, 2)]),
        anchor_minus: pt(&[(1, 2)]),
        rho_plus: DensitySpec::flat(),
        rho_minus: DensitySpec::flat(),
        lambda: 1.0,
        lipschitz_m: 1.0,
    }
}

/// `D+ = (-1,0) x (0,1)`, `D- = (0,1)^2`, interface `{0} x [0,1]`.
pub fn two_unit_squares() -> DomainSpec {
    DomainSpec {
        dimension: 2,
        boxes_plus: vec![rb(&[(-1, 1), (0, 1)], &[(0, 1), (1, 1)])],
        boxes_minus: vec![rb(&[(0, 1), (0, 1)], &[(1, 1), (1, 1)])],
        anchor_plus: pt(&[(-1, 2), (1, 2)]),
        anchor_minus: pt(&[(1, 2), (1, 2)]),
        rho_plus: DensitySpec::flat(),
        rho_minus: DensitySpec::flat(),
        lambda: 1.0,
        lipschitz_m: 1.0,
    }
}

/// L-shaped plus domain `(-2,0)x(0,1) u (-1,0)x(0,2)` against `D- = (0,1)x(0,1)`;
/// the overlapping boxes make the open union exactly the open L.
pub fn l_shape_pair() -> DomainSpec {
    DomainSpec {
        dimension: 2,
        boxes_plus: vec![
            rb(&[(-2, 1), (0, 1)], &[(0, 1), (1, 1)]),
            rb(&[(-1, 1), (0, 1)], &[(0, 1), (2, 1)]),
        ],
        boxes_minus: vec![rb(&[(0, 1), (0, 1)], &[(1, 1), (1, 1)])],
        anchor_plus: pt(&[(-1, 2), (1, 2)]),
        anchor_minus: pt(&[(1, 2), (1, 2)]),
        rho_plus: DensitySpec::flat(),
        rho_minus: DensitySpec::flat(),
        lambda: 1.0,
        lipschitz_m: 1.0,
    }
}

/// Standalone L-shape `(0,2)x(0,1) u (0,1)x(0,2)` with a dummy minus side,
/// used by the flood-fill enumeration test.
pub fn l_shape_single() -> DomainSpec {
    DomainSpec {
        dimension: 2,
        boxes_plus: vec![
            rb(&[(0, 1), (0, 1)], &[(2, 1), (1, 1)]),
            rb(&[(0, 1), (0, 1)], &[(1, 1), (2, 1)]),
        ],
        boxes_minus: vec![rb(&[(2, 1), (0, 1)], &[(3, 1), (1, 1)])],
        anchor_plus: pt(&[(1, 2), (1, 2)]),
        anchor_minus: pt(&[(5, 2), (1, 2)]),
        rho_plus: DensitySpec::flat(),
        rho_minus: DensitySpec::flat(),
        lambda: 1.0,
        lipschitz_m: 1.0,
    }
}

/// Interval pair with a drift on each side, for conductance tests.
pub fn interval_pair_with_drift() -> DomainSpec {
    let mut spec = interval_pair();
    spec.rho_plus = DensitySpec::exp_x();
    spec.rho_minus = DensitySpec::exp_x();
    spec
}
