use anniwalk::fixtures;
use anniwalk::geometry::{build_interface, build_lattice, Side};
use anniwalk::pde::*;

fn main() {
    let spec = fixtures::two_unit_squares();
    let lp = build_lattice(&spec, Side::Plus, 4).unwrap();
    let lm = build_lattice(&spec, Side::Minus, 4).unwrap();
    let iface = build_interface(&spec, &lp, &lm).unwrap();
    let op = SideOracle::analytic(vec![-1.0, 0.0], vec![0.0, 1.0], |_| 1.0, 32);
    let om = SideOracle::analytic(vec![0.0, 0.0], vec![1.0, 1.0], |_| 1.0, 32);
    let cfg = SolverConfig { time_steps: 64, quad_nodes: 24, ..SolverConfig::default() };
    let sol = solve_coupled_picard(op, om, &iface, 1.0, 1.0, &cfg).unwrap();
    let f: Vec<f64> = (0..=64).map(|k| {
        sol.interface_product(k).iter().zip(&sol.iface_weights).map(|(p,w)| p*w).sum()
    }).collect();
    for k in (0..=60).step_by(4) {
        let d4 = f[k] - 4.0*f[k+1] + 6.0*f[k+2] - 4.0*f[k+3] + f[k+4];
        println!("k={k:2} F={:.10} d4={d4:+.3e}", f[k]);
    }
    let lost = 1.0 - sol.mass(Side::Plus, 1.0);
    let flux = sol.mass_loss_by_flux_history(1.0);
    println!("defect {:.3e}", (lost-flux).abs());
    println!("windows: {}", sol.windows.len());
}
