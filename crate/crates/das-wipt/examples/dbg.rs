use das_wipt::model::*;
use das_wipt::uc::{self, UcConfig};

fn main() {
    let params = ScenarioParams {
        num_ports: 2, num_users: 2, side_length: 10.0, noise_power: 0.1,
        pathloss_const: 1.0, pathloss_exp: 2.0, conversion_eff: 0.6,
        circuit_power: Broadcast::Scalar(0.5), weights: Broadcast::Scalar(1.0),
        power_cap: Broadcast::Scalar(6.0), energy_req: Broadcast::Scalar(0.01),
        port_layout: PortLayout::Lattice, fading: true,
    };
    let sc = Scenario::generate(&params, 11).unwrap();
    let ch = Channel::generate(&sc, 12);
    let mut cfg = UcConfig::default();
    cfg.newton.max_outer_iters = 200;
    match uc::solve_detailed(&sc, &ch, &cfg) {
        Ok((rep, _)) => println!("OK uc_ee {:?} psi {:?}", rep.uc_ee, rep.psi_norm),
        Err(e) => println!("ERR {e}"),
    }
}
