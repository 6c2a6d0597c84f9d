//! End-to-end tour on the built-in reference instance: solve, price the
//! value function, estimate the cost by Monte Carlo, and dump trajectories.

use mflq::{evaluate, riccati, simulate};
use mflq::{MfLqModel, SimConfig, SolveOptions};
use nalgebra::DVector;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = MfLqModel::reference_example(); // or MfLqModel::from_json_str(…)
    assert!(model.check_assumptions().pass());

    let sol = riccati::solve(&model, &SolveOptions::default())?;
    let x0 = DVector::from_element(model.state_dim(), 1.0);
    let value = riccati::value_function(&sol.p_tilde, &x0, 0)?;

    let config = SimConfig {
        horizon: 5.0,
        step: 1e-3,
        paths: 1000,
        seed: 42,
    };
    let cost = evaluate::estimate_cost(&model, &sol.gains.theta, &sol.gains.theta_hat, &x0, 0, &config)?;
    println!(
        "analytic {value:.6}, Monte Carlo {:.6} ± {:.6}",
        cost.mean, cost.standard_error
    );

    let set = simulate::simulate_closed_loop(&model, &sol.gains, &x0, 0, &config)?;
    simulate::write_trajectories_csv(&set, &mut std::fs::File::create("paths.csv")?)?;
    Ok(())
}
