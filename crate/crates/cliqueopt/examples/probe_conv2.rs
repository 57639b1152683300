use cliqueopt::experiment::*;
use cliqueopt::objective::{FdHessianOptions, FdScheme};
use cliqueopt::optimizer::ChainSource;

fn main() {
    let lens: Vec<f64> = (0..8).map(|i| 0.5 * 0.45f64.powi(i)).collect();
    let path = std::env::temp_dir().join("probe_taper.json");
    let file = cliqueopt::kinematics::ChainFile {
        version: 1,
        joints: (0..8).map(|j| cliqueopt::kinematics::JointSpec {
            axis: if j % 2 == 0 { [0.0, 0.0, 1.0] } else { [0.0, 1.0, 0.0] },
            translation: if j == 0 { [0.0, 0.0, 0.2] } else { [lens[j - 1], 0.0, 0.02] },
            rpy: [0.0; 3],
        }).collect(),
        bodies: vec![],
        frames: vec![cliqueopt::kinematics::FrameSpec { name: "ee".into(), link: 8, point: [lens[7], 0.0, 0.0] }],
    };
    file.save(&path).unwrap();
    for step in [1e-4, 1e-5, 1e-6, 1e-7, 1e-8] {
        let config = ConvergenceConfig {
            chain: ChainSource::File(path.clone()),
            orders: vec![2],
            dt_grid: vec![0.01, 0.003, 0.001],
            fd: FdHessianOptions { scheme: FdScheme::GradientCentral, step, asymmetry_limit: 1e-3 },
            ..Default::default()
        };
        let report = run_convergence(&config).unwrap();
        let ExperimentReport::Convergence(r) = report else { panic!() };
        let errs: Vec<String> = r.rows.iter().map(|row| format!("{:.3e}", row.mean_err)).collect();
        println!("step={step:.0e}: err2 at (0.01, 0.003, 0.001) = {errs:?}");
    }
}
