use cliqueopt::experiment::*;
use cliqueopt::optimizer::ChainSource;

fn main() {
    for (name, lens) in [
        ("taper_0.45", (0..8).map(|i| 0.5 * 0.45f64.powi(i)).collect::<Vec<_>>()),
        ("taper_0.4", (0..8).map(|i| 0.5 * 0.4f64.powi(i)).collect::<Vec<_>>()),
        ("taper_0.35", (0..8).map(|i| 0.5 * 0.35f64.powi(i)).collect::<Vec<_>>()),
        ("taper_0.3", (0..8).map(|i| 0.5 * 0.3f64.powi(i)).collect::<Vec<_>>()),
        ("arm_hand", vec![0.45, 0.42, 0.4, 0.1, 0.06, 0.03, 0.015, 0.008]),
    ] {
        let path = std::env::temp_dir().join(format!("probe_{name}.json"));
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
        let config = ConvergenceConfig { chain: ChainSource::File(path), ..Default::default() };
        let report = run_convergence(&config).unwrap();
        let ExperimentReport::Convergence(r) = report else { panic!() };
        let top1 = r.rows.iter().find(|row| row.k == 1).unwrap();
        let top2 = r.rows.iter().find(|row| row.k == 2).unwrap();
        let bot2 = r.rows.iter().filter(|row| row.k == 2).last().unwrap();
        print!("{name:10}: err1(.15)={:.2e} err2(.15)={:.2e} err2(.001)={:.2e}", top1.mean_err, top2.mean_err, bot2.mean_err);
        for s in &r.slopes {
            print!("  k{}: slope={:.3} R2={:.4}", s.k, s.slope, s.r_squared);
        }
        println!();
    }
}
