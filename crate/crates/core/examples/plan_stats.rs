use rfmc::stability::*;
use std::time::Instant;

fn main() {
    let m = SlopeModel::new(SlopeGeometry::default()).unwrap();
    for step in [1.0, 0.5, 0.25] {
        let t = Instant::now();
        let plan = SearchPlan::build(&m, SearchSpec::with_step(&m.geometry, step)).unwrap();
        let build = t.elapsed();
        let field: Vec<f64> = (0..m.n_cells()).map(|i| 15.0 + (i % 13) as f64).collect();
        let t = Instant::now();
        let n = 20;
        let mut acc = 0.0;
        for _ in 0..n {
            acc += plan.classify(&field).fos_min;
        }
        let cls = t.elapsed() / n;
        println!(
            "step {step}: {} circles, kappa {:.6}, build {:?}, classify {:?}, fos {:.4}",
            plan.n_circles(),
            plan.kappa,
            build,
            cls,
            acc / n as f64
        );
    }
}
