use nslm::cave::{generate_instance, CaveProblem};
use nslm::{estimate_convergence_order, solve, Problem, ProjectionMode, SolverConfig};
use std::sync::Arc;
use std::time::Instant;

fn main() {
    println!("== order seed scan (n=100, tol=1e-12) ==");
    for seed in 1..=20u64 {
        let inst = generate_instance(100, 0.05, seed).unwrap();
        let x0 = inst.default_start();
        let p = CaveProblem::new(Arc::new(inst)).unwrap();
        let cfg = SolverConfig::default().with_outer_tol(1e-12);
        let rep = solve(&p, &x0, &cfg).unwrap();
        let fit = estimate_convergence_order(&rep.trace, p.known_solution().unwrap());
        println!("seed={seed} status={:?} it={} fit={:?}", rep.status, rep.outer_iterations(), fit);
    }
    println!("== timing (n=1000) ==");
    let t0 = Instant::now();
    let inst = generate_instance(1000, 0.05, 1).unwrap();
    println!("gen: {:.2}s nnz={}", t0.elapsed().as_secs_f64(), inst.matrix().nnz());
    let x0 = inst.default_start();
    let p = CaveProblem::new(Arc::new(inst)).unwrap();
    let t1 = Instant::now();
    let rep = solve(&p, &x0, &SolverConfig::default()).unwrap();
    println!("ip solve: {:.2}s it={} status={:?}", t1.elapsed().as_secs_f64(), rep.outer_iterations(), rep.status);
    let t2 = Instant::now();
    let cfg = SolverConfig::default().with_projection_mode(ProjectionMode::Exact);
    let rep2 = solve(&p, &x0, &cfg).unwrap();
    println!("ep solve: {:.2}s it={} status={:?}", t2.elapsed().as_secs_f64(), rep2.outer_iterations(), rep2.status);
    let t3 = Instant::now();
    let sv = nslm::cave::verified_min_singular_value(p.instance());
    println!("dense svd n=1000: {:.2}s smin={:.2}", t3.elapsed().as_secs_f64(), sv);
}
