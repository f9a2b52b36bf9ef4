use flowsig::designer::*;
use flowsig::netgen::{generate, NetworkSpec};
use flowsig::prediction::CdfControl;
use std::time::Instant;

fn main() {
    let ctrl = CdfControl::default();
    for seed in 1..=8u64 {
        let t0 = Instant::now();
        let net = generate(&NetworkSpec { seed, ..NetworkSpec::default() }).unwrap();
        let gen_t = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let fp = find_fixed_point(
            &net.game, &net.beliefs, &net.sigma_s_base, &net.beliefs.mu_h.clone(),
            default_tol(&net.game), 500, ctrl,
        ).unwrap();
        let fp_t = t1.elapsed().as_secs_f64();
        let t2 = Instant::now();
        let rep = stability(&net.game, &net.beliefs, &net.sigma_s_base, &fp.mu_s0, ctrl).unwrap();
        let st_t = t2.elapsed().as_secs_f64();
        let rep9 = {
            let s9 = &net.sigma_s_base * 9.0;
            let fp9 = find_fixed_point(&net.game, &net.beliefs, &s9, &fp.mu_s0, default_tol(&net.game), 500, ctrl).unwrap();
            stability(&net.game, &net.beliefs, &s9, &fp9.mu_s0, ctrl).unwrap()
        };
        println!(
            "seed {seed}: conv={} iters={} rho={:.3} rho9={:.3} gen={gen_t:.1}s fp={fp_t:.1}s stab={st_t:.1}s",
            fp.converged, fp.iterations, rep.spectral_radius, rep9.spectral_radius
        );
    }
}
