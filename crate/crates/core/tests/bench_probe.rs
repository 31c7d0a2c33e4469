//! Manual timing probe: `cargo test --test bench_probe -- --ignored --nocapture`

use std::time::Instant;

use landau::grid::{Field, SpectralOps, VelocityGrid};
use landau::kernel::{CoefficientAssembler, KernelParams};
use landau::multiindex::MultiIndex;
use landau::solver::{stable_dt, RhsForm, Solver, SolverConfig, SolverState};

#[test]
#[ignore]
fn probe() {
    let grid = VelocityGrid::new(2, 128, 8.0).unwrap();
    let params = KernelParams::for_grid(1.0, &grid).unwrap();
    let t0 = Instant::now();
    let assembler = CoefficientAssembler::new(grid, params).unwrap();
    println!("assembler construction: {:?}", t0.elapsed());
    let f = Field::from_fn(grid, |p| {
        (-(p[0] * p[0] + p[1] * p[1]) / 0.32).exp()
    });

    let reps = 20;
    let t0 = Instant::now();
    for _ in 0..reps {
        let _ = assembler.assemble(&f).unwrap();
    }
    println!("assemble: {:?}", t0.elapsed() / reps);

    let coeffs = assembler.assemble(&f).unwrap();
    let config = SolverConfig {
        form: RhsForm::Flux,
        ..SolverConfig::default()
    };
    let solver = Solver::new(&assembler, config).unwrap();
    let t0 = Instant::now();
    for _ in 0..reps {
        let _ = solver.rhs(&f, &coeffs).unwrap();
    }
    println!("rhs flux: {:?}", t0.elapsed() / reps);

    let ops = assembler.spectral_ops();
    let t0 = Instant::now();
    for _ in 0..reps {
        let _ = ops.forward(&f);
    }
    println!("forward 128^2: {:?}", t0.elapsed() / reps);

    let fhat = ops.forward(&f);
    let e1 = MultiIndex::unit(2, 0);
    let e2 = MultiIndex::unit(2, 1);
    let t0 = Instant::now();
    for _ in 0..reps {
        let _ = ops.derivative_pair(&fhat, &e1, &e2).unwrap();
    }
    println!("derivative_pair: {:?}", t0.elapsed() / reps);

    let _ = SpectralOps::new(grid);
    let state = SolverState { t: 0.0, min_f: 0.0, f: f.clone(), coeffs };
    let dt = stable_dt(&state.coeffs, &grid, 0.5, 0.1);
    let t0 = Instant::now();
    for _ in 0..5 {
        let _ = solver.step(&state, dt).unwrap();
    }
    println!("full step (every-stage): {:?}", t0.elapsed() / 5);
}

#[test]
#[ignore]
fn rayon_probe() {
    use rayon::prelude::*;
    println!("rayon threads: {}", rayon::current_num_threads());
    let work = |i: u64| {
        let mut x = i as f64 + 1.0;
        for _ in 0..100_000_000u64 {
            x = (x * 1.0000001).sqrt() * 1.1;
        }
        x
    };
    let t0 = std::time::Instant::now();
    let s: f64 = (0..4u64).map(work).sum();
    let seq = t0.elapsed();
    let t0 = std::time::Instant::now();
    let p: f64 = (0..4u64).into_par_iter().map(work).sum();
    let par = t0.elapsed();
    println!("seq {seq:?} par {par:?} ({s} {p})");
}

#[test]
#[ignore]
fn probe_fft_parts() {
    use landau::fft::NdFft;
    use rustfft::num_complex::Complex64;
    for m in [128usize, 192, 256] {
        let fft = NdFft::new(&[m, m]);
        let mut data: Vec<Complex64> = (0..m * m)
            .map(|i| Complex64::new((i as f64 * 0.7).sin(), 0.0))
            .collect();
        let reps = 50;
        let t0 = Instant::now();
        for _ in 0..reps {
            fft.forward(&mut data);
        }
        println!("forward {m}x{m}: {:?}", t0.elapsed() / reps);
    }

    let grid = VelocityGrid::new(2, 128, 8.0).unwrap();
    let ops = SpectralOps::new(grid);
    let f = Field::from_fn(grid, |p| (-(p[0] * p[0] + p[1] * p[1]) / 0.32).exp());
    let fhat = ops.forward(&f);
    let reps = 50;
    let t0 = Instant::now();
    for _ in 0..reps {
        let _ = ops.inverse(&fhat);
    }
    println!("ops.inverse: {:?}", t0.elapsed() / reps);

    let comps: Vec<Field> = (0..2)
        .map(|a| Field::from_fn(grid, |p| p[a] * (-(p[0] * p[0] + p[1] * p[1])).exp()))
        .collect();
    let refs: Vec<&Field> = comps.iter().collect();
    let t0 = Instant::now();
    for _ in 0..reps {
        let _ = ops.divergence(&refs).unwrap();
    }
    println!("ops.divergence: {:?}", t0.elapsed() / reps);

    let e1 = MultiIndex::unit(2, 0);
    let t0 = Instant::now();
    for _ in 0..reps {
        let _ = ops.derivative_spectrum(&fhat, &e1).unwrap();
    }
    println!("derivative_spectrum only: {:?}", t0.elapsed() / reps);
}

#[test]
#[ignore]
fn probe_divergence_parts() {
    use rustfft::num_complex::Complex64;
    let n = 128usize;
    let z: Vec<Complex64> = (0..n * n)
        .map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos()))
        .collect();
    let k_table: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
    let i_unit = Complex64::new(0.0, 1.0);
    let reps = 200;
    let t0 = Instant::now();
    let mut sink = Complex64::default();
    for _ in 0..reps {
        let mut div = vec![Complex64::default(); n * n];
        for i in 0..n {
            let ri = (n - i) % n;
            for j in 0..n {
                let rj = (n - j) % n;
                let zf = z[i * n + j];
                let zr = z[ri * n + rj].conj();
                let f1 = 0.5 * (zf + zr);
                let f2 = -0.5 * i_unit * (zf - zr);
                div[i * n + j] = i_unit * (k_table[i] * f1 + k_table[j] * f2);
            }
        }
        sink += div[5];
    }
    println!("combine loop: {:?} ({sink})", t0.elapsed() / reps);
}

#[test]
#[ignore]
fn probe_divergence_isolated() {
    let grid = VelocityGrid::new(2, 128, 8.0).unwrap();
    let ops = SpectralOps::new(grid);
    let comps: Vec<Field> = (0..2)
        .map(|a| Field::from_fn(grid, |p| p[a] * (-(p[0] * p[0] + p[1] * p[1])).exp()))
        .collect();
    let refs: Vec<&Field> = comps.iter().collect();
    // warm up pools and planner
    for _ in 0..5 {
        let _ = ops.divergence(&refs).unwrap();
    }
    let reps = 100;
    let t0 = Instant::now();
    for _ in 0..reps {
        let _ = ops.divergence(&refs).unwrap();
    }
    println!("divergence warm: {:?}", t0.elapsed() / reps);

    let f = &comps[0];
    for _ in 0..5 {
        let _ = ops.forward(f);
    }
    let t0 = Instant::now();
    for _ in 0..reps {
        let _ = ops.forward(f);
    }
    println!("forward warm: {:?}", t0.elapsed() / reps);
}

#[test]
#[ignore]
fn probe_divergence_identity() {
    // Σ_i ∂_i ā_ij vs b̄_j and Σ_j ∂_j b̄_j vs c̄ on the masked region
    let grid = VelocityGrid::new(2, 128, 12.0).unwrap();
    for gamma in [0.0, 1.0] {
        let params = KernelParams::for_grid(gamma, &grid).unwrap();
        let assembler = CoefficientAssembler::new(grid, params).unwrap();
        let f = Field::from_fn(grid, |p| {
            ((-((p[0] - 0.4).powi(2) + p[1] * p[1]) / 0.5).exp()
                + (-((p[0] + 0.4).powi(2) + p[1] * p[1]) / 0.4).exp())
                / 2.8
        });
        let coeffs = assembler.assemble(&f).unwrap();
        let d = 2;
        let mask2 = (grid.edge() / 4.0) * (grid.edge() / 4.0);
        // route: ∂_i ā_ij = a_ij * ∂_i f
        let mut div_rows: Vec<Vec<f64>> = vec![vec![0.0; grid.size()]; d];
        for axis in 0..d {
            let da = assembler
                .assemble_derivative(&f, &MultiIndex::unit(d, axis))
                .unwrap();
            for j in 0..d {
                for (o, &v) in div_rows[j].iter_mut().zip(da.abar(axis, j)) {
                    *o += v;
                }
            }
        }
        for j in 0..d {
            let mut num = 0.0f64;
            let mut den = 0.0f64;
            for i in 0..grid.size() {
                if grid.radius2(i) <= mask2 {
                    num = num.max((div_rows[j][i] - coeffs.bbar(j)[i]).abs());
                    den = den.max(coeffs.bbar(j)[i].abs());
                }
            }
            println!("gamma={gamma} axis {j}: div(abar) vs bbar rel {:.3e}", num / den);
        }
        let mut div_b = vec![0.0; grid.size()];
        for axis in 0..d {
            let da = assembler
                .assemble_derivative(&f, &MultiIndex::unit(d, axis))
                .unwrap();
            for (o, &v) in div_b.iter_mut().zip(da.bbar(axis)) {
                *o += v;
            }
        }
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 0..grid.size() {
            if grid.radius2(i) <= mask2 {
                num = num.max((div_b[i] - coeffs.cbar()[i]).abs());
                den = den.max(coeffs.cbar()[i].abs());
            }
        }
        println!("gamma={gamma}: div(bbar) vs cbar rel {:.3e}", num / den);
    }
}
