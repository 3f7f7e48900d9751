//! scratch diagnostics (will be deleted)
use flowrl_core::flow::{self, SdeConfig, TimeGrid};
use flowrl_core::seeds;
use rand::Rng;
use rand_distr::StandardNormal;

fn mixture_sample(rng: &mut rand_chacha::ChaCha8Rng) -> [f64; 2] {
    let c = if rng.gen_bool(0.5) { -1.2 } else { 1.2 };
    [c + 0.25 * rng.sample::<f64, _>(StandardNormal),
     0.25 * rng.sample::<f64, _>(StandardNormal)]
}

fn energy_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    fn mean_cross(x: &[[f64; 2]], y: &[[f64; 2]]) -> f64 {
        let mut acc = 0.0;
        for p in x { for q in y {
            let dx = p[0] - q[0]; let dy = p[1] - q[1];
            acc += (dx * dx + dy * dy).sqrt();
        }}
        acc / (x.len() as f64 * y.len() as f64)
    }
    (2.0 * mean_cross(a, b) - mean_cross(a, a) - mean_cross(b, b)).max(0.0).sqrt()
}

// analytic optimal velocity for the mixture under linear interpolation
fn optimal_velocity(x: &[f64], t: f64) -> Vec<f64> {
    let mus = [[-1.2f64, 0.0], [1.2, 0.0]];
    let sigma2 = 0.25f64 * 0.25;
    if t < 1e-9 { return vec![0.0, 0.0]; }
    let mut num = [0.0f64, 0.0];
    let mut den = 0.0f64;
    let a = 1.0 - t;
    for mu in &mus {
        let s2 = a * a * sigma2 + t * t;
        let dx = x[0] - a * mu[0];
        let dy = x[1] - a * mu[1];
        let logw = -(dx * dx + dy * dy) / (2.0 * s2) - s2.ln();
        let w = logw.exp();
        // E[x0 | x_t, k]
        let gain = a * sigma2 / s2;
        let ex = [mu[0] + gain * dx, mu[1] + gain * dy];
        num[0] += w * ex[0];
        num[1] += w * ex[1];
        den += w;
    }
    let ex0 = [num[0] / den, num[1] / den];
    vec![(x[0] - ex0[0]) / t, (x[1] - ex0[1]) / t]
}

#[test]
fn diag_oracle_velocity_sampler_bias() {
    let mut truth_rng = seeds::stream(0xACC3, &[seeds::tag::EVAL]);
    let truth: Vec<[f64; 2]> = (0..4000).map(|_| mixture_sample(&mut truth_rng)).collect();
    for &n in &[32usize, 64, 128] {
        let grid = TimeGrid::uniform(n);
        for &eta in &[0.0f64, 0.7, 1.0] {
            let sde = SdeConfig::new(eta).unwrap();
            let model = (2usize, |x: &[f64], t: f64| optimal_velocity(x, t));
            let mut samples = Vec::with_capacity(4000);
            for i in 0..4000u64 {
                let traj = flow::rollout(&model, &[], &grid, &sde,
                    seeds::derive(0xACC3, &[seeds::tag::DM_ROLLOUT, eta.to_bits(), i])).unwrap();
                let f = traj.final_state();
                samples.push([f[0], f[1]]);
            }
            let d = energy_distance(&samples, &truth);
            println!("oracle velocity N={n} eta={eta}: e-dist {d:.4}");
        }
    }
}

use flowrl_core::autodiff::Tape;
use flowrl_core::models::{VelocityNet, VelocityNetConfig};
use flowrl_core::params::{OptKind, Optimizer, ParamSet};

fn train_and_eval(hidden: usize, batch: usize, lr: f64, steps: usize) {
    let cfg = VelocityNetConfig { state_dim: 2, cond_dim: 0, ref_dim: 0, hidden_dim: hidden, output_clip: 12.0 };
    let mut params = ParamSet::new();
    let mut init_rng = seeds::stream(0xACC3, &[seeds::tag::INIT]);
    let net = VelocityNet::new(cfg, &mut params, &mut init_rng).unwrap();
    let mut opt = Optimizer::new(OptKind::Adam, lr, &params);
    let mut rng = seeds::stream(0xACC3, &[seeds::tag::COLD_START]);
    let mut final_loss = 0.0;
    for step in 0..steps {
        let mut tape = Tape::new();
        let mut terms = Vec::with_capacity(batch);
        for _ in 0..batch {
            let x0 = mixture_sample(&mut rng);
            let eps = [rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)];
            let t = flow::sample_time_logit_normal(&mut rng);
            let x_t = [(1.0 - t) * x0[0] + t * eps[0], (1.0 - t) * x0[1] + t * eps[1]];
            let cond = tape.constant(vec![]);
            let pred = net.forward_var(&mut tape, &params, &x_t, t, cond, &[]).unwrap();
            let target = tape.constant(vec![eps[0] - x0[0], eps[1] - x0[1]]);
            let diff = tape.sub(pred, target);
            let sq = tape.mul(diff, diff);
            terms.push(tape.mean(sq));
        }
        let s = tape.sum_list(&terms);
        let loss = tape.scale(s, 1.0 / batch as f64);
        if step > steps - 50 { final_loss += tape.scalar_value(loss) / 50.0; }
        params.zero_grads();
        tape.backward(loss, &mut params).unwrap();
        opt.step(&mut params).unwrap();
    }
    let mut truth_rng = seeds::stream(0xACC3, &[seeds::tag::EVAL]);
    let truth: Vec<[f64; 2]> = (0..4000).map(|_| mixture_sample(&mut truth_rng)).collect();
    let grid = TimeGrid::uniform(32);
    for &eta in &[0.0f64, 1.0] {
        let sde = SdeConfig::new(eta).unwrap();
        let model = (2usize, |x: &[f64], t: f64| net.forward(&params, x, t, &[], &[]).unwrap());
        let mut samples = Vec::with_capacity(4000);
        for i in 0..4000u64 {
            let traj = flow::rollout(&model, &[], &grid, &sde,
                seeds::derive(0xACC3, &[seeds::tag::DM_ROLLOUT, eta.to_bits(), i])).unwrap();
            let f = traj.final_state();
            samples.push([f[0], f[1]]);
        }
        let d = energy_distance(&samples, &truth);
        println!("trained h={hidden} b={batch} lr={lr} steps={steps}: eta={eta} e-dist {d:.4} (final loss {final_loss:.4})");
    }
}

#[test]
fn diag_train_grid() {
    train_and_eval(64, 32, 2e-3, 5000);
    train_and_eval(128, 64, 2e-3, 5000);
    train_and_eval(128, 64, 4e-3, 5000);
}

#[test]
fn diag_oracle_loss_floor() {
    let mut rng = seeds::stream(0xACC4, &[1]);
    let mut acc = 0.0;
    let n = 20000;
    for _ in 0..n {
        let x0 = mixture_sample(&mut rng);
        let eps = [rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)];
        let t = flow::sample_time_logit_normal(&mut rng);
        let x_t = [(1.0 - t) * x0[0] + t * eps[0], (1.0 - t) * x0[1] + t * eps[1]];
        let v = optimal_velocity(&x_t, t);
        let tv = [eps[0] - x0[0], eps[1] - x0[1]];
        acc += ((v[0] - tv[0]).powi(2) + (v[1] - tv[1]).powi(2)) / 2.0;
    }
    println!("oracle flow-matching loss floor: {:.4}", acc / n as f64);
}

fn time_features(t: f64) -> Vec<f64> {
    let tau = std::f64::consts::TAU;
    vec![1.0 - t, (tau * t).sin(), (tau * t).cos(), (2.0 * tau * t).sin(), (2.0 * tau * t).cos(), (4.0 * tau * t).sin(), (4.0 * tau * t).cos(), t * t]
}

fn train_and_eval_tf(hidden: usize, batch: usize, lr: f64, steps: usize) {
    let cfg = VelocityNetConfig { state_dim: 2, cond_dim: 8, ref_dim: 0, hidden_dim: hidden, output_clip: 12.0 };
    let mut params = ParamSet::new();
    let mut init_rng = seeds::stream(0xACC3, &[seeds::tag::INIT]);
    let net = VelocityNet::new(cfg, &mut params, &mut init_rng).unwrap();
    let mut opt = Optimizer::new(OptKind::Adam, lr, &params);
    let mut rng = seeds::stream(0xACC3, &[seeds::tag::COLD_START]);
    let mut final_loss = 0.0;
    for step in 0..steps {
        let mut tape = Tape::new();
        let mut terms = Vec::with_capacity(batch);
        for _ in 0..batch {
            let x0 = mixture_sample(&mut rng);
            let eps = [rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)];
            let t = flow::sample_time_logit_normal(&mut rng);
            let x_t = [(1.0 - t) * x0[0] + t * eps[0], (1.0 - t) * x0[1] + t * eps[1]];
            let cond = tape.constant(time_features(t));
            let pred = net.forward_var(&mut tape, &params, &x_t, t, cond, &[]).unwrap();
            let target = tape.constant(vec![eps[0] - x0[0], eps[1] - x0[1]]);
            let diff = tape.sub(pred, target);
            let sq = tape.mul(diff, diff);
            terms.push(tape.mean(sq));
        }
        let s = tape.sum_list(&terms);
        let loss = tape.scale(s, 1.0 / batch as f64);
        if step > steps - 50 { final_loss += tape.scalar_value(loss) / 50.0; }
        params.zero_grads();
        tape.backward(loss, &mut params).unwrap();
        opt.step(&mut params).unwrap();
    }
    let mut truth_rng = seeds::stream(0xACC3, &[seeds::tag::EVAL]);
    let truth: Vec<[f64; 2]> = (0..4000).map(|_| mixture_sample(&mut truth_rng)).collect();
    let grid = TimeGrid::uniform(32);
    for &eta in &[0.0f64, 1.0] {
        let sde = SdeConfig::new(eta).unwrap();
        let model = (2usize, |x: &[f64], t: f64| net.forward(&params, x, t, &time_features(t), &[]).unwrap());
        let mut samples = Vec::with_capacity(4000);
        for i in 0..4000u64 {
            let traj = flow::rollout(&model, &[], &grid, &sde,
                seeds::derive(0xACC3, &[seeds::tag::DM_ROLLOUT, eta.to_bits(), i])).unwrap();
            let f = traj.final_state();
            samples.push([f[0], f[1]]);
        }
        let d = energy_distance(&samples, &truth);
        println!("tf-trained h={hidden} b={batch} lr={lr}: eta={eta} e-dist {d:.4} (final loss {final_loss:.4})");
    }
}

#[test]
fn diag_train_time_features() {
    train_and_eval_tf(64, 32, 2e-3, 5000);
}

fn mixture_sample2(rng: &mut rand_chacha::ChaCha8Rng, sep: f64, sigma: f64) -> [f64; 2] {
    let c = if rng.gen_bool(0.5) { -sep } else { sep };
    [c + sigma * rng.sample::<f64, _>(StandardNormal),
     sigma * rng.sample::<f64, _>(StandardNormal)]
}

fn train_and_eval2(hidden: usize, batch: usize, lr0: f64, steps: usize, sep: f64, sigma: f64) {
    let cfg = VelocityNetConfig { state_dim: 2, cond_dim: 0, ref_dim: 0, hidden_dim: hidden, output_clip: 12.0 };
    let mut params = ParamSet::new();
    let mut init_rng = seeds::stream(0xACC3, &[seeds::tag::INIT]);
    let net = VelocityNet::new(cfg, &mut params, &mut init_rng).unwrap();
    let mut opt = Optimizer::new(OptKind::Adam, lr0, &params);
    let mut rng = seeds::stream(0xACC3, &[seeds::tag::COLD_START]);
    let avg_window = 800;
    let mut avg: Vec<Vec<f64>> = (0..params.len()).map(|i| vec![0.0; params.values(i).len()]).collect();
    for step in 0..steps {
        opt.learning_rate = lr0 * (1.0 - 0.97 * step as f64 / steps as f64);
        let mut tape = Tape::new();
        let mut terms = Vec::with_capacity(batch);
        for _ in 0..batch {
            let x0 = mixture_sample2(&mut rng, sep, sigma);
            let eps = [rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)];
            let t = flow::sample_time_logit_normal(&mut rng);
            let x_t = [(1.0 - t) * x0[0] + t * eps[0], (1.0 - t) * x0[1] + t * eps[1]];
            let cond = tape.constant(vec![]);
            let pred = net.forward_var(&mut tape, &params, &x_t, t, cond, &[]).unwrap();
            let target = tape.constant(vec![eps[0] - x0[0], eps[1] - x0[1]]);
            let diff = tape.sub(pred, target);
            let sq = tape.mul(diff, diff);
            terms.push(tape.mean(sq));
        }
        let s = tape.sum_list(&terms);
        let loss = tape.scale(s, 1.0 / batch as f64);
        params.zero_grads();
        tape.backward(loss, &mut params).unwrap();
        opt.step(&mut params).unwrap();
        if step + avg_window >= steps {
            for i in 0..params.len() {
                for (a, v) in avg[i].iter_mut().zip(params.values(i)) {
                    *a += v / avg_window as f64;
                }
            }
        }
    }
    for i in 0..params.len() {
        params.values_mut(i).unwrap().copy_from_slice(&avg[i]);
    }
    let mut truth_rng = seeds::stream(0xACC3, &[seeds::tag::EVAL]);
    let truth: Vec<[f64; 2]> = (0..4000).map(|_| mixture_sample2(&mut truth_rng, sep, sigma)).collect();
    let grid = TimeGrid::uniform(32);
    for &eta in &[0.0f64, 0.7, 1.0] {
        let sde = SdeConfig::new(eta).unwrap();
        let model = (2usize, |x: &[f64], t: f64| net.forward(&params, x, t, &[], &[]).unwrap());
        let mut samples = Vec::with_capacity(4000);
        for i in 0..4000u64 {
            let traj = flow::rollout(&model, &[], &grid, &sde,
                seeds::derive(0xACC3, &[seeds::tag::DM_ROLLOUT, eta.to_bits(), i])).unwrap();
            let f = traj.final_state();
            samples.push([f[0], f[1]]);
        }
        let d = energy_distance(&samples, &truth);
        let mx: f64 = samples.iter().map(|p| p[0]).sum::<f64>() / 4000.0;
        let sx: f64 = (samples.iter().map(|p| (p[0]-mx).powi(2)).sum::<f64>() / 4000.0).sqrt();
        let frac_left = samples.iter().filter(|p| p[0] < 0.0).count() as f64 / 4000.0;
        println!("v2 h={hidden} b={batch} lr={lr0} sep={sep} sig={sigma}: eta={eta} e-dist {d:.4} (std_x {sx:.3}, left {frac_left:.3})");
    }
}

#[test]
fn diag_train_v2() {
    train_and_eval2(160, 192, 3e-3, 5000, 1.0, 0.35);
}
