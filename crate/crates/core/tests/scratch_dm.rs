//! scratch: controlled DM-GRPO probe (will be deleted)
use flowrl_core::flow::{self, SdeConfig, TimeGrid, VelocityModel};
use flowrl_core::grpo::{grpo_update, CompositeTrajectory, DmSegment, GroupBatch, GrpoConfig, Segment};
use flowrl_core::models::{LmInput, ModelConfig, UnifiedPolicy, vocab};
use flowrl_core::params::{OptKind, Optimizer, ParamSet};
use flowrl_core::rewards::RewardBreakdown;
use flowrl_core::scenarios::ScenarioKind;
use flowrl_core::seeds;

struct Cond<'a> { policy: &'a UnifiedPolicy, params: &'a ParamSet, cond: Vec<f64>, refc: Vec<f64> }
impl VelocityModel for Cond<'_> {
    fn velocity(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.policy.dm.forward(self.params, x, t, &self.cond, &self.refc).unwrap()
    }
    fn dim(&self) -> usize { self.policy.dm.cfg.state_dim }
}

fn tiny() -> ModelConfig {
    let mut m = ModelConfig::default();
    m.lm.embed_dim = 8; m.lm.hidden_dim = 16; m.lm.num_layers = 1;
    m.connector.hidden_dim = 16; m.connector.num_queries = 2; m.connector.value_dim = 8;
    m.connector.mix_dim = 12; m.connector.cond_dim = 8;
    m.dm.state_dim = 4; m.dm.cond_dim = 8; m.dm.hidden_dim = 32; m.dm.ref_dim = 14;
    m
}

#[test]
fn diag_dm_fixed_target() {
    let cfg = tiny();
    let mut params = ParamSet::new();
    let policy = UnifiedPolicy::build(&cfg, &mut params, 5).unwrap();
    let ref_params = params.snapshot().as_param_set();
    let grid = TimeGrid::power_schedule(10, 2.0);
    let sde = SdeConfig::new(0.7).unwrap();
    let gcfg = GrpoConfig { kl_coeff: 0.0, learning_rate: 0.01, ..Default::default() };
    let mut opt = Optimizer::new(OptKind::Adam, gcfg.learning_rate, &params);
    let target = [1.0, 1.0, -1.0, 0.5];
    let cond_inputs = vec![LmInput::token(vocab::COUNT_1)];
    let refc = vec![0.0; 14];
    for step in 0..400u64 {
        let mut trajs = Vec::new();
        for i in 0..8u64 {
            let c = policy.extract_context(&params, &cond_inputs).unwrap();
            let model = Cond { policy: &policy, params: &params, cond: c.clone(), refc: refc.clone() };
            let traj = flow::rollout(&model, &c, &grid, &sde, seeds::derive(42, &[step, i])).unwrap();
            let f = traj.final_state();
            let r = -f.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 4.0;
            let mut reward = RewardBreakdown { compose: Some(r), ..Default::default() };
            reward.finalize(&Default::default());
            trajs.push(CompositeTrajectory {
                kind: ScenarioKind::S3TextToImage,
                segments: vec![Segment::Dm(DmSegment {
                    cond_inputs: cond_inputs.clone(), cond_scale: 1.0,
                    ref_condition: refc.clone(), trajectory: traj })],
                reward, reasoning_len: 0, reflection: None, truncated: false,
            });
        }
        let batch = GroupBatch::from_trajectories(trajs, gcfg.std_guard).unwrap();
        if step % 80 == 0 {
            println!("step {step}: mean reward {:.4}", batch.rewards.iter().sum::<f64>() / 8.0);
        }
        grpo_update(&batch, &gcfg, &policy, &mut params, &ref_params, &sde, &mut opt).unwrap();
    }
    // final
    let c = policy.extract_context(&params, &cond_inputs).unwrap();
    let model = Cond { policy: &policy, params: &params, cond: c.clone(), refc: refc.clone() };
    let mut acc = 0.0;
    for i in 0..32u64 {
        let traj = flow::rollout(&model, &c, &grid, &sde, seeds::derive(999, &[i])).unwrap();
        let f = traj.final_state();
        acc += -f.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 4.0;
    }
    println!("final eval reward: {:.4}", acc / 32.0);
}
