//! scratch (will be deleted)
use flowrl_core::harness::config::RunConfig;
use flowrl_core::harness::eval::generate_query;
use flowrl_core::harness::train::Experiment;
use flowrl_core::grpo::{grpo_update, GroupBatch};
use flowrl_core::rewards::FeatureMap;
use flowrl_core::scenarios::{run_scenario, ScenarioContext};
use flowrl_core::seeds;

#[test]
fn diag_group_rewards() {
    let toml = std::fs::read_to_string("/tmp/c6k.toml").unwrap();
    let cfg = RunConfig::from_toml(&toml).unwrap();
    let mut exp = Experiment::prepare(&cfg, None).unwrap();
    let kind = cfg.scenario_kind().unwrap();
    let grid = cfg.time_grid();
    let sde = cfg.sde_config().unwrap();
    let weights = cfg.reward_weights();
    let comp = cfg.composition_config();
    let raster = cfg.raster_spec();
    let compressor = cfg.compressor_config();
    let features = FeatureMap::new(cfg.rewards.feature_seed, cfg.state_dim(), 64);
    let scen = cfg.scenario_config();
    let gcfg = cfg.grpo_config();
    for step in 0..6u64 {
        let ctx = ScenarioContext { policy: &exp.policy, params: &exp.params, grid: &grid,
            sde: &sde, weights: &weights, comp: &comp, raster: &raster,
            compressor: &compressor, features: &features, cfg: &scen };
        let mut qrng = seeds::stream(cfg.seed, &[seeds::tag::QUERY, step]);
        let q = generate_query(&cfg, kind, &mut qrng).unwrap();
        let mut trajs = Vec::new();
        for i in 0..gcfg.group_size as u64 {
            trajs.push(run_scenario(&ctx, &q, seeds::derive(cfg.seed, &[seeds::tag::TRAJECTORY, step, i])).unwrap());
        }
        let batch = GroupBatch::from_trajectories(trajs, gcfg.std_guard).unwrap();
        println!("step {step} rewards {:?}", batch.rewards.iter().map(|r| (r*256.0).round()).collect::<Vec<_>>());
        println!("       advs {:?}", batch.advantages.iter().map(|a| (a*100.0).round()/100.0).collect::<Vec<_>>());
        let rep = grpo_update(&batch, &gcfg, &exp.policy, &mut exp.params, &exp.ref_params, &sde, &mut exp.optimizer).unwrap();
        println!("       dm_loss {:.4} clip_dm {:.2} grad {:.3}", rep.dm_loss, rep.clip_fraction_dm, rep.grad_norm);
    }
}
