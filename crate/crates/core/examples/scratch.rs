use hsmm_npb::distributions::{niw_data_driven, NIWParams};
use hsmm_npb::durations::{BetaPrior, DurationFamily, GammaPrior};
use hsmm_npb::eval::{hamming_error, used_states};
use hsmm_npb::genmodel::{make_experiment, ExperimentConfig, ExperimentSpec};
use hsmm_npb::weaklimit::{gibbs_sweep, init_state, WeakLimitConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn rng(seed: u64) -> ChaCha20Rng { ChaCha20Rng::seed_from_u64(seed) }

fn main() {
    let config = ExperimentConfig::defaults_for(ExperimentSpec::PoissonHsmm);
    let bundle = make_experiment(ExperimentSpec::PoissonHsmm, 5, &config, &mut rng(5)).unwrap();
    // one chain per sequence per model for a quick scan
    for model in 0..2u64 {
        let mut hams = Vec::new();
        let mut useds = Vec::new();
        for sc_idx in 0..25usize {
            let s = sc_idx / 5;
            let seq = &bundle.sequences[s];
            let prior = {
                let base = niw_data_driven(&seq.data).unwrap();
                let d = seq.data[0].len() as f64;
                let sc = (base.dof - d - 1.0) / base.dof / 4.0;
                NIWParams::new(base.mean.clone(), 0.1, base.dof, base.scatter.clone() * sc).unwrap()
            };
            let dur = if model == 0 {
                DurationFamily::poisson(4.0, GammaPrior { shape: 2.0, rate: 0.5 }).unwrap()
            } else {
                DurationFamily::geometric(0.5, BetaPrior::uniform()).unwrap()
            };
            let mut cfg = WeakLimitConfig::new(8, prior, dur);
            cfg.n_components = 2;
            cfg.init_segment_len = 5;
            let mut st = init_state(&cfg, &seq.data, &mut rng(300 + sc_idx as u64 + model * 7000)).unwrap();
            let mut r = rng(400 + sc_idx as u64 + model * 9000);
            for _ in 0..200 {
                gibbs_sweep(&mut st, &seq.data, &mut r).unwrap();
            }
            let labels = st.seg.frame_labels();
            let ham = hamming_error(&labels, &seq.truth.frame_labels).unwrap();
            let used = used_states(&labels, 0.01).unwrap();
            hams.push(ham);
            useds.push(used);
        }
        let name = if model == 0 { "poisson" } else { "geometric" };
        println!("{name}: ham {:?}", hams.iter().map(|h| (h * 1000.0).round() / 1000.0).collect::<Vec<_>>());
        println!("{name}: used {useds:?}");
    }
}
