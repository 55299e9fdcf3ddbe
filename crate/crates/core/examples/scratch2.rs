use hsmm_npb::durations::{BetaPrior, DurationFamily};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() {
    let mut r = ChaCha20Rng::seed_from_u64(1);
    for n in [24usize, 32, 48, 64, 96] {
        let gen = DurationFamily::geometric(0.25, BetaPrior::uniform()).unwrap();
        // average over several datasets
        let mut frac_r1 = 0.0;
        let datasets = 40;
        for _ in 0..datasets {
            let data: Vec<usize> = (0..n).map(|_| gen.sample(&mut r)).collect();
            let nb = DurationFamily::negbin(3, 0.5, (1..=6).collect(), BetaPrior::uniform()).unwrap();
            let mut hits = 0;
            let reps = 80;
            for _ in 0..reps {
                if let DurationFamily::NegBin(f) = nb.posterior_resample(&data, &[], &mut r).unwrap() {
                    if f.r == 1 { hits += 1; }
                }
            }
            frac_r1 += hits as f64 / reps as f64;
        }
        println!("n={n}: mean P(r=1 | data) = {:.3}", frac_r1 / datasets as f64);
    }
}
