//! Runs the default distillation benchmark over several seeds and prints the
//! held-out PNR of every configuration, plus the two ablations (update rate
//! 0.1 instead of the configured one, and a single teacher).
//!
//! cargo run --release --example benchmark -- [seeds] [config.json]

use std::time::Instant;

use pile_kd::pipeline::{
    benchmark_on, distill_and_evaluate, restrict_teachers, EnsembleMethod, PipelineConfig,
};
use pile_kd::synth::{self, SynthOutput};
use pile_kd::PileConfig;

fn main() -> pile_kd::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(5, |s| s.parse().expect("seed count"));
    let config = match args.next() {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path).expect("config file"))
            .expect("pipeline config"),
        None => PipelineConfig::default(),
    };
    println!("seed\toracle\tteachers\tbase\tsingle\tae\tpile\tae_logits\tpile_logits\tpile_l0.1\tpile_k1");
    for seed in 0..seeds {
        let t = Instant::now();
        let cfg = config.with_seed(seed);
        let data = synth::generate(&cfg.synth)?;
        let r = benchmark_on(&data, &cfg, seed)?;
        let slow = EnsembleMethod::Pile(PileConfig {
            lambda: 0.1,
            ..cfg.pile.clone()
        });
        let (low_lambda, _) = distill_and_evaluate(&data, Some(&slow), &cfg.student)?;
        let one = SynthOutput {
            train: restrict_teachers(&data.train, 1)?,
            test: data.test.clone(),
            oracle: data.oracle.clone(),
            teachers: None,
        };
        let (one_teacher, _) = distill_and_evaluate(
            &one,
            Some(&EnsembleMethod::Pile(cfg.pile.clone())),
            &cfg.student,
        )?;
        let teachers: Vec<String> = r
            .teacher_pnr
            .iter()
            .map(|p| format!("{:.3}", p.unwrap_or(f64::NAN)))
            .collect();
        println!(
            "{seed}\t{:.3}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t({:.1?})",
            r.oracle,
            teachers.join(","),
            r.base,
            r.single_kd,
            r.ae_kd,
            r.pile_kd,
            r.ae_logits,
            r.pile_logits,
            low_lambda.mean_pnr.unwrap_or(f64::NAN),
            one_teacher.mean_pnr.unwrap_or(f64::NAN),
            t.elapsed()
        );
    }
    Ok(())
}
