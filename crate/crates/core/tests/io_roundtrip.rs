mod common;

use std::fs;

use pile_kd::io::{self, EnsembleRecord};
use pile_kd::metrics::{pnr_mean, ScoredQuery};
use pile_kd::pipeline::{ensemble_dataset, EnsembleMethod};
use pile_kd::student::{score, Architecture, StudentParams};
use pile_kd::synth::{self, SynthConfig, TeacherMode};
use pile_kd::{Dataset, Error, PileConfig};
use rand::{Rng, SeedableRng};

fn perturbed(seed: u64) -> Dataset {
    let config = SynthConfig {
        num_queries: 12,
        test_queries: 0,
        teacher_mode: TeacherMode::Perturbed {
            noise_sigma: 0.3,
            bias_magnitude: 0.5,
            biased_query_fraction: 0.3,
        },
        seed,
        ..SynthConfig::default()
    };
    synth::generate(&config).unwrap().train
}

#[test]
fn groups_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("groups.jsonl");
    let data = perturbed(3);
    io::write_groups(&data, &path).unwrap();
    assert_eq!(io::read_groups(&path).unwrap(), data);

    let first = fs::read(&path).unwrap();
    io::write_groups(&data, &path).unwrap();
    assert_eq!(fs::read(&path).unwrap(), first);
    assert!(first.ends_with(b"\n"));
    assert!(first.starts_with(io::GROUPS_HEADER.as_bytes()));
}

#[test]
fn teacher_count_mismatch_names_line_seven() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let mut data = perturbed(4);
    data.groups[5].docs[2].teacher_logits.pop();
    io::write_groups(&data, &path).unwrap();
    match io::read_groups(&path).unwrap_err() {
        Error::Validation { line, message, .. } => {
            assert_eq!(line, 7, "{message}");
        }
        other => panic!("expected a validation error, got {other}"),
    }
}

#[test]
fn malformed_line_is_a_parse_error_with_its_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let data = perturbed(5);
    io::write_groups(&data, &path).unwrap();
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("{\"query_id\": \n");
    fs::write(&path, text).unwrap();
    match io::read_groups(&path).unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, data.groups.len() + 2),
        other => panic!("expected a parse error, got {other}"),
    }
}

#[test]
fn empty_file_is_an_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    fs::write(&path, "").unwrap();
    let data = io::read_groups(&path).unwrap();
    assert!(data.groups.is_empty());
}

#[test]
fn missing_file_reports_its_path() {
    let err = io::read_groups("/nonexistent/groups.jsonl").unwrap_err();
    assert_eq!(err.category(), "io");
    assert!(
        err.to_string().contains("/nonexistent/groups.jsonl"),
        "{err}"
    );
}

#[test]
fn ensemble_records_round_trip_with_trace() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ens.jsonl");
    let data = perturbed(6);
    let method = EnsembleMethod::Pile(PileConfig {
        trace: true,
        ..PileConfig::default()
    });
    let records = ensemble_dataset(&data, &method).unwrap();
    io::write_ensemble(&records, &path).unwrap();
    let back: Vec<EnsembleRecord> = io::read_ensemble(&path).unwrap();
    assert_eq!(back, records);
    assert!(back.iter().all(|r| r.trace.is_some()));
}

#[test]
fn read_back_model_scores_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    for arch in [
        Architecture::Linear,
        Architecture::Mlp {
            hidden_sizes: vec![7, 3],
        },
    ] {
        let params = StudentParams::random(arch, 5, &mut rng);
        io::write_model(&params, &path).unwrap();
        let back = io::read_model(&path).unwrap();
        assert_eq!(back, params);
        for _ in 0..200 {
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-10.0..10.0)).collect();
            assert_eq!(
                score(&back, &x).unwrap().to_bits(),
                score(&params, &x).unwrap().to_bits()
            );
        }
    }
}

#[test]
fn model_with_wrong_weight_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let mut params = StudentParams::zeros(Architecture::Linear, 3);
    params.weights.push(1.0);
    io::write_model(&params, &path).unwrap();
    assert_eq!(io::read_model(&path).unwrap_err().category(), "validation");
}

#[test]
fn report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let ys = common::labels(&[0, 1, 2, 3]);
    let report = pnr_mean([ScoredQuery {
        query_id: "q",
        scores: &[0.1 + 0.2, 0.2, 1.0 / 3.0, 0.4],
        labels: &ys,
    }])
    .unwrap();
    io::write_report(&report, &path).unwrap();
    assert_eq!(io::read_report(&path).unwrap(), report);
}
