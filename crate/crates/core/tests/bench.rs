use std::sync::Arc;

use cogsim::bench::{
    compare, read_csv, read_json, records_to_csv, records_to_json, run_point, run_sweep, stats, write_csv, write_json,
    BenchError, BenchPlan, BenchRecord, BenchTarget, LocalTarget, Mode, RemoteTarget, SimulatedTarget,
    DEFAULT_MINI_BATCHES,
};
use cogsim::exec::{shipped_profile, AccelProfile};
use cogsim::kernels::Activation;
use cogsim::model::ModelBuilder;
use cogsim::net::{serve, ClientSession, ModelEntry, Registry, ServerConfig};
use cogsim::tensor::Precision;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Virtual-clock target whose first `slow_batches` batches cost `factor`
/// times more, with optional per-batch jitter.
struct Rigged {
    base_ms: f64,
    slow_batches: usize,
    factor: f64,
    jitter: Option<ChaCha8Rng>,
    seen: usize,
}

impl Rigged {
    fn new(base_ms: f64, slow_batches: usize, factor: f64) -> Self {
        Rigged {
            base_ms,
            slow_batches,
            factor,
            jitter: None,
            seen: 0,
        }
    }
}

impl BenchTarget for Rigged {
    fn label(&self) -> String {
        "rigged".into()
    }
    fn model(&self) -> String {
        "m".into()
    }
    fn tiles(&self) -> usize {
        1
    }
    fn run(&mut self, mini: usize, _micro: usize, n: usize, _mode: Mode) -> Result<f64, BenchError> {
        let mut total = 0.0;
        for _ in 0..n {
            let mut t = self.base_ms * mini as f64;
            if self.seen < self.slow_batches {
                t *= self.factor;
            }
            if let Some(rng) = &mut self.jitter {
                t *= rng.gen_range(0.8..1.2);
            }
            self.seen += 1;
            total += t;
        }
        Ok(total)
    }
}

fn plan(min_s: f64) -> BenchPlan {
    BenchPlan {
        mini_batch_sizes: vec![1, 4, 16, 64],
        replicates: 5,
        warmup_batches: 10,
        min_wall_clock_s: min_s,
        ..BenchPlan::default()
    }
}

#[test]
fn warmup_slowdown_does_not_change_statistics() {
    let p = plan(1.0);
    for mini in [1, 16, 64] {
        let clean = run_point(&p, &mut Rigged::new(0.25, 0, 1.0), mini, mini).unwrap();
        let slowed = run_point(&p, &mut Rigged::new(0.25, 10, 100.0), mini, mini).unwrap();
        let close = |a: Option<f64>, b: Option<f64>| (a.unwrap() - b.unwrap()).abs() <= 1e-9 * a.unwrap().abs().max(1.0);
        assert!(close(clean.mean_latency_ms, slowed.mean_latency_ms));
        assert!(close(clean.throughput_sps, slowed.throughput_sps));
        assert!(close(clean.latency_ci95_ms, slowed.latency_ci95_ms));
        assert!(close(clean.throughput_ci95_sps, slowed.throughput_ci95_sps));
    }
}

#[test]
fn every_valid_point_meets_the_duration_rule() {
    let p = BenchPlan {
        micro_batch_sizes: Some(vec![1, 4, 16, 64]),
        ..plan(0.5)
    };
    let profile = shipped_profile("rdu1-cpp").unwrap();
    let s = run_sweep(&p, &mut SimulatedTarget::new(profile, "hermit", 4)).unwrap();
    for r in s.records.iter().filter(|r| r.valid) {
        assert!(r.min_span_s.unwrap() >= p.min_wall_clock_s, "{r:?}");
    }
    let mut rigged = Rigged::new(0.3, 10, 100.0);
    let r = run_point(&p, &mut rigged, 4, 4).unwrap();
    assert!(r.min_span_s.unwrap() >= p.min_wall_clock_s);
}

#[test]
fn ci_matches_reference_student_t() {
    let mut t = Rigged::new(0.2, 0, 1.0);
    t.jitter = Some(ChaCha8Rng::seed_from_u64(5));
    let r = run_point(&plan(0.05), &mut t, 16, 16).unwrap();
    let xs = &r.replicate_latency_ms;
    assert_eq!(xs.len(), 5);
    // reference: t(0.975, 4) = 2.7764451 from tables, s with n-1 denominator
    let m = xs.iter().sum::<f64>() / 5.0;
    let s = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0).sqrt();
    let expected = 2.776_445_105 * s / 5f64.sqrt();
    assert!(expected > 0.0);
    assert!((r.latency_ci95_ms.unwrap() - expected).abs() <= 1e-6 * expected);
    assert!((r.mean_latency_ms.unwrap() - m).abs() < 1e-12);
    let ts = &r.replicate_throughput_sps;
    assert!((r.throughput_ci95_sps.unwrap() - stats::ci95_half_width(ts)).abs() < 1e-9);
}

#[test]
fn invalid_points_exactly_above_diagonal() {
    let sizes: Vec<usize> = (0..8).map(|k| 4usize.pow(k)).collect();
    let p = BenchPlan {
        mini_batch_sizes: sizes.clone(),
        micro_batch_sizes: Some(sizes.clone()),
        replicates: 2,
        warmup_batches: 1,
        min_wall_clock_s: 0.01,
        preferred_mb: false,
    };
    let profile = shipped_profile("rdu1-cpp").unwrap();
    let s = run_sweep(&p, &mut SimulatedTarget::new(profile, "hermit", 4)).unwrap();
    assert_eq!(s.records.len(), 64);
    for r in &s.records {
        assert_eq!(r.valid, r.micro <= r.mini);
        assert_eq!(r.mean_latency_ms.is_some(), r.valid);
        assert_eq!(r.throughput_ci95_sps.is_some(), r.valid);
    }
    // per-row argmin by brute force
    for &mini in &sizes {
        let row: Vec<&BenchRecord> = s.records.iter().filter(|r| r.mini == mini && r.valid).collect();
        let best = row
            .iter()
            .min_by(|a, b| a.mean_latency_ms.partial_cmp(&b.mean_latency_ms).unwrap().then(a.micro.cmp(&b.micro)))
            .unwrap();
        let h = s.highlights.iter().find(|h| h.mini == mini).unwrap();
        assert_eq!((h.micro, h.mean_latency_ms), (best.micro, best.mean_latency_ms.unwrap()));
    }
}

#[test]
fn latency_throughput_consistency_for_synchronous_runs() {
    let profile = shipped_profile("a100-naive").unwrap();
    let p = BenchPlan {
        mini_batch_sizes: DEFAULT_MINI_BATCHES.to_vec(),
        ..plan(0.2)
    };
    let s = run_sweep(&p, &mut SimulatedTarget::new(profile, "hermit", 1)).unwrap();
    for r in &s.records {
        let implied = r.throughput_sps.unwrap() * r.mean_latency_ms.unwrap() / 1000.0;
        assert!((implied - r.mini as f64).abs() <= 0.05 * r.mini as f64);
    }
}

#[test]
fn reports_sort_and_round_trip() {
    let p = BenchPlan {
        mini_batch_sizes: vec![16, 1, 4],
        ..plan(0.01)
    };
    let mut recs = run_sweep(&p, &mut Rigged::new(0.1, 0, 1.0)).unwrap().records;
    recs.reverse();
    let csv = records_to_csv(&recs).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(
        lines[0],
        "target,model,tiles,mini,micro,valid,mean_latency_ms,latency_ci95_ms,throughput_sps,throughput_ci95_sps,replicates,n_batches"
    );
    let minis: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(minis, vec!["1", "4", "16"]);

    let dir = tempfile::tempdir().unwrap();
    let jp = dir.path().join("r.json");
    write_json(&recs, &jp).unwrap();
    let back = read_json(&jp).unwrap();
    assert_eq!(records_to_json(&back).unwrap(), std::fs::read_to_string(&jp).unwrap());

    let cp = dir.path().join("r.csv");
    write_csv(&recs, &cp).unwrap();
    let from_csv = read_csv(&cp).unwrap();
    assert_eq!(records_to_csv(&from_csv).unwrap(), csv);
    assert_eq!(from_csv[0].mean_latency_ms, back[0].mean_latency_ms);
}

#[test]
fn invalid_rows_have_empty_statistics_in_csv() {
    let p = BenchPlan {
        mini_batch_sizes: vec![4],
        micro_batch_sizes: Some(vec![16]),
        ..plan(0.01)
    };
    let recs = run_sweep(&p, &mut Rigged::new(0.1, 0, 1.0)).unwrap().records;
    let csv = records_to_csv(&recs).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "rigged,m,1,4,16,false,,,,,5,0");
}

#[test]
fn remote_rdu_beats_optimized_gpu_at_small_batches() {
    let p = BenchPlan {
        mini_batch_sizes: vec![4, 16, 64, 256],
        ..plan(0.05)
    };
    let a = run_sweep(&p, &mut SimulatedTarget::new(shipped_profile("rdu1-remote").unwrap(), "hermit", 4))
        .unwrap()
        .records;
    let b = run_sweep(&p, &mut SimulatedTarget::new(shipped_profile("a100-opt").unwrap(), "hermit", 1))
        .unwrap()
        .records;
    let rows = compare(&a, &b, 1.0).unwrap();
    assert_eq!(rows.len(), 4);
    for r in rows {
        assert!(r.speedup > 1.0, "{r:?}");
    }
}

#[test]
fn local_target_runs_real_model() {
    let mut b = ModelBuilder::new("tiny", vec![4], Precision::F32, 1);
    b.dense(8, Activation::Relu);
    b.dense(2, Activation::None);
    let model = Arc::new(b.finish().unwrap());
    let p = BenchPlan {
        mini_batch_sizes: vec![8],
        micro_batch_sizes: Some(vec![2, 8]),
        replicates: 2,
        warmup_batches: 2,
        min_wall_clock_s: 0.01,
        preferred_mb: false,
    };
    let s = run_sweep(&p, &mut LocalTarget::new(model, 2)).unwrap();
    assert_eq!(s.records.len(), 2);
    assert!(s.records.iter().all(|r| r.valid && r.min_span_s.unwrap() >= 0.01));
    assert_eq!(s.highlights.len(), 1);
}

#[test]
fn remote_target_measures_over_the_wire() {
    let mut b = ModelBuilder::new("tiny", vec![4], Precision::F16, 1);
    b.dense(2, Activation::None);
    let model = b.finish().unwrap();
    let mut reg = Registry::new();
    reg.insert("tiny", ModelEntry::simulated(model, AccelProfile::affine("svc", 0.2, 0.0)));
    let server = serve(reg, "127.0.0.1:0", ServerConfig::default()).unwrap();
    let session = ClientSession::connect(&server.endpoint()).unwrap();
    let mut target = RemoteTarget::new(session, "tiny", vec![4], Precision::F16);
    let p = BenchPlan {
        mini_batch_sizes: vec![1, 4],
        replicates: 2,
        warmup_batches: 2,
        min_wall_clock_s: 0.02,
        ..BenchPlan::default()
    };
    let s = run_sweep(&p, &mut target).unwrap();
    for r in &s.records {
        assert!(r.valid);
        assert!(r.mean_latency_ms.unwrap() >= 0.2);
        assert!(r.min_span_s.unwrap() >= 0.02);
    }
    assert!(matches!(run_point(&p, &mut target, 4, 2), Err(BenchError::Point { .. })));
}
