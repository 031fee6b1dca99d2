//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero when a criterion fails on hardware that meets its
//! stated preconditions.

#![allow(clippy::needless_range_loop)]

mod dd;

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use chrono::{Duration, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use cca_core::eval::{eval_set, DistanceNorm, LabeledImage};
use cca_core::frechet::threshold::threshold_value;
use cca_core::frechet::{frechet_distance, sqrtm_spd, stage3_filter, GaussianStats, ScoreSet, StatsAccumulator, ThresholdForm};
use cca_core::pairing::{build_pairs, PairManifest, StageCounts};
use cca_core::pipeline::{BridgeManifest, FilterManifest, Pipeline, PipelineStage, ScoreManifest, StageRange, StageReport};
use cca_core::rasterio::read_real_image;
use cca_core::sar::{normalize, normalize_plane, NormVariant, NormalizationSpec};
use cca_core::synth::{generate, read_labels, Generated, SynthSpec};
use cca_core::{FilterVerdict, PipelineConfig, Plane, RealImage, Rule, SceneRecord, Sensor, Stage};

struct Outcome {
    pass: bool,
    detail: String,
    /// Set when the host cannot meet a hardware precondition of the criterion.
    host_limited: bool,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
            host_limited: false,
        }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Shared synthetic corpus and pipeline runs

struct Run {
    out: PathBuf,
    reports: Vec<StageReport>,
}

struct Corpus {
    _dir: tempfile::TempDir,
    generated: Generated,
    generate_s: f64,
    runs: BTreeMap<usize, Run>,
}

const WORKER_COUNTS: [usize; 3] = [1, 2, 4];

fn corpus() -> &'static Corpus {
    static CORPUS: OnceLock<Corpus> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let dir = tempfile::TempDir::new_in(env!("CARGO_TARGET_TMPDIR")).expect("tempdir");
        let spec = SynthSpec::default();
        let t = Instant::now();
        let generated = generate(&spec, &dir.path().join("corpus")).expect("synthetic corpus");
        let generate_s = t.elapsed().as_secs_f64();
        let mut runs = BTreeMap::new();
        for workers in WORKER_COUNTS {
            let mut cfg = PipelineConfig::load(&generated.config).expect("generated config");
            cfg.run.workers = workers;
            let out = dir.path().join(format!("run_w{workers}"));
            let pipeline = Pipeline::new(cfg, &out).expect("pipeline");
            let reports = pipeline
                .run(
                    StageRange {
                        from: PipelineStage::Ingest,
                        to: PipelineStage::Eval,
                    },
                    false,
                )
                .expect("full pipeline run");
            runs.insert(workers, Run { out, reports });
        }
        Corpus {
            _dir: dir,
            generated,
            generate_s,
            runs,
        }
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_slice(&std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn stage_time(reports: &[StageReport], stages: &[PipelineStage]) -> f64 {
    reports.iter().filter(|r| stages.contains(&r.stage)).map(|r| r.wall_time_s).sum()
}

// ---------------------------------------------------------------------------
// 1. Filter fidelity

fn filter_fidelity() -> Outcome {
    let c = corpus();
    let defaults = PipelineConfig::default();
    let stock_defaults = defaults.stage1.alpha == 4096
        && defaults.stage2.brightness_threshold == 30.0
        && defaults.stage2.nodata_value_threshold == 10
        && defaults.stage2.nodata_ratio == 0.10
        && defaults.stage3.beta == 0.4;
    let used = PipelineConfig::load(&c.generated.config).unwrap();
    let same_thresholds = used.stage1 == defaults.stage1 && used.stage2 == defaults.stage2 && used.stage3 == defaults.stage3;

    let run = &c.runs[&1];
    let filter: FilterManifest = read_json(&run.out.join("filter.json"));
    let score: ScoreManifest = read_json(&run.out.join("score.json"));
    let by_id = |v: &[FilterVerdict]| -> BTreeMap<String, FilterVerdict> {
        v.iter().map(|v| (v.scene_id.clone(), v.clone())).collect()
    };
    let (filter, score) = (by_id(&filter.verdicts), by_id(&score.verdicts));
    let labels = read_labels(&c.generated.labels).unwrap().labels;
    let mut mismatches = Vec::new();
    for label in &labels {
        let f = &filter[&label.scene_id];
        let (stage, rule) = if !f.kept {
            (f.stage, f.rule)
        } else {
            match score.get(&label.scene_id) {
                Some(s) if !s.kept => (s.stage, s.rule),
                Some(_) => (Stage::None, None),
                None => (Stage::None, Some(Rule::FrechetScore)),
            }
        };
        if stage != label.expected_stage || rule != label.expected_rule {
            mismatches.push(label.scene_id.clone());
        }
    }
    let elapsed = stage_time(&run.reports, &[PipelineStage::Filter, PipelineStage::Score]);
    let agree = labels.len() - mismatches.len();
    Outcome::new(
        labels.len() == 1000 && mismatches.is_empty() && stock_defaults && same_thresholds && elapsed <= 60.0,
        format!(
            "{agree}/{} verdicts match labels; filter+score {elapsed:.1}s on 1 worker (limit 60s); corpus generation {:.1}s; default thresholds {}",
            labels.len(),
            c.generate_s,
            if stock_defaults && same_thresholds { "in use" } else { "NOT in use" }
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Fréchet distance against the extended-precision oracle

fn random_spd(rng: &mut ChaCha8Rng, d: usize, ridge: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * ridge
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> GaussianStats {
    GaussianStats { n: 100, mean, cov }
}

fn frechet_oracle_agreement() -> Outcome {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let d = 2 + i % 7;
        let scale = 10f64.powf(r.random_range(-1.0..2.0));
        let mu1 = DVector::from_fn(d, |_, _| r.random_range(-2.0..2.0));
        let mu2 = DVector::from_fn(d, |_, _| r.random_range(-2.0..2.0));
        let c1 = random_spd(&mut r, d, 0.05) * scale;
        let c2 = random_spd(&mut r, d, 0.05) * scale;
        let got = frechet_distance(&gaussian(mu1.clone(), c1.clone()), &gaussian(mu2.clone(), c2.clone()), 1e-6).unwrap();
        let want = dd::frechet_oracle(mu1.as_slice(), &rows(&c1), mu2.as_slice(), &rows(&c2), 1e-6);
        worst = worst.max((got - want).abs() / want.abs());
    }

    let mut closed = 0.0f64;
    for _ in 0..20 {
        let d = r.random_range(2..=8);
        let cov = random_spd(&mut r, d, 0.1);
        let mu1 = DVector::from_fn(d, |_, _| r.random_range(-3.0..3.0));
        let mu2 = DVector::from_fn(d, |_, _| r.random_range(-3.0..3.0));
        let expected = (&mu1 - &mu2).norm_squared();
        let got = frechet_distance(&gaussian(mu1, cov.clone()), &gaussian(mu2, cov), 1e-6).unwrap();
        closed = closed.max((got - expected).abs());
    }
    let diag = frechet_distance(
        &gaussian(DVector::zeros(2), DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]))),
        &gaussian(DVector::zeros(2), DMatrix::identity(2, 2)),
        0.0,
    )
    .unwrap();
    closed = closed.max((diag - 5.0).abs());
    Outcome::new(
        worst <= 1e-6 && closed <= 1e-8,
        format!("200 pairs d=2..8: max relative error {worst:.2e} (limit 1e-6); closed forms max error {closed:.2e} (limit 1e-8)"),
    )
}

// ---------------------------------------------------------------------------
// 3. Matrix square root reconstruction

fn random_orthogonal(r: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0)).qr().q()
}

fn matrix_sqrt_reconstruction() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let d = 1 + i % 16;
        let m = if i % 2 == 0 {
            let a = DMatrix::from_fn(d, d, |_, _| r.random_range(-10.0..10.0));
            &a * a.transpose()
        } else {
            let q = random_orthogonal(&mut r, d);
            let lambda = DVector::from_fn(d, |_, _| 10f64.powf(r.random_range(-8.0..4.0)));
            let m = &q * DMatrix::from_diagonal(&lambda) * q.transpose();
            (&m + m.transpose()) * 0.5
        };
        let x = sqrtm_spd(&m).unwrap();
        let residual = (&x * &x - &m).norm();
        worst = worst.max(residual / m.norm().max(1.0));
    }
    Outcome::new(
        worst <= 1e-8,
        format!("1000 SPD matrices d=1..16: max ‖X·X − m‖_F / max(1, ‖m‖_F) = {worst:.2e} (limit 1e-8)"),
    )
}

// ---------------------------------------------------------------------------
// 4. Streaming statistics

fn batch_oracle(data: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    use dd::Dd;
    let d = data[0].len();
    let n = Dd::from(data.len() as f64);
    let mut mean = vec![Dd::ZERO; d];
    for v in data {
        for k in 0..d {
            mean[k] = mean[k] + Dd::from(v[k]);
        }
    }
    let mean: Vec<Dd> = mean.into_iter().map(|s| s / n).collect();
    let mut cov = vec![vec![Dd::ZERO; d]; d];
    for v in data {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] = cov[i][j] + (Dd::from(v[i]) - mean[i]) * (Dd::from(v[j]) - mean[j]);
            }
        }
    }
    let denom = n - Dd::ONE;
    (
        mean.iter().map(|m| m.to_f64()).collect(),
        cov.iter().map(|row| row.iter().map(|&c| (c / denom).to_f64()).collect()).collect(),
    )
}

fn streaming_stats_merge() -> Outcome {
    let mut r = rng(4);
    let dim = 6;
    let offsets: Vec<f64> = (0..dim).map(|k| 50.0 * k as f64 - 100.0).collect();
    let data: Vec<Vec<f64>> = (0..10_000)
        .map(|_| {
            let z: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
            (0..dim).map(|k| offsets[k] + z[k] + 0.5 * z[(k + 1) % dim]).collect()
        })
        .collect();
    let (mean, cov) = batch_oracle(&data);

    let mut worst = 0.0f64;
    for _ in 0..100 {
        let parts = r.random_range(2..=40);
        let mut cuts: Vec<usize> = (0..parts - 1).map(|_| r.random_range(0..=data.len())).collect();
        cuts.push(0);
        cuts.push(data.len());
        cuts.sort_unstable();
        let mut accs: Vec<StatsAccumulator> = cuts
            .windows(2)
            .map(|w| {
                let mut acc = StatsAccumulator::new(dim);
                for v in &data[w[0]..w[1]] {
                    acc.push(v).unwrap();
                }
                acc
            })
            .collect();
        // Merge in a random tree order.
        while accs.len() > 1 {
            let i = r.random_range(0..accs.len());
            let other = accs.swap_remove(i);
            let j = r.random_range(0..accs.len());
            accs[j].merge(&other).unwrap();
        }
        let stats = accs[0].finish().unwrap();
        assert_eq!(stats.n, 10_000);
        for i in 0..dim {
            worst = worst.max((stats.mean[i] - mean[i]).abs());
            for j in 0..dim {
                worst = worst.max((stats.cov[(i, j)] - cov[i][j]).abs());
            }
        }
    }
    Outcome::new(
        worst <= 1e-10,
        format!("100 random splits of 10,000 vectors: max deviation from batch mean/covariance {worst:.2e} (limit 1e-10)"),
    )
}

// ---------------------------------------------------------------------------
// 5. Threshold

fn rejected(scores: &ScoreSet, f_th: f64) -> Vec<String> {
    scores
        .iter()
        .filter(|(id, s)| !stage3_filter(id, *s, f_th).kept)
        .map(|(id, _)| id.to_string())
        .collect()
}

fn threshold_forms() -> Outcome {
    let mut s = ScoreSet::new();
    s.insert("a", 10.0).unwrap();
    s.insert("b", 110.0).unwrap();
    let literal = threshold_value(&s, 0.4, ThresholdForm::LiteralEq1).unwrap();
    let interp = threshold_value(&s, 0.4, ThresholdForm::Interpolation).unwrap();
    let exact = literal == 44.0 && interp == 50.0;

    let betas = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    let mut r = rng(5);
    let mut sets = vec![s];
    for _ in 0..50 {
        let mut set = ScoreSet::new();
        for i in 0..r.random_range(1..40) {
            set.insert(format!("s{i}"), r.random_range(0.0..1000.0)).unwrap();
        }
        sets.push(set);
    }
    let mut monotone = true;
    for set in &sets {
        for form in [ThresholdForm::LiteralEq1, ThresholdForm::Interpolation] {
            let rejections: Vec<Vec<String>> = betas
                .iter()
                .map(|&b| rejected(set, threshold_value(set, b, form).unwrap()))
                .collect();
            monotone &= rejections.windows(2).all(|w| w[0].iter().all(|id| w[1].contains(id)));
        }
    }
    Outcome::new(
        exact && monotone,
        format!(
            "S={{10,110}}, β=0.4: literal {literal}, interpolation {interp}; rejected sets nested over β sweep for {} score sets: {monotone}",
            sets.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Evaluation metric

fn random_image(r: &mut ChaCha8Rng, w: u32, h: u32, c: usize) -> RealImage {
    let levels = r.random_range(2..=256) as f64;
    let planes = (0..c)
        .map(|_| Plane::from_fn(w, h, |_, _| (r.random_range(0.0..1.0f64) * levels).floor() / levels))
        .collect();
    RealImage::new(planes).unwrap()
}

fn oracle_distance(a: &RealImage, b: &RealImage, norm: DistanceNorm) -> f64 {
    let (w, h) = (a.width(), a.height());
    let mut sum = 0.0;
    let mut n = 0usize;
    for ch in 0..a.channels() {
        for y in 0..h {
            for x in 0..w {
                let d = a.planes()[ch].get(x, y) - b.planes()[ch].get(x, y);
                sum += match norm {
                    DistanceNorm::MeanAbs => d.abs(),
                    DistanceNorm::MeanSq => d * d,
                };
                n += 1;
            }
        }
    }
    sum / n as f64
}

fn oracle_total(outputs: &[LabeledImage], refs: &[LabeledImage], norm: DistanceNorm) -> (f64, Vec<String>) {
    let mut total = 0.0;
    let mut best_ids = Vec::new();
    for reference in refs {
        let mut best = f64::INFINITY;
        let mut best_id = String::new();
        for output in outputs {
            let d = oracle_distance(&output.image, &reference.image, norm);
            if d < best {
                best = d;
                best_id = output.id.clone();
            }
        }
        total += best;
        best_ids.push(best_id);
    }
    (total, best_ids)
}

fn labeled(r: &mut ChaCha8Rng, prefix: &str, n: usize, w: u32, h: u32, c: usize) -> Vec<LabeledImage> {
    (0..n).map(|i| LabeledImage::new(format!("{prefix}{i}"), random_image(r, w, h, c))).collect()
}

fn eval_metric() -> Outcome {
    let mut r = rng(6);
    let mut instances = 0;
    let mut exact = true;
    for n_out in 1..=10 {
        for n_ref in 1..=10 {
            for _ in 0..2 {
                let (w, h, c) = (r.random_range(1..=8), r.random_range(1..=8), r.random_range(1..=3));
                let outputs = labeled(&mut r, "o", n_out, w, h, c);
                let refs = labeled(&mut r, "r", n_ref, w, h, c);
                for norm in [DistanceNorm::MeanAbs, DistanceNorm::MeanSq] {
                    let report = eval_set(&outputs, &refs, norm).unwrap();
                    let (total, best) = oracle_total(&outputs, &refs, norm);
                    let ids: Vec<String> = report.per_reference.iter().map(|m| m.best_output_id.clone()).collect();
                    exact &= report.total == total && ids == best;
                    instances += 1;
                }
            }
        }
    }

    let mut identity = true;
    for _ in 0..20 {
        let n = r.random_range(1..=10);
        let images = labeled(&mut r, "x", n, 8, 8, 3);
        for norm in [DistanceNorm::MeanAbs, DistanceNorm::MeanSq] {
            identity &= eval_set(&images, &images, norm).unwrap().total == 0.0;
        }
    }

    let mut superset = true;
    for _ in 0..100 {
        let (w, h, c) = (r.random_range(1..=8), r.random_range(1..=8), r.random_range(1..=3));
        let (n_out, n_ref, n_extra) = (r.random_range(1..=6), r.random_range(1..=10), r.random_range(1..=4));
        let outputs = labeled(&mut r, "o", n_out, w, h, c);
        let refs = labeled(&mut r, "r", n_ref, w, h, c);
        let mut wider = outputs.clone();
        wider.extend(labeled(&mut r, "extra", n_extra, w, h, c));
        wider.shuffle(&mut r);
        let base = eval_set(&outputs, &refs, DistanceNorm::MeanAbs).unwrap().total;
        let more = eval_set(&wider, &refs, DistanceNorm::MeanAbs).unwrap().total;
        superset &= more <= base;
    }
    Outcome::new(
        exact && identity && superset,
        format!("{instances} instances equal the double-loop oracle exactly: {exact}; identity total 0: {identity}; superset monotone on 100 instances: {superset}"),
    )
}

// ---------------------------------------------------------------------------
// 7. Pairing

fn record(id: &str, sensor: Sensor, tile: &str, date: NaiveDate) -> SceneRecord {
    SceneRecord {
        scene_id: id.into(),
        sensor,
        tile_id: tile.into(),
        date,
        path: PathBuf::from(format!("{id}.tif")),
        bands: match sensor {
            Sensor::Eo => vec!["B2".into(), "B3".into(), "B4".into()],
            Sensor::Sar => vec!["VV".into(), "VH".into()],
        },
    }
}

fn pairing_window() -> Outcome {
    let base = NaiveDate::from_ymd_opt(2021, 6, 15).unwrap();
    let mut eo = vec![record("eo_target", Sensor::Eo, "T00", base)];
    let mut sar: Vec<SceneRecord> = [-31i64, -30, 0, 30, 31]
        .iter()
        .map(|&d| record(&format!("sar_{d:+}"), Sensor::Sar, "T00", base + Duration::days(d)))
        .collect();
    let mut r = rng(7);
    for t in 1..6 {
        let tile = format!("T{t:02}");
        for i in 0..8 {
            eo.push(record(&format!("eo_{t}_{i}"), Sensor::Eo, &tile, base + Duration::days(r.random_range(-90..90))));
        }
        for i in 0..15 {
            sar.push(record(&format!("sar_{t}_{i}"), Sensor::Sar, &tile, base + Duration::days(r.random_range(-120..120))));
        }
    }

    let target: Vec<i64> = build_pairs(&eo, &sar, 30, None)
        .unwrap()
        .into_iter()
        .filter(|p| p.eo_scene_id == "eo_target")
        .map(|p| p.day_offset)
        .collect();
    let mut paired = target.clone();
    paired.sort_unstable();
    let offsets_ok = paired == [-30, 0, 30] && target.windows(2).all(|w| w[0].abs() <= w[1].abs());

    let mut outputs = Vec::new();
    for workers in [1, 4] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
        for _ in 0..10 {
            let (mut e, mut s) = (eo.clone(), sar.clone());
            e.shuffle(&mut r);
            s.shuffle(&mut r);
            let pairs = pool.install(|| build_pairs(&e, &s, 30, None)).unwrap();
            let manifest = PairManifest {
                config_fingerprint: "fixed".into(),
                stage_counts: StageCounts::default(),
                pairs,
            };
            outputs.push((serde_json::to_vec_pretty(&manifest).unwrap(), manifest.to_csv()));
        }
    }
    let identical = outputs.windows(2).all(|w| w[0] == w[1]);
    let count = outputs[0].1.lines().count() - 1;
    Outcome::new(
        offsets_ok && identical,
        format!("target EO pairs offsets {target:?} (expect the set −30, 0, +30 ordered by |Δ|); {count} pairs byte-identical over 10 reruns × workers {{1, 4}}: {identical}"),
    )
}

// ---------------------------------------------------------------------------
// 8. Normalization

#[derive(Clone)]
struct Capture(Arc<Mutex<Vec<u8>>>);

impl Write for Capture {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn random_plane(r: &mut ChaCha8Rng) -> Plane {
    let (w, h) = (r.random_range(2..=48), r.random_range(2..=48));
    let kind = r.random_range(0..4);
    let plane = Plane::from_fn(w, h, |_, _| match kind {
        0 => r.random_range(-1.0e3..1.0e3),
        1 => 10f64.powf(r.random_range(-6.0..6.0)),
        2 => (r.random_range(0.0..8.0f64)).floor(),
        _ => {
            let v: f64 = r.random_range(-30.0..5.0);
            if r.random_range(0..50) == 0 {
                v * 1e6
            } else {
                v
            }
        }
    });
    let data = plane.data();
    if data.iter().all(|&v| v == data[0]) {
        Plane::from_fn(w, h, |x, y| (x + y) as f64)
    } else {
        plane
    }
}

fn monotone(input: &[f64], output: &[f64]) -> bool {
    let mut idx: Vec<usize> = (0..input.len()).collect();
    idx.sort_by(|&a, &b| input[a].total_cmp(&input[b]));
    idx.windows(2).all(|w| {
        let (a, b) = (w[0], w[1]);
        if input[a] == input[b] {
            output[a] == output[b]
        } else {
            output[a] <= output[b]
        }
    })
}

fn normalization() -> Outcome {
    let mut r = rng(8);
    let d1 = NormalizationSpec::default();
    let d2 = NormalizationSpec {
        variant: NormVariant::Dataset2Tanh,
        ..NormalizationSpec::default()
    };
    let (mut range1, mut endpoints, mut range2, mut mono) = (true, true, true, true);
    for _ in 0..1000 {
        let plane = random_plane(&mut r);
        let (a, degenerate) = normalize_plane(&plane, &d1).unwrap();
        let a = a.data();
        range1 &= !degenerate && a.iter().all(|v| (-1.0..=1.0).contains(v));
        endpoints &= a.contains(&-1.0) && a.contains(&1.0);
        let (b, _) = normalize_plane(&plane, &d2).unwrap();
        let b = b.data();
        range2 &= b.iter().all(|&v| v > -1.0 && v < 1.0);
        mono &= monotone(plane.data(), a) && monotone(plane.data(), b);
    }

    let buf = Arc::new(Mutex::new(Vec::new()));
    let writer = Capture(buf.clone());
    let subscriber = tracing_subscriber::fmt()
        .with_ansi(false)
        .with_writer(move || writer.clone())
        .finish();
    let constant = RealImage::new(vec![Plane::filled(16, 16, 7.5), Plane::from_fn(16, 16, |x, _| x as f64)]).unwrap();
    let normalized = tracing::subscriber::with_default(subscriber, || normalize(&constant, &d1).unwrap());
    let log = String::from_utf8(buf.lock().unwrap().clone()).unwrap();
    let degenerate_ok = normalized.degenerate_planes == [0]
        && normalized.image.planes()[0].data().iter().all(|&v| v == 0.0)
        && log.contains("WARN")
        && log.contains("constant plane");
    Outcome::new(
        range1 && endpoints && range2 && mono && degenerate_ok,
        format!(
            "1000 planes: dataset1 in [−1,1] {range1}, endpoints attained {endpoints}; dataset2 strictly inside {range2}; monotone {mono}; constant plane → 0 with warning {degenerate_ok}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. Determinism and parallel speedup

fn digest(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))))
}

const DIGESTED: [&str; 10] = [
    "ingest.json",
    "filter.json",
    "score.json",
    "score_report.json",
    "pairs.json",
    "pairs.csv",
    "prep.json",
    "bridge.json",
    "eval.json",
    "bridge/out",
];

fn run_digests(run: &Run) -> Vec<String> {
    DIGESTED
        .iter()
        .map(|name| {
            let path = run.out.join(name);
            if path.is_dir() {
                let mut files: Vec<PathBuf> = std::fs::read_dir(&path).unwrap().map(|e| e.unwrap().path()).collect();
                files.sort();
                let mut h = Sha256::new();
                for f in files {
                    h.update(f.file_name().unwrap().as_encoded_bytes());
                    h.update(digest(&f));
                }
                hex::encode(h.finalize())
            } else {
                digest(&path)
            }
        })
        .collect()
}

fn determinism() -> Outcome {
    let c = corpus();
    let digests: Vec<Vec<String>> = c.runs.values().map(run_digests).collect();
    let identical = digests.windows(2).all(|w| w[0] == w[1]);
    Outcome::new(
        identical,
        format!("{} manifests and outputs identical at workers {WORKER_COUNTS:?}: {identical}", DIGESTED.len()),
    )
}

fn speedup() -> Outcome {
    let c = corpus();
    let stages = [PipelineStage::Filter, PipelineStage::Score];
    let t1 = stage_time(&c.runs[&1].reports, &stages);
    let t4 = stage_time(&c.runs[&4].reports, &stages);
    let ratio = t1 / t4;
    let cores = std::thread::available_parallelism().map_or(1, usize::from);
    let mut outcome = Outcome::new(
        ratio >= 1.8,
        format!("filter+score 1 worker {t1:.2}s, 4 workers {t4:.2}s: speedup {ratio:.2}× (need 1.8×) on a {cores}-core host"),
    );
    if !outcome.pass && cores < 4 {
        outcome.host_limited = true;
        outcome.detail.push_str("; criterion is defined on a 4-core machine");
    }
    outcome
}

// ---------------------------------------------------------------------------
// 10. Bridge contract

fn bridge_contract() -> Outcome {
    let run = &corpus().runs[&1];
    let manifest: BridgeManifest = read_json(&run.out.join("bridge.json"));
    let root = run.out.join("bridge");
    let mut byte_equal = !manifest.items.is_empty();
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for item in &manifest.items {
        let (a, b) = (root.join(&item.input), root.join(&item.output));
        byte_equal &= std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap() && item.input_sha256 == item.output_sha256;
        inputs.push(LabeledImage::new(item.scene_id.clone(), read_real_image(&a).unwrap()));
        outputs.push(LabeledImage::new(item.scene_id.clone(), read_real_image(&b).unwrap()));
    }
    let total = eval_set(&outputs, &inputs, DistanceNorm::MeanAbs).unwrap().total;
    Outcome::new(
        byte_equal && total == 0.0,
        format!("{} identity-bridge outputs byte-equal to inputs: {byte_equal}; eval total against inputs {total}", manifest.items.len()),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 11] = [
        ("1 filter fidelity", filter_fidelity),
        ("2 frechet oracle", frechet_oracle_agreement),
        ("3 matrix sqrt", matrix_sqrt_reconstruction),
        ("4 streaming stats", streaming_stats_merge),
        ("5 threshold", threshold_forms),
        ("6 eval metric", eval_metric),
        ("7 pairing", pairing_window),
        ("8 normalization", normalization),
        ("9 determinism", determinism),
        ("9 speedup", speedup),
        ("10 bridge contract", bridge_contract),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    let mut host_limited = 0;
    for (name, check) in criteria {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        println!("criterion {name}: {} ({})", if outcome.pass { "PASS" } else { "FAIL" }, outcome.detail);
        if !outcome.pass {
            if outcome.host_limited {
                host_limited += 1;
            } else {
                failed += 1;
            }
        }
    }
    println!("acceptance: {failed} failed, {host_limited} failed for lack of hardware");
    std::process::exit(if failed > 0 { 1 } else { 0 });
}
