//! Acceptance criteria 1-7. Runs as a plain binary so each criterion prints
//! exactly one PASS/FAIL line under `cargo test`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use chrono::DateTime;
use image::{Rgb, RgbImage};
use rand::Rng;

use metamorph::color::desaturate;
use metamorph::dataset::load_dataset;
use metamorph::dataset::synthetic::{generate, SyntheticConfig};
use metamorph::likert::{aggregate_scores, merge_score, sample_session, LikertScore, SessionImage, StdKind};
use metamorph::metrics::{grey_tint_score, inception_score, kl_divergence, ProbabilityVector, ScoreSet};
use metamorph::mrengine::{AnomalyKind, Outcome, BASELINE};
use metamorph::mutate::{apply_test_case, preset, MutationManifest, Preset};
use metamorph::numeric::MeanStd;
use metamorph::pipeline::{replay_table1, run_pipeline, RunConfig};
use metamorph::report::{format_cell, render_report, Format};
use metamorph::seed;

type Check = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn random_pv<R: Rng>(rng: &mut R, k: usize, allow_zero: bool) -> Vec<f64> {
    let mut w: Vec<f64> = (0..k).map(|_| rng.gen_range(1e-3..1.0)).collect();
    if allow_zero && k > 2 && rng.gen_bool(0.3) {
        w[rng.gen_range(0..k)] = 0.0;
    }
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

fn pv(v: Vec<f64>) -> ProbabilityVector {
    ProbabilityVector::new(v).expect("normalized")
}

/// Straight loop with the `0 ln 0 = 0` convention; no compensation.
fn kl_oracle(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..p.len() {
        if p[i] > 0.0 {
            total += p[i] * (p[i] / q[i]).ln();
        }
    }
    total
}

fn c1_kl() -> Check {
    let mut rng = seed::rng(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let k = rng.gen_range(2..=10);
        let p = random_pv(&mut rng, k, true);
        let q = random_pv(&mut rng, k, false);
        let got = kl_divergence(&pv(p.clone()), &pv(q.clone())).map_err(|e| e.to_string())?;
        worst = worst.max((got - kl_oracle(&p, &q)).abs());
    }
    ensure!(worst <= 1e-12, "max deviation from oracle {worst:e}");
    let mut zeros = 0;
    for _ in 0..100 {
        let k = rng.gen_range(2..=10);
        let p = pv(random_pv(&mut rng, k, true));
        if kl_divergence(&p, &p).map_err(|e| e.to_string())? == 0.0 {
            zeros += 1;
        }
    }
    ensure!(zeros == 100, "KL(p,p) = 0 in {zeros}/100");
    Ok(format!("max |KL - oracle| = {worst:.1e} over 1000 pairs; KL(p,p) = 0 in 100/100"))
}

fn score_set(rows: Vec<Vec<f64>>) -> ScoreSet {
    ScoreSet::new(rows.into_iter().enumerate().map(|(i, r)| (format!("x{i}"), pv(r))).collect()).expect("rows")
}

fn c2_is() -> Check {
    let same = inception_score(&score_set(vec![vec![0.2, 0.3, 0.5]; 100]), 10).map_err(|e| e.to_string())?;
    ensure!((same.mean - 1.0).abs() <= 1e-9, "identical rows gave {}", same.mean);
    let onehot: Vec<Vec<f64>> = (0..100)
        .map(|i| {
            let mut r = vec![0.0; 4];
            r[i % 4] = 1.0;
            r
        })
        .collect();
    let four = inception_score(&score_set(onehot), 1).map_err(|e| e.to_string())?;
    ensure!((four.mean - 4.0).abs() <= 1e-9, "balanced one-hot gave {}", four.mean);

    let mut rng = seed::rng(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let k = rng.gen_range(2..=10);
        let n = rng.gen_range(10..=60);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| random_pv(&mut rng, k, false)).collect();
        let mut perm: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let permuted: Vec<Vec<f64>> = rows.iter().map(|r| perm.iter().map(|&j| r[j]).collect()).collect();
        let splits = rng.gen_range(1..=5);
        let a = inception_score(&score_set(rows), splits).map_err(|e| e.to_string())?;
        let b = inception_score(&score_set(permuted), splits).map_err(|e| e.to_string())?;
        worst = worst.max((a.mean - b.mean).abs()).max((a.std - b.std).abs());
    }
    ensure!(worst <= 1e-12, "permutation changed IS by {worst:e}");
    Ok(format!(
        "identical rows {:.12}, balanced one-hot {:.12}, permutation deviation {worst:.1e}",
        same.mean, four.mean
    ))
}

fn c3_replay() -> Check {
    let r = replay_table1();
    let v = |id: &str| r.verdict(id).ok_or(format!("no verdict for {id}"));
    ensure!(v("MR01")?.outcome == Outcome::Violated, "MR01 is {}", v("MR01")?.outcome);
    ensure!(v("MR03")?.group("birds") == Some(Outcome::Satisfied), "MR03 birds not satisfied");
    ensure!(v("MR03")?.group("trees") == Some(Outcome::Satisfied), "MR03 trees not satisfied");
    ensure!(v("MR05")?.group("is") == Some(Outcome::Satisfied), "MR05 IS clause not satisfied");
    ensure!(v("MR02")?.group("is-similarity") == Some(Outcome::Violated), "MR02 IS similarity did not fail");

    let records = r.records();
    let drop = |tc: &str| {
        let base = records[BASELINE].is_result.mean;
        (base - records[tc].is_result.mean) / base
    };
    let (d1, d2) = (drop("TC01"), drop("TC02"));
    ensure!(
        format!("{d1:.3}") == "0.159" && format!("{d2:.3}") == "0.077",
        "drops {d1:.3} vs {d2:.3}"
    );

    let kinds: Vec<(AnomalyKind, Vec<String>)> = r.anomalies.iter().map(|a| (a.kind, a.test_cases.clone())).collect();
    ensure!(kinds.len() == 2, "expected two anomaly flags, got {}: {:?}", kinds.len(), kinds);
    ensure!(
        kinds[0] == (AnomalyKind::ProportionInversion, vec!["TC06".to_string(), "TC03".to_string()]),
        "first flag {:?}",
        kinds[0]
    );
    let small = &r.anomalies[1];
    ensure!(
        small.kind == AnomalyKind::SmallProportionEffect
            && small.test_cases[..2] == ["TC04", "TC02"]
            && small.message.contains("0.12")
            && small.message.contains("0.49"),
        "second flag {}",
        small.message
    );

    let mut normalized = r.clone();
    normalized.environment.tool_version = "metamorph".into();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/replay_table1.json");
    let expected = fs::read_to_string(&golden).map_err(|e| format!("{}: {e}", golden.display()))?;
    ensure!(render_report(&normalized, Format::Json) == expected, "golden file mismatch");
    Ok(format!(
        "MR01 Violated, MR03 birds/trees Satisfied, MR05 IS Satisfied, MR02 similarity failed (drops {d1:.3} vs {d2:.3}); 2 anomaly flags; golden file equal"
    ))
}

fn mutate(ds_root: &Path, which: Preset, out: &Path) -> Result<MutationManifest, String> {
    let ds = load_dataset(ds_root).map_err(|e| e.to_string())?;
    apply_test_case(&ds, &preset(which), out).map_err(|e| e.to_string())
}

fn c4_mutation() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let src = tmp.path().join("src");
    generate(&src, &SyntheticConfig { n_images: 100, ..Default::default() }).map_err(|e| e.to_string())?;
    let ds = load_dataset(&src).map_err(|e| e.to_string())?;

    let out = tmp.path().join("tc01");
    let m = mutate(&src, Preset::TC01, &out)?;
    ensure!(m.selected.len() == 100, "selected {}", m.selected.len());
    ensure!(m.placements.len() == 100, "placed {} ({} skipped)", m.placements.len(), m.skips.len());
    let mutated = load_dataset(&out).map_err(|e| e.to_string())?;
    for p in &m.placements {
        let rec = ds.get(p.image_id).ok_or("unknown id")?;
        let b = p.placement.inserted_bbox;
        ensure!(p.placement.achieved_iou <= 0.05, "IoU {} on {:?}", p.placement.achieved_iou, p.image_id);
        ensure!(b.iou(&rec.focal_bbox) <= 0.05, "recomputed IoU above budget on {:?}", p.image_id);
        ensure!(b.area() < rec.focal_bbox.area(), "inserted area not below focal area on {:?}", p.image_id);
        let before = ds.load_rgba(p.image_id).map_err(|e| e.to_string())?;
        let after = mutated.load_rgba(p.image_id).map_err(|e| e.to_string())?;
        for (x, y, px) in after.enumerate_pixels() {
            let (fx, fy) = (f64::from(x), f64::from(y));
            let inside = fx >= b.x && fx < b.x + b.w && fy >= b.y && fy < b.y + b.h;
            ensure!(inside || px == before.get_pixel(x, y), "pixel ({x},{y}) of {:?} changed outside box", p.image_id);
        }
    }

    let m8 = mutate(&src, Preset::TC08, &tmp.path().join("tc08"))?;
    ensure!(!m8.placements.is_empty(), "TC08 placed nothing");
    ensure!(m8.placements.iter().all(|p| p.placement.achieved_iou == 0.0), "TC08 IoU above 0");

    let geometry = |m: &MutationManifest| -> Vec<_> {
        m.placements
            .iter()
            .map(|p| (p.image_id, p.placement.inserted_bbox, p.placement.scale_factor.to_bits()))
            .collect()
    };
    let g5 = geometry(&mutate(&src, Preset::TC05, &tmp.path().join("tc05"))?);
    let g6 = geometry(&mutate(&src, Preset::TC06, &tmp.path().join("tc06"))?);
    let g7 = geometry(&mutate(&src, Preset::TC07, &tmp.path().join("tc07"))?);
    ensure!(g5 == g6 && g6 == g7, "TC05/06/07 geometry differs");

    let again = tmp.path().join("tc01-again");
    mutate(&src, Preset::TC01, &again)?;
    ensure!(same_tree(&out, &again)?, "second TC01 run differs");
    Ok(format!(
        "TC01 100/100 placed within IoU 0.05, pixels untouched outside boxes; TC08 {} placements at IoU 0; TC05-07 geometry equal; replay bit-identical",
        m8.placements.len()
    ))
}

fn files(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).map_err(|e| e.to_string())? {
            let p = e.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, fs::read(&p).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(out)
}

fn same_tree(a: &Path, b: &Path) -> Result<bool, String> {
    Ok(files(a)? == files(b)?)
}

fn c5_tint() -> Check {
    let grey = RgbImage::from_fn(16, 16, |x, y| {
        let v = ((x * 16 + y) % 256) as u8;
        Rgb([v, v, v])
    });
    let g = grey_tint_score(&grey).map_err(|e| e.to_string())?;
    ensure!(g == 1.0, "grey image scored {g}");
    for primary in [[255, 0, 0], [0, 255, 0], [0, 0, 255]] {
        let s = grey_tint_score(&RgbImage::from_pixel(8, 8, Rgb(primary))).map_err(|e| e.to_string())?;
        ensure!(s == 0.0, "primary {primary:?} scored {s}");
    }
    let mut rng = seed::rng(5);
    for i in 0..50 {
        let img = RgbImage::from_fn(24, 24, |_, _| Rgb([rng.gen(), rng.gen(), rng.gen()]));
        let before = grey_tint_score(&img).map_err(|e| e.to_string())?;
        let after = grey_tint_score(&desaturate(&img, 0.5)).map_err(|e| e.to_string())?;
        ensure!(after > before, "image {i}: {before} -> {after}");
    }
    Ok("grey = 1.0, primaries = 0.0, 50/50 half-desaturated images scored strictly higher".into())
}

fn c6_end_to_end() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    generate(&data, &SyntheticConfig { n_images: 50, ..Default::default() }).map_err(|e| e.to_string())?;
    let cfg = |out: &str| -> Result<RunConfig, String> {
        serde_json::from_value(serde_json::json!({
            "dataset_root": data,
            "output_root": tmp.path().join(out),
            "test_cases": ["TC01"],
            "model": {"mock": {"k_desat": 0.5}},
            "classifier": "builtin",
            "seed": 2021
        }))
        .map_err(|e| e.to_string())
    };
    let start = Instant::now();
    let report = run_pipeline(&cfg("a")?).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let base = report.baseline.record.as_ref().ok_or("baseline inconclusive")?;
    let tc01 = report.entry("TC01").and_then(|e| e.record.as_ref()).ok_or("TC01 inconclusive")?;
    ensure!(
        tc01.is_result.mean < base.is_result.mean,
        "TC01 IS {} not below baseline {}",
        tc01.is_result.mean,
        base.is_result.mean
    );
    ensure!(tc01.tint > base.tint + 0.10, "TC01 tint {} vs baseline {}", tc01.tint, base.tint);
    let mr01 = report.verdict("MR01").ok_or("no MR01")?;
    ensure!(mr01.outcome == Outcome::Violated, "MR01 {}", mr01.outcome);
    ensure!(elapsed < Duration::from_secs(60), "run took {elapsed:?}");
    run_pipeline(&cfg("b")?).map_err(|e| e.to_string())?;
    ensure!(same_tree(&tmp.path().join("a"), &tmp.path().join("b"))?, "second run differs");
    Ok(format!(
        "IS {:.3} -> {:.3}, tint {:.3} -> {:.3}, MR01 Violated, {:.1} s, replay byte-identical",
        base.is_result.mean,
        tc01.is_result.mean,
        base.tint,
        tc01.tint,
        elapsed.as_secs_f64()
    ))
}

fn c7_likert() -> Check {
    let images: Vec<SessionImage> = (0..5)
        .map(|i| SessionImage { id: format!("g{i}"), path: format!("g{i}.png").into() })
        .collect();
    let session = sample_session("s", "TC01", &images, &["semantic".to_string()], 5, 1).map_err(|e| e.to_string())?;
    let mut scores = BTreeMap::new();
    for (i, value) in (1..=5).enumerate() {
        merge_score(
            &mut scores,
            LikertScore {
                session_id: "s".into(),
                rater: "r".into(),
                image: format!("g{i}"),
                scale: "semantic".into(),
                value,
                timestamp: DateTime::from_timestamp(0, 0).unwrap(),
            },
        );
    }
    let agg = aggregate_scores(&session, scores.values(), StdKind::Sample);
    let cell = format_cell(agg.scale("semantic"));
    ensure!(cell == "3.00(158)", "{{1..5}} rendered {cell}");
    let fixtures = [
        (Some(MeanStd { mean: 4.16, std: 0.03 }), "4.16(3)"),
        (Some(MeanStd { mean: 2.59, std: 1.11 }), "2.59(111)"),
        (None, "-"),
    ];
    for (v, want) in fixtures {
        let got = format_cell(v);
        ensure!(got == want, "{v:?} rendered {got}, want {want}");
    }
    Ok("{1..5} -> 3.00(158); 4.16(3), 2.59(111), - rendered".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("1 KL oracle", Duration::from_secs(5), c1_kl),
        ("2 IS closed forms", Duration::from_secs(5), c2_is),
        ("3 published-results verdict replay", Duration::from_secs(1), c3_replay),
        ("4 mutation invariants", Duration::from_secs(30), c4_mutation),
        ("5 grey-tint metric", Duration::from_secs(5), c5_tint),
        ("6 end-to-end mock study", Duration::from_secs(60), c6_end_to_end),
        ("7 Likert aggregation", Duration::from_secs(5), c7_likert),
    ];
    let mut failures = 0;
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let result = match result {
            Ok(_) if elapsed > limit => Err(format!("took {:.2} s, limit {} s", elapsed.as_secs_f64(), limit.as_secs())),
            other => other,
        };
        match result {
            Ok(detail) => println!("acceptance {name}: PASS ({:.2} s) {detail}", elapsed.as_secs_f64()),
            Err(why) => {
                failures += 1;
                println!("acceptance {name}: FAIL ({:.2} s) {why}", elapsed.as_secs_f64());
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
