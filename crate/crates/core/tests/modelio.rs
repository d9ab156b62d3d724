use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use metamorph::dataset::synthetic::{generate, SyntheticConfig};
use metamorph::metrics::mean_grey_tint;
use metamorph::modelio::{load_generated, mock_generate, run_model, MockConfig, ModelCommand, ModelError};
use metamorph::mutate::{apply_test_case, preset, MutationManifest, Preset, TestCaseSpec, DEFAULT_SEED};
use sha2::{Digest, Sha256};

fn mutated(dir: &Path, spec: &TestCaseSpec) -> (PathBuf, MutationManifest) {
    let ds = generate(&dir.join("src"), &SyntheticConfig { n_images: 20, ..Default::default() }).unwrap();
    let out = dir.join(&spec.name);
    let m = apply_test_case(&ds, spec, &out).unwrap();
    (out, m)
}

fn tree_digest(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = fs::read(&p).unwrap();
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), Sha256::digest(&bytes).to_vec());
            }
        }
    }
    out
}

fn cmd(template: &str, secs: u64) -> ModelCommand {
    ModelCommand::new(template, Duration::from_secs(secs), None).unwrap()
}

#[test]
fn command_that_writes_nothing_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (input, _) = mutated(tmp.path(), &TestCaseSpec::identity("baseline", DEFAULT_SEED));
    let err = run_model(&cmd("true {input_dir} {output_dir}", 30), &input, &tmp.path().join("gen")).unwrap_err();
    assert!(matches!(err, ModelError::NoOutputImages(_)), "{err}");
}

#[test]
fn copying_model_yields_its_images_and_leaves_input_alone() {
    let tmp = tempfile::tempdir().unwrap();
    let (input, _) = mutated(tmp.path(), &preset(Preset::TC01));
    let before = tree_digest(&input);
    let script = "for f in $(ls {input_dir}/images/*/*.png | head -n 5); do cp \"$f\" {output_dir}/; done; \
                  test -f \"$METAMORPH_MANIFEST\"";
    let res = run_model(&cmd(script, 30), &input, &tmp.path().join("gen")).unwrap();
    assert_eq!(res.images.len(), 5);
    assert_eq!(load_generated(&res.images).unwrap().len(), 5);
    assert_eq!(tree_digest(&input), before);
}

#[test]
fn nonzero_exit_reports_code_and_log() {
    let tmp = tempfile::tempdir().unwrap();
    let (input, _) = mutated(tmp.path(), &TestCaseSpec::identity("baseline", DEFAULT_SEED));
    let err = run_model(&cmd("echo boom >&2; exit 3 # {input_dir} {output_dir}", 30), &input, &tmp.path().join("g"))
        .unwrap_err();
    match err {
        ModelError::NonZeroExit { code, log_tail } => {
            assert_eq!(code, 3);
            assert!(log_tail.contains("boom"));
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn slow_model_times_out() {
    let tmp = tempfile::tempdir().unwrap();
    let (input, _) = mutated(tmp.path(), &TestCaseSpec::identity("baseline", DEFAULT_SEED));
    let start = Instant::now();
    let err = run_model(&cmd("sleep 30; : {input_dir} {output_dir}", 1), &input, &tmp.path().join("g")).unwrap_err();
    assert!(matches!(err, ModelError::Timeout(_)), "{err}");
    assert!(start.elapsed() < Duration::from_secs(10));
}

#[test]
fn undecodable_output_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let (input, _) = mutated(tmp.path(), &TestCaseSpec::identity("baseline", DEFAULT_SEED));
    let err = run_model(&cmd("echo nope > {output_dir}/x.png # {input_dir}", 30), &input, &tmp.path().join("g"))
        .unwrap_err();
    assert!(matches!(err, ModelError::BadOutputImage { .. }), "{err}");
}

#[test]
fn missing_manifest_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let err = run_model(&cmd(": {input_dir} {output_dir}", 30), tmp.path(), &tmp.path().join("g")).unwrap_err();
    assert!(matches!(err, ModelError::MissingManifest(_)));
}

fn mock_tint(manifest: &MutationManifest, cfg: &MockConfig, out: &Path) -> f64 {
    let imgs = load_generated(&mock_generate(manifest, cfg, out).unwrap()).unwrap();
    mean_grey_tint(imgs.iter().map(|(_, i)| i)).unwrap()
}

#[test]
fn mock_tint_follows_occluded_fraction() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = MockConfig::default();
    let (_, base) = mutated(tmp.path(), &TestCaseSpec::identity("baseline", DEFAULT_SEED));
    let (_, tc01) = mutated(tmp.path(), &preset(Preset::TC01));
    let (_, tc03) = mutated(tmp.path(), &preset(Preset::TC03));
    let t_base = mock_tint(&base, &cfg, &tmp.path().join("g0"));
    let t03 = mock_tint(&tc03, &cfg, &tmp.path().join("g3"));
    let t01 = mock_tint(&tc01, &cfg, &tmp.path().join("g1"));
    assert!(t_base < t03 && t03 < t01, "{t_base} {t03} {t01}");
    assert!(t01 > t_base + 0.10);

    // No placements: identical to the baseline output.
    let mut empty = tc01.clone();
    empty.placements.clear();
    assert_eq!(mock_tint(&empty, &cfg, &tmp.path().join("ge")), t_base);
}

#[test]
fn mock_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, m) = mutated(tmp.path(), &preset(Preset::TC01));
    let cfg = MockConfig { seed: 5, ..Default::default() };
    mock_generate(&m, &cfg, &tmp.path().join("a")).unwrap();
    mock_generate(&m, &cfg, &tmp.path().join("b")).unwrap();
    assert_eq!(tree_digest(&tmp.path().join("a")), tree_digest(&tmp.path().join("b")));
}
