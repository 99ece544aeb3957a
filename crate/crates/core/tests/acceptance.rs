//! Acceptance gate. Each test prints one `PASS`/`FAIL` line for its criterion before
//! asserting, so `cargo test --test acceptance -- --nocapture --test-threads=1` reads as a
//! checklist.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use medcbr::cli::{run_from_args, EvalSummary};
use medcbr::corpus::{
    make_patient_folds, synth_generate, ConceptBank, DatasetManifest, Label, SampleRecord,
};
use medcbr::encoder::{clip_loss, concept_loss, diag_loss, Predictions};
use medcbr::enrichment::{build_lvlm_prompt, EnrichmentRequest, PromptOptions};
use medcbr::guidelines::{Guideline, GuidelineKind, GuidelineRegistry, Modality};
use medcbr::metrics::{
    aggregate_rubric, auroc, blinding_denylist, export_case_bundles, import_rubric_scores,
    scan_for_tokens, BasLevel, CaseMaterial, CigsLevel, RubricScore,
};
use medcbr::reasoning::{
    build_reasoning_prompt, generate_explanation, validate_grounding, FollowUpRule,
    GroundingStatus, StubReasoningClient,
};
use medcbr::training::lr_schedule;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_INSTANCES: usize = 20;
const GRAD_BUDGET_SECS: f64 = 30.0;
const LN2_TOL: f64 = 1e-6;
const AUROC_INSTANCES: usize = 100;
const AUROC_MAX_N: usize = 50;
const AUROC_BUDGET_SECS: f64 = 10.0;
const E2E_MIN_AUROC: f64 = 0.95;
const E2E_MIN_CONCEPT_AUROC: f64 = 0.90;
const E2E_BUDGET_SECS: f64 = 600.0;
const TREND_SEEDS: [u64; 3] = [0, 1, 2];
const SCHEDULE_TOL: f64 = 1e-12;
const RUBRIC_EXPECTED: (f64, f64, f64) = (85.7, 75.0, 80.0);
const SPLIT_PATIENTS: usize = 1000;

fn verdict(name: &str, ok: bool, detail: &str) {
    println!("{} [{name}] {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name}: {detail}");
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Central differences of `f` with respect to every entry of `x`.
fn fd_grad<D: ndarray::Dimension>(
    x: &ndarray::Array<f64, D>,
    f: impl Fn(&ndarray::Array<f64, D>) -> f64,
) -> ndarray::Array<f64, D> {
    let h = 1e-6;
    let mut g = x.clone();
    let mut probe = x.clone();
    for (idx, out) in g.iter_mut().enumerate() {
        let orig = *probe.as_slice_mut().unwrap().get(idx).unwrap();
        probe.as_slice_mut().unwrap()[idx] = orig + h;
        let up = f(&probe);
        probe.as_slice_mut().unwrap()[idx] = orig - h;
        let down = f(&probe);
        probe.as_slice_mut().unwrap()[idx] = orig;
        *out = (up - down) / (2.0 * h);
    }
    g
}

fn rel_err<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.into_iter().zip(b) {
        diff += (x - y).powi(2);
        na += x * x;
        nb += y * y;
    }
    diff.sqrt() / na.sqrt().max(nb.sqrt()).max(1e-8)
}

#[test]
fn gradient_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..GRAD_INSTANCES {
        let b = rng.random_range(2..6);
        let d = rng.random_range(2..6);
        let tau = rng.random_range(0.05..1.0);
        let h_v = random_matrix(&mut rng, b, d);
        let h_t = random_matrix(&mut rng, b, d);
        let c = clip_loss(&h_v, &h_t, tau).unwrap();
        let gv = fd_grad(&h_v, |x| clip_loss(x, &h_t, tau).unwrap().value);
        let gt = fd_grad(&h_t, |x| clip_loss(&h_v, x, tau).unwrap().value);
        let h = 1e-6;
        let g_tau = (clip_loss(&h_v, &h_t, tau + h).unwrap().value
            - clip_loss(&h_v, &h_t, tau - h).unwrap().value)
            / (2.0 * h);
        worst = worst
            .max(rel_err(c.grad_v.iter(), gv.iter()))
            .max(rel_err(c.grad_t.iter(), gt.iter()))
            .max(rel_err([c.grad_tau].iter(), [g_tau].iter()));

        let k = rng.random_range(2..5);
        let logits = random_matrix(&mut rng, b, k);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        let (_, g) = diag_loss(&logits, &labels).unwrap();
        let fd = fd_grad(&logits, |x| diag_loss(x, &labels).unwrap().0);
        worst = worst.max(rel_err(g.iter(), fd.iter()));

        let n_c = rng.random_range(1..5);
        let cl = Array3::from_shape_fn((b, n_c, 2), |_| rng.random_range(-2.0..2.0));
        let targets = Array2::from_shape_fn((b, n_c), |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
        let (_, g) = concept_loss(&cl, &targets).unwrap();
        let fd = fd_grad(&cl, |x| concept_loss(x, &targets).unwrap().0);
        worst = worst.max(rel_err(g.iter(), fd.iter()));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "gradient-suite",
        worst < GRAD_REL_TOL && secs < GRAD_BUDGET_SECS,
        &format!("{GRAD_INSTANCES} instances x 3 losses, worst relative error {worst:.2e} (< {GRAD_REL_TOL:e}), {secs:.2}s (< {GRAD_BUDGET_SECS}s)"),
    );
}

#[test]
fn contrastive_identities() {
    let one = Array2::from_shape_vec((1, 3), vec![0.6, 0.0, 0.8]).unwrap();
    let b1 = clip_loss(&one, &one, 0.07).unwrap().value;
    let same = Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 1.0, 0.0]).unwrap();
    let b2 = clip_loss(&same, &same, 0.07).unwrap().value;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let v = random_matrix(&mut rng, 2, 4);
    let t = random_matrix(&mut rng, 2, 4);
    let base = clip_loss(&v, &t, 0.3).unwrap().value;
    let swap = |m: &Array2<f64>| m.select(ndarray::Axis(0), &[1, 0]);
    let permuted = clip_loss(&swap(&v), &swap(&t), 0.3).unwrap().value;
    let ok = b1 == 0.0 && (b2 - std::f64::consts::LN_2).abs() < LN2_TOL && permuted == base;
    verdict(
        "contrastive-identities",
        ok,
        &format!("B=1 loss {b1}, B=2 identical {b2:.9} vs ln2 (tol {LN2_TOL:e}), permutation {base} == {permuted}"),
    );
}

fn brute_force_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

#[test]
fn auroc_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..AUROC_INSTANCES {
        let n = rng.random_range(2..=AUROC_MAX_N);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        // coarse scores so ties are common
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 8.0).collect();
        if auroc(&scores, &labels).unwrap() != brute_force_auroc(&scores, &labels) {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "auroc-oracle",
        mismatches == 0 && secs < AUROC_BUDGET_SECS,
        &format!("{AUROC_INSTANCES} instances (n <= {AUROC_MAX_N}), {mismatches} mismatches, {secs:.2}s (< {AUROC_BUDGET_SECS}s)"),
    );
}

fn cli(args: &[&str]) {
    let mut full = vec!["medcbr"];
    full.extend_from_slice(args);
    run_from_args(full).unwrap_or_else(|e| panic!("medcbr {}: {e}", args.join(" ")));
}

fn eval_summary(run: &Path, slug: &str) -> EvalSummary {
    let text = fs::read_to_string(run.join("run/eval").join(format!("{slug}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn synthetic_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let config = format!("{out}/run.toml");
    let start = Instant::now();
    cli(&["synth", "--out", out, "--n", "400", "--concepts", "6", "--seed", "0"]);
    cli(&["train", "-c", &config]);
    cli(&["eval", "-c", &config]);
    let secs = start.elapsed().as_secs_f64();
    let summary = eval_summary(dir.path(), "clip_mtl_guideline");
    let held_out = summary.folds.iter().find(|f| f.fold == 0).unwrap();
    let a = held_out.report.auroc;
    let c = held_out.report.mean_concept_auroc.unwrap_or(0.0);
    verdict(
        "synthetic-end-to-end",
        a >= E2E_MIN_AUROC && c >= E2E_MIN_CONCEPT_AUROC && secs < E2E_BUDGET_SECS,
        &format!(
            "held-out fold 0: AUROC {a:.4} (>= {E2E_MIN_AUROC}), mean concept AUROC {c:.4} (>= {E2E_MIN_CONCEPT_AUROC}), {secs:.1}s (< {E2E_BUDGET_SECS}s)"
        ),
    );
}

#[test]
fn ablation_trend() {
    let (mut full, mut cbl) = (Vec::new(), Vec::new());
    for seed in TREND_SEEDS {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let config = format!("{out}/run.toml");
        let s = seed.to_string();
        cli(&["synth", "--out", out, "--n", "400", "--concepts", "6", "--seed", &s]);
        for variant in ["clip_mtl_guideline", "clip_cbl"] {
            cli(&["train", "-c", &config, "--variant", variant, "--fold", "0"]);
        }
        cli(&["eval", "-c", &config]);
        full.push(eval_summary(dir.path(), "clip_mtl_guideline").folds[0].report.auroc);
        cbl.push(eval_summary(dir.path(), "clip_cbl").folds[0].report.auroc);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mf, mc) = (mean(&full), mean(&cbl));
    verdict(
        "ablation-trend",
        mf >= mc,
        &format!("mean AUROC over seeds {TREND_SEEDS:?}: clip_mtl+guideline {mf:.4} >= clip_cbl {mc:.4} (per seed {full:.4?} vs {cbl:.4?})"),
    );
}

fn golden(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    let raw = fs::read_to_string(&path).unwrap();
    // leading `%%` lines are annotations, not prompt text
    let mut rest = raw.as_str();
    while rest.starts_with("%%") {
        rest = rest.split_once('\n').map_or("", |(_, r)| r);
    }
    rest.to_string()
}

fn record(bank: &ConceptBank, on: &[&str], label: Label) -> SampleRecord {
    SampleRecord {
        sample_id: "S1".into(),
        patient_id: "P1".into(),
        image_path: "S1.png".into(),
        concepts: bank.keys().map(|k| on.contains(&k)).collect(),
        label,
        birads: None,
        split_tag: None,
    }
}

fn scores(bank: &ConceptBank, set: &[(&str, f64)]) -> Vec<f64> {
    bank.keys()
        .map(|k| set.iter().find(|(n, _)| *n == k).map_or(0.1, |(_, p)| *p))
        .collect()
}

#[test]
fn prompt_golden_files() {
    let reg = GuidelineRegistry::builtin();
    let mut checks: Vec<(&str, bool)> = Vec::new();

    let us = ConceptBank::builtin("breast_us").unwrap();
    let rec = record(&us, &["spiculated", "hypoechoic", "angular"], Label::Malignant);
    let g = reg.get(GuidelineKind::Reporting, Modality::Ultrasound).unwrap();
    let opts = PromptOptions::for_modality(Modality::Ultrasound);
    let p = build_lvlm_prompt(&EnrichmentRequest::new(&rec, &us, g, &opts).unwrap());
    checks.push(("lvlm_ultrasound", p.text == golden("lvlm_ultrasound.txt")));

    let cub = ConceptBank::builtin("cub").unwrap();
    let rec = record(&cub, &[], Label::Class(3));
    let g = reg.get(GuidelineKind::Reporting, Modality::FieldGuide).unwrap();
    let opts = PromptOptions::for_modality(Modality::FieldGuide);
    let p = build_lvlm_prompt(&EnrichmentRequest::new(&rec, &cub, g, &opts).unwrap());
    checks.push(("lvlm_field_guide_empty", p.text == golden("lvlm_field_guide_empty.txt")));

    let g = reg.get(GuidelineKind::Diagnostic, Modality::Ultrasound).unwrap();
    let pred = Predictions {
        y_hat: 0.83,
        c_hat: scores(
            &us,
            &[("spiculated", 0.91), ("hypoechoic", 0.734), ("regular_shape", 0.2), ("shadowing", 0.5), ("cystic", 0.4999)],
        ),
    };
    let r = build_reasoning_prompt(&pred, &us, g, "busbra").unwrap();
    checks.push(("reasoning_ultrasound", r.rendered == golden("reasoning_ultrasound.txt")));
    checks.push(("spiculated-line", r.concept_lines.contains(&"Spiculated (91.0%)".to_string())));
    checks.push(("irregular-shape-branch", r.concept_lines.contains(&"Irregular shape (20.0%)".to_string())));

    let mg = ConceptBank::builtin("mammography").unwrap();
    let g = reg.get(GuidelineKind::Diagnostic, Modality::Mammography).unwrap();
    let pred = Predictions { y_hat: 0.2, c_hat: vec![0.1; mg.len()] };
    let r = build_reasoning_prompt(&pred, &mg, g, "cbis_ddsm").unwrap();
    checks.push(("reasoning_mammography_empty", r.rendered == golden("reasoning_mammography_empty.txt")));

    let g = reg.get(GuidelineKind::Diagnostic, Modality::FieldGuide).unwrap();
    let pred = Predictions {
        y_hat: 0.3,
        c_hat: scores(&cub, &[("has_bill_shape_cone", 0.875), ("has_bill_shape_dagger", 0.05)]),
    };
    let r = build_reasoning_prompt(&pred, &cub, g, "cub").unwrap();
    checks.push(("reasoning_field_guide", r.rendered == golden("reasoning_field_guide.txt")));

    // crossing 0.5 adds exactly that concept's line, for every concept
    let g = reg.get(GuidelineKind::Diagnostic, Modality::Ultrasound).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut crossing_ok = true;
    for k in 0..us.len() {
        let mut c_hat: Vec<f64> = (0..us.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        c_hat[k] = 0.3;
        let below = build_reasoning_prompt(&Predictions { y_hat: 0.6, c_hat: c_hat.clone() }, &us, g, "other").unwrap();
        c_hat[k] = 0.7;
        let above = build_reasoning_prompt(&Predictions { y_hat: 0.6, c_hat }, &us, g, "other").unwrap();
        let added: Vec<&String> = above.concept_lines.iter().filter(|l| !below.concept_lines.contains(l)).collect();
        let kept = below.concept_lines.iter().all(|l| above.concept_lines.contains(l));
        crossing_ok &= kept
            && above.concept_lines.len() == below.concept_lines.len() + 1
            && added == [&format!("{} (70.0%)", us.entries()[k].display_name)];
    }
    checks.push(("threshold-crossing", crossing_ok));

    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    verdict(
        "prompt-goldens",
        failed.is_empty(),
        &format!("{} checks, failed: {failed:?}", checks.len()),
    );
}

#[test]
fn grounding_validator() {
    let us = ConceptBank::builtin("breast_us").unwrap();
    let guideline = Guideline::new(
        "FIXTURE_DIAGNOSTIC_US",
        GuidelineKind::Diagnostic,
        Modality::Ultrasound,
        "Shadowing behind a mass raises suspicion. Circumscribed margins favour a benign process.",
    )
    .unwrap();
    let pred = Predictions {
        y_hat: 0.9,
        c_hat: scores(&us, &[("spiculated", 0.91), ("hypoechoic", 0.8), ("regular_shape", 0.9), ("angular", 0.7)]),
    };
    let prompt = build_reasoning_prompt(&pred, &us, &guideline, "busbra").unwrap();
    let fixtures: [(&str, &[&str]); 10] = [
        ("Spiculated margins with posterior shadowing; calcifications are also seen. BI-RADS 5.", &["Calcifications"]),
        ("The lesion is hypoechoic and shows a halo.", &["Halo"]),
        ("ANGULAR margins, SKIN THICKENING noted, and enhancement behind the mass.", &["Skin thickening", "Enhancement"]),
        ("Irregular shape and spiculated margin.", &["Irregular shape"]),
        ("Regular shape, circumscribed, but cystic components and heterogeneous echotexture.", &["Cystic", "Heterogeneous"]),
        ("Microlobulated contour with indistinct borders.", &["Microlobulated", "Indistinct"]),
        ("Hyperechoic rim around a hypoechoic core.", &["Hyperechoic"]),
        ("Spiculated, angular and hypoechoic; no shadowing. Calcifications absent? Halo present.", &["Calcifications", "Halo"]),
        ("Skin   thickening\nand enhancement were described.", &["Skin thickening", "Enhancement"]),
        ("Angular margins with microlobulated and indistinct segments plus cystic change.", &["Microlobulated", "Indistinct", "Cystic"]),
    ];
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (text, planted) in fixtures {
        let flagged: BTreeSet<String> = validate_grounding(text, &prompt)
            .into_iter()
            .filter(|g| g.status == GroundingStatus::Ungrounded)
            .map(|g| g.term)
            .collect();
        let planted: BTreeSet<String> = planted.iter().map(|s| s.to_string()).collect();
        tp += flagged.intersection(&planted).count();
        fp += flagged.difference(&planted).count();
        fn_ += planted.difference(&flagged).count();
    }
    let precision = tp as f64 / (tp + fp).max(1) as f64;
    let recall = tp as f64 / (tp + fn_).max(1) as f64;
    verdict(
        "grounding-validator",
        precision == 1.0 && recall == 1.0 && tp > 0,
        &format!("10 explanations, {tp} planted terms found, precision {precision:.3}, recall {recall:.3}"),
    );
}

fn review_materials(dir: &Path) -> Vec<CaseMaterial> {
    let bank = ConceptBank::synthetic(6);
    let corpus = synth_generate(60, &bank, 4, &dir.join("corpus")).unwrap();
    let guideline = GuidelineRegistry::builtin()
        .get(GuidelineKind::Diagnostic, Modality::Ultrasound)
        .unwrap()
        .clone();
    let client = StubReasoningClient::new();
    corpus
        .manifest
        .records
        .iter()
        .map(|r| {
            let pred = Predictions {
                y_hat: if r.label == Label::Malignant { 0.8 } else { 0.2 },
                c_hat: r.concepts.iter().map(|&c| if c { 0.9 } else { 0.1 }).collect(),
            };
            let prompt = build_reasoning_prompt(&pred, &bank, &guideline, "synthetic").unwrap();
            let e = generate_explanation(&client, &prompt, &FollowUpRule::default()).unwrap();
            CaseMaterial {
                sample_id: r.sample_id.clone(),
                patient_id: r.patient_id.clone(),
                image_path: r.image_path.clone(),
                prompt_text: prompt.rendered,
                explanation_text: e.raw_text,
                y_true: r.label == Label::Malignant,
            }
        })
        .collect()
}

fn tree_bytes(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn rubric_machinery() {
    let dir = tempfile::tempdir().unwrap();
    let mut checks: Vec<(String, bool)> = Vec::new();

    for (field, row) in [("cigs", "c1,r1,6/7,0.5,1"), ("bas", "c1,r1,6/7,0.75,0.5")] {
        let p = dir.path().join(format!("bad_{field}.csv"));
        fs::write(&p, format!("case_id,reviewer_id,cints,cigs,bas\n{row}\n")).unwrap();
        let err = import_rubric_scores(&p).err().map(|e| e.to_string()).unwrap_or_default();
        checks.push((format!("reject {field}=0.5"), err.contains(&format!("field `{field}`"))));
    }

    let worked = aggregate_rubric(&[RubricScore {
        case_id: "c1".into(),
        reviewer_id: "r1".into(),
        cints: 6.0 / 7.0,
        cigs: CigsLevel::MostlyCorrect,
        bas: BasLevel::CorrectImplication,
    }])
    .unwrap();
    let round1 = |v: f64| (v * 10.0).round() / 10.0;
    let got = (round1(worked.mean_cints), round1(worked.mean_cigs), round1(worked.mean_bas));
    checks.push((format!("aggregate {got:?}"), got == RUBRIC_EXPECTED));

    let materials = review_materials(dir.path());
    let a = export_case_bundles(&materials, 20, 7, &dir.path().join("a")).unwrap();
    let b = export_case_bundles(&materials, 20, 7, &dir.path().join("b")).unwrap();
    let hits = scan_for_tokens(&a.bundle_dir, &blinding_denylist(&materials)).unwrap();
    checks.push((format!("blinding scan {} hits", hits.len()), hits.is_empty()));
    let same = tree_bytes(&dir.path().join("a")) == tree_bytes(&dir.path().join("b"));
    checks.push(("seeded selection n=20 reproducible".into(), same && a.case_ids == b.case_ids && a.case_ids.len() == 20));

    let failed: Vec<&String> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| n).collect();
    let names: Vec<&String> = checks.iter().map(|(n, _)| n).collect();
    verdict(
        "rubric-machinery",
        failed.is_empty(),
        &format!("checks {names:?}, failed {failed:?}"),
    );
}

fn random_manifest(patients: usize, records: Option<usize>, seed: u64) -> DatasetManifest {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_patient = vec![1usize; patients];
    match records {
        Some(total) => {
            for _ in patients..total {
                let p = rng.random_range(0..patients);
                per_patient[p] += 1;
            }
        }
        None => per_patient.iter_mut().for_each(|n| *n = rng.random_range(1..=4)),
    }
    let mut recs = Vec::new();
    for (p, &n) in per_patient.iter().enumerate() {
        for _ in 0..n {
            recs.push(SampleRecord {
                sample_id: format!("S{:06}", recs.len()),
                patient_id: format!("P{p:05}"),
                image_path: PathBuf::from("unused.png"),
                concepts: vec![false; 4],
                label: if rng.random_bool(0.4) { Label::Malignant } else { Label::Benign },
                birads: None,
                split_tag: None,
            });
        }
    }
    // interleave patients so folds cannot lean on record order
    let mut order: Vec<usize> = (0..recs.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    DatasetManifest {
        corpus_name: "random".into(),
        bank_id: "t".into(),
        records: order.into_iter().map(|i| recs[i].clone()).collect(),
    }
}

fn split_violations(m: &DatasetManifest, k: usize) -> (usize, usize) {
    let plan = make_patient_folds(m, k, 17).unwrap();
    let mut test_folds: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    let mut violations = 0;
    for fold in 0..k {
        let s = plan.split(m, fold).unwrap();
        let test: BTreeSet<&str> = s.test.iter().map(|&i| m.records[i].patient_id.as_str()).collect();
        let train: BTreeSet<&str> = s.train.iter().map(|&i| m.records[i].patient_id.as_str()).collect();
        violations += test.intersection(&train).count();
        if s.train.len() + s.test.len() != m.len() {
            violations += 1;
        }
        for p in test {
            test_folds.entry(p).or_default().insert(fold);
        }
    }
    violations += test_folds.values().filter(|f| f.len() != 1).count();
    (violations, test_folds.len())
}

#[test]
fn split_integrity() {
    let random = random_manifest(SPLIT_PATIENTS, None, 1);
    let (v1, p1) = split_violations(&random, 5);
    // shape of the public breast-ultrasound corpus
    let bus = random_manifest(1064, Some(1875), 2);
    let (v2, p2) = split_violations(&bus, 5);
    verdict(
        "split-integrity",
        v1 == 0 && p1 == SPLIT_PATIENTS && v2 == 0 && p2 == 1064,
        &format!(
            "{p1} patients / {} records: {v1} violations; {p2} patients / {} records: {v2} violations",
            random.len(),
            bus.len()
        ),
    );
}

#[test]
fn schedule_identities() {
    let (total, warmup, lr0) = (1500, 100, 1e-5);
    let start = lr_schedule(0, total, warmup, lr0);
    let peak = lr_schedule(warmup, total, warmup, lr0);
    let end = lr_schedule(total, total, warmup, lr0);
    verdict(
        "schedule-identities",
        start == 0.0 && peak == lr0 && end.abs() < SCHEDULE_TOL,
        &format!("lr(0) = {start}, lr(warmup) = {peak:e}, lr(total) = {end:e} (tol {SCHEDULE_TOL:e})"),
    );
}
