//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero when a criterion outside `KNOWN_RED` fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use lumen::codec::{binarize, decode, generate_stack, stripe, PatternKind, PatternSpec, DEFAULT_THRESHOLD};
use lumen::eval::{mae, DEFAULT_BINS};
use lumen::losses::{bce_loss, sl_loss, LossConfig};
use lumen::pipeline::{agreement, coverage, noise_study, oracle_disparity};
use lumen::scene::{render_dataset, CameraModel, Pose, Primitive, ProjectorRig, RenderOutput, SceneConfig};
use lumen::scheduler::*;
use lumen::{Grid, MatchConfig, PatternStack};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria that are reported but do not fail the run; see the README.
const KNOWN_RED: &[u32] = &[8];

const SCENE_SEEDS: [u64; 3] = [1, 2, 3];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn plane_sphere_podium(seed: u64) -> SceneConfig {
    SceneConfig {
        primitives: vec![
            Primitive::Podium {
                pose: Pose::at([0.0, 0.05, 0.0]),
                side: None,
                albedo: 0.7,
            },
            Primitive::Sphere {
                pose: Pose::at([0.0, 0.12, 0.0]),
                radius: 0.02,
                albedo: 0.8,
            },
            Primitive::Plane {
                pose: Pose::at([0.0, 0.5, -0.1]),
                albedo: 0.5,
            },
        ],
        views_per_object: 1,
        rng_seed: seed,
        ..Default::default()
    }
}

fn render_scene(seed: u64) -> RenderOutput {
    let mut views = render_dataset(
        &plane_sphere_podium(seed),
        &CameraModel::default(),
        &ProjectorRig::default(),
        &PatternSpec::default(),
    )
    .expect("scene renders");
    views.remove(0).1
}

fn codec_exhaustive() -> Outcome {
    let mut failures = 0;
    for kind in [PatternKind::Binary, PatternKind::Gray] {
        let spec = PatternSpec::new(kind, 8, 256).unwrap();
        let cols = Grid::from_fn(256, 1, |x, _| x as u32);
        let stack = generate_stack(&spec, &cols, &Grid::filled(256, 1, true)).unwrap();
        let codes = decode(&spec, &binarize(&stack, DEFAULT_THRESHOLD)).unwrap();
        failures += (0..256).filter(|&x| codes.code(x, 0) != Some(x as u32)).count();
    }
    outcome(failures == 0, format!("{failures} failures over 2 x 256 columns"))
}

fn oracle_pipeline() -> Outcome {
    let mut worst_mae = 0.0f64;
    let mut worst_cov = 1.0f64;
    for seed in SCENE_SEEDS {
        let out = render_scene(seed);
        let d = oracle_disparity(
            &PatternSpec::default(),
            &out.frame,
            &out.left_stack,
            &out.right_stack,
            0.25,
        )
        .unwrap();
        let m = out.frame.matchable_mask();
        worst_mae = worst_mae.max(mae(&d, &out.frame.gt_disparity, Some(&m)).unwrap());
        worst_cov = worst_cov.min(coverage(&d, &m));
    }
    outcome(
        worst_mae <= 1.0 && worst_cov >= 0.90,
        format!(
            "worst MAE {worst_mae:.6} px, worst validity {:.2}% over seeds {SCENE_SEEDS:?}",
            100.0 * worst_cov
        ),
    )
}

fn matcher_oracle() -> Outcome {
    let ncc = MatchConfig {
        normalized: true,
        ..Default::default()
    };
    let raw = MatchConfig::default();
    let mut worst = 1.0f64;
    let mut raw_worst = 1.0f64;
    for seed in SCENE_SEEDS {
        let out = render_scene(seed);
        let oracle = oracle_disparity(
            &PatternSpec::default(),
            &out.frame,
            &out.left_stack,
            &out.right_stack,
            0.25,
        )
        .unwrap();
        let n = lumen::matcher::compute_disparity(&out.left_stack, &out.right_stack, &ncc).unwrap();
        let r = lumen::matcher::compute_disparity(&out.left_stack, &out.right_stack, &raw).unwrap();
        worst = worst.min(agreement(&n, &oracle, 1.0).unwrap_or(0.0));
        raw_worst = raw_worst.min(agreement(&r, &oracle, 1.0).unwrap_or(0.0));
    }
    outcome(
        worst >= 0.95,
        format!(
            "normalized score: worst agreement {:.2}% (raw product score: {:.2}%)",
            100.0 * worst,
            100.0 * raw_worst
        ),
    )
}

fn loss_analytics() -> Outcome {
    let one = |v: f64| PatternStack::from_vec(1, 1, 1, vec![v]).unwrap();
    let row = |v: &[f64]| PatternStack::from_vec(v.len(), 1, 1, v.to_vec()).unwrap();
    let e1 = (bce_loss(&one(1.0), &one(0.5)).unwrap() - std::f64::consts::LN_2).abs();
    let e2 = (bce_loss(&one(1.0), &one(0.9)).unwrap() + 0.9f64.ln()).abs();
    let target = row(&[0.0, 1.0, 1.0]);
    let pred = row(&[0.6, 0.4, 0.8]);
    let want = -(0.4f64.ln() + 0.4f64.ln() + 0.8f64.ln()) / 3.0 + (1.44 + 0.64 + 0.16) / 3.0 / 80.0;
    let e3 = (sl_loss(&target, &pred, &LossConfig::default()).unwrap() - want).abs();
    let want_flat = std::f64::consts::LN_2 + (2.0 / 3.0) / 80.0;
    let e4 = (sl_loss(&target, &row(&[0.5; 3]), &LossConfig::default()).unwrap() - want_flat).abs();
    let worst = e1.max(e2).max(e3).max(e4);
    outcome(worst < 1e-9, format!("max abs error {worst:.3e}"))
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (l_sl, l_disp) = (rng.random_range(0.01..10.0), rng.random_range(0.01..10.0));
        let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let (g_sl, g_disp) = uncertainty_grad(l_sl, l_disp, a, b, DEFAULT_LAMBDA5);
        let f = |a: f64, b: f64| combine_uncertainty(l_sl, l_disp, a, b, DEFAULT_LAMBDA5);
        let fd_sl = (f(a + h, b) - f(a - h, b)) / (2.0 * h);
        let fd_disp = (f(a, b + h) - f(a, b - h)) / (2.0 * h);
        for (g, fd) in [(g_sl, fd_sl), (g_disp, fd_disp)] {
            worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-12));
        }
    }
    outcome(worst < 1e-5, format!("max relative error {worst:.3e} over 100 states"))
}

fn scheduler_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let mut h = LossHistory::new();
        for _ in 0..rng.random_range(1..10) {
            h.push(rng.random_range(1e-3..100.0), rng.random_range(1e-3..100.0));
        }
        let (a, b) = epoch_ratio_weights(&h, DEFAULT_ZETA1, DEFAULT_ZETA2).unwrap();
        worst = worst.max((a + b - 2.0).abs());
    }
    let presets =
        combine_constant(1.5, 2.0, CG_A).unwrap() == 17.0 && combine_constant(1.5, 2.0, CG_B).unwrap() == 2.75;
    let parsed = "const:10".parse::<SchedulerKind>().ok() == Some(SchedulerKind::Constant { lambda2: 10.0 })
        && "const:0.5".parse::<SchedulerKind>().ok() == Some(SchedulerKind::Constant { lambda2: 0.5 });
    outcome(
        worst <= 1e-12 && presets && parsed,
        format!(
            "max |sum - 2| {worst:.3e} over 1000 histories, presets {}",
            if presets && parsed { "ok" } else { "wrong" }
        ),
    )
}

fn uncertainty_stationarity() -> Outcome {
    let cfg = ToyTaskConfig::random(8, 64, 400, 0.01, SchedulerKind::uncertainty(0.1), 0);
    let curves = toy_two_task_train(&cfg).unwrap();
    let r = curves.records.last().unwrap();
    let rel_sl = (r.eta_sl.exp() - DEFAULT_LAMBDA5 * r.l_sl).abs() / (DEFAULT_LAMBDA5 * r.l_sl);
    let rel_disp = (r.eta_disp.exp() - r.l_disp).abs() / r.l_disp;
    outcome(
        rel_sl <= 0.1 && rel_disp <= 0.1,
        format!(
            "relative gaps {:.3}% (sl) and {:.3}% (disp) after 400 epochs",
            100.0 * rel_sl,
            100.0 * rel_disp
        ),
    )
}

fn noise_correlation() -> Outcome {
    let sigmas = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30];
    let mut worst = f64::INFINITY;
    let mut best = f64::NEG_INFINITY;
    for seed in SCENE_SEEDS {
        let out = render_scene(seed);
        for (i, &sigma) in sigmas.iter().enumerate() {
            let study = noise_study(
                &out.left_stack,
                &out.right_stack,
                &out.frame.gt_disparity,
                sigma,
                &MatchConfig::default(),
                DEFAULT_BINS,
                100 * seed + i as u64,
            )
            .unwrap();
            let rho = study.report.spearman.unwrap_or(f64::NAN);
            worst = worst.min(rho);
            best = best.max(rho);
        }
    }
    outcome(
        worst > 0.2,
        format!("Spearman rho in [{worst:.4}, {best:.4}] over 3 scenes x 6 noise levels"),
    )
}

fn pattern_runs() -> Outcome {
    let spec = PatternSpec::new(PatternKind::Binary, 8, 256).unwrap();
    let mut bad = Vec::new();
    for n in 1..=8 {
        let row: Vec<bool> = (0..256).map(|c| stripe(&spec, n, c).unwrap()).collect();
        let runs = 1 + row.windows(2).filter(|w| w[0] != w[1]).count();
        if runs != 1 << n {
            bad.push((n, runs));
        }
    }
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            "2^n runs for n = 1..8".to_string()
        } else {
            format!("mismatches {bad:?}")
        },
    )
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let scene = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default_scene.json");
    let tmp = tempfile::tempdir().unwrap();
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_lumen"))
            .args(["generate", "--seed", "7", "--scene"])
            .arg(&scene)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        if !status.status.success() {
            return outcome(
                false,
                format!("generate failed: {}", String::from_utf8_lossy(&status.stderr)),
            );
        }
        trees.push(tree(&out));
    }
    let files = trees[0].len();
    outcome(files > 0 && trees[0] == trees[1], format!("{files} files compared"))
}

type Criterion = (u32, &'static str, Option<Duration>, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (
            1,
            "codec exhaustiveness",
            Some(Duration::from_secs(1)),
            codec_exhaustive,
        ),
        (2, "oracle pipeline", Some(Duration::from_secs(30)), oracle_pipeline),
        (
            3,
            "matcher-oracle agreement",
            Some(Duration::from_secs(120)),
            matcher_oracle,
        ),
        (4, "loss analytics", None, loss_analytics),
        (5, "uncertainty gradient check", None, gradient_check),
        (6, "scheduler algebra", None, scheduler_algebra),
        (
            7,
            "uncertainty stationarity",
            Some(Duration::from_secs(5)),
            uncertainty_stationarity,
        ),
        (8, "noise uncertainty correlation", None, noise_correlation),
        (9, "pattern structure", None, pattern_runs),
        (10, "determinism", None, determinism),
    ];
    let mut blocking = Vec::new();
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let mut o = run();
        let took = start.elapsed();
        if let Some(b) = budget {
            if took > b {
                o.pass = false;
                o.detail = format!("{} (over the {:.0?} budget)", o.detail, b);
            }
        }
        let status = match (o.pass, KNOWN_RED.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("criterion {id:>2} {status:<12} {name}: {} [{:.2?}]", o.detail, took);
        if !o.pass && !KNOWN_RED.contains(&id) {
            blocking.push(id);
        }
    }
    if !blocking.is_empty() {
        eprintln!("failing criteria: {blocking:?}");
        std::process::exit(1);
    }
}
