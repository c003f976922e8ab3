use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use lumen::codec::{stripe, PatternKind, PatternSpec};
use lumen::eval::{depth_mae_mm, iqr_abs_error, mae, seg_mae, DEFAULT_BINS};
use lumen::io::{self, DatasetFrame, DatasetManifest, HeatmapStyle, RgbImage};
use lumen::pipeline;
use lumen::scene::{render_dataset, SceneDocument};
use lumen::scheduler::{toy_two_task_train, SchedulerKind, ToyTaskConfig};
use lumen::{DisparityMap, Error, Grid, MatchConfig};

#[derive(Parser)]
#[command(
    name = "lumen",
    version,
    about = "Structured-light stereo simulation, decoding, matching and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene description into a dataset directory.
    Generate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the scene file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the raw projector stripe images.
    Patterns {
        #[arg(long, default_value = "binary")]
        kind: PatternKind,
        #[arg(long, default_value_t = 8)]
        t: usize,
        #[arg(long, default_value_t = 256)]
        width: usize,
        /// Image height (defaults to the width).
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Binarize and decode both pattern stacks of a frame.
    Decode {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-correlation disparity of a frame.
    Match {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long, default_value_t = 17)]
        patch: usize,
        #[arg(long, default_value_t = 0.25)]
        max_disp_frac: f64,
        /// Normalized cross-correlation instead of the raw product sum.
        #[arg(long)]
        ncc: bool,
        /// Parabolic sub-pixel refinement.
        #[arg(long)]
        subpixel: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact code-match disparity of a frame.
    Codematch {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long, default_value_t = 0.25)]
        max_disp_frac: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a predicted disparity map with ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Segmentation mask PNG for the object-only MAE.
        #[arg(long)]
        seg: Option<PathBuf>,
        /// Mask PNG restricting every metric.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Focal length (px) and baseline (m) for depth error, as `f,b`.
        #[arg(long, value_parser = parse_pair)]
        depth: Option<(f64, f64)>,
    },
    /// Inject noise into a frame's stacks, match, and relate uncertainty to error.
    Uncert {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        #[arg(long)]
        ncc: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the toy two-task model under a loss-weighting scheduler.
    MtlSim {
        /// const:<gain> | epr | unc
        #[arg(long)]
        scheduler: SchedulerKind,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected f,b")?;
    let f = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let b = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((f, b))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // library errors already embed their source in the message
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Ok(n) = std::env::var("LUMEN_THREADS") {
        let n: usize = n.parse().context("LUMEN_THREADS must be a positive integer")?;
        if n == 0 {
            bail!("LUMEN_THREADS must be a positive integer");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Generate { scene, out, seed } => generate(&scene, &out, seed),
        Command::Patterns {
            kind,
            t,
            width,
            height,
            out,
        } => patterns(PatternSpec::new(kind, t, width)?, height.unwrap_or(width), &out),
        Command::Decode { dataset, frame, out } => decode(&dataset, frame, &out),
        Command::Match {
            dataset,
            frame,
            patch,
            max_disp_frac,
            ncc,
            subpixel,
            out,
        } => {
            let cfg = MatchConfig {
                patch_side: patch,
                max_disp_fraction: max_disp_frac,
                normalized: ncc,
                subpixel,
                ..Default::default()
            };
            run_match(&dataset, frame, &cfg, &out)
        }
        Command::Codematch {
            dataset,
            frame,
            max_disp_frac,
            out,
        } => codematch(&dataset, frame, max_disp_frac, &out),
        Command::Eval {
            pred,
            gt,
            seg,
            mask,
            depth,
        } => eval(&pred, &gt, seg.as_deref(), mask.as_deref(), depth),
        Command::Uncert {
            dataset,
            frame,
            noise,
            seed,
            bins,
            ncc,
            out,
        } => uncert(&dataset, frame, noise, seed, bins, ncc, &out),
        Command::MtlSim {
            scheduler,
            epochs,
            lr,
            seed,
            out,
        } => mtl_sim(scheduler, epochs, lr, seed, out.as_deref()),
    }
}

fn create(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn generate(scene: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let text = fs::read_to_string(scene).with_context(|| format!("reading {}", scene.display()))?;
    let mut doc = SceneDocument::from_json(&text).with_context(|| format!("parsing {}", scene.display()))?;
    if let Some(s) = seed {
        doc.scene.rng_seed = s;
    }
    let (camera, projector, patterns) = (doc.camera(), doc.projector(), doc.patterns());
    let views = render_dataset(&doc.scene, &camera, &projector, &patterns)?;
    let frames: Vec<DatasetFrame> = views
        .into_iter()
        .map(|(pose, out)| DatasetFrame::from_render(pose, out))
        .collect();
    let mut header = DatasetManifest::new(patterns, camera, projector, doc.scene.rng_seed);
    header.scene = Some(doc.scene.clone());
    let manifest = io::write_dataset(out, &frames, &header)?;
    println!("frames {}", manifest.frames.len());
    Ok(())
}

fn patterns(spec: PatternSpec, height: usize, out: &Path) -> Result<()> {
    if height == 0 {
        bail!("height must be positive");
    }
    create(out)?;
    for n in 1..=spec.t {
        let row = (0..spec.code_width)
            .map(|c| stripe(&spec, n, c))
            .collect::<lumen::Result<Vec<bool>>>()?;
        let mask = Grid::from_fn(spec.code_width, height, |x, _| row[x]);
        io::write_mask(out.join(format!("pattern_{n:02}.png")), &mask)?;
    }
    println!("patterns {}", spec.t);
    Ok(())
}

fn load(dataset: &Path, frame: usize) -> Result<(DatasetManifest, DatasetFrame)> {
    let manifest = io::read_manifest(dataset)?;
    let f = io::read_frame(dataset, &manifest, frame)?;
    Ok((manifest, f))
}

fn decode(dataset: &Path, frame: usize, out: &Path) -> Result<()> {
    let (manifest, f) = load(dataset, frame)?;
    let (l, r) = pipeline::decode_pair(&manifest.patterns, &f.left_stack, &f.right_stack)?;
    let lit = f.frame.matchable_mask();
    create(out)?;
    io::write_codes(out.join("codes_left.png"), &l.codes)?;
    io::write_codes(out.join("codes_right.png"), &r.codes)?;
    io::write_mask(out.join("mask_left.png"), &lit)?;
    println!("decoded_pixels {}", lit.count());
    Ok(())
}

fn write_disparity(out: &Path, map: &DisparityMap) -> Result<()> {
    create(out)?;
    io::write_pfm(out.join("disp.pfm"), map)?;
    io::write_disparity_preview(out.join("disp_preview.png"), map)?;
    let heat = io::render_heatmap(&map.values, &map.valid, &HeatmapStyle::default())?;
    io::write_rgb(out.join("disp_heatmap.png"), &heat)?;
    Ok(())
}

fn run_match(dataset: &Path, frame: usize, cfg: &MatchConfig, out: &Path) -> Result<()> {
    let (_, f) = load(dataset, frame)?;
    let map = lumen::matcher::compute_disparity(&f.left_stack, &f.right_stack, cfg)?;
    write_disparity(out, &map)?;
    println!("valid_pixels {}", map.valid_count());
    Ok(())
}

fn codematch(dataset: &Path, frame: usize, max_disp_frac: f64, out: &Path) -> Result<()> {
    let (manifest, f) = load(dataset, frame)?;
    let map = pipeline::oracle_disparity(
        &manifest.patterns,
        &f.frame,
        &f.left_stack,
        &f.right_stack,
        max_disp_frac,
    )?;
    write_disparity(out, &map)?;
    io::write_mask(out.join("mask.png"), &f.frame.matchable_mask())?;
    println!("valid_pixels {}", map.valid_count());
    Ok(())
}

fn eval(pred: &Path, gt: &Path, seg: Option<&Path>, mask: Option<&Path>, depth: Option<(f64, f64)>) -> Result<()> {
    let p = io::read_pfm(pred)?;
    let g = io::read_pfm(gt)?;
    let mask = mask.map(io::read_mask).transpose()?;
    let mask = mask.as_ref();
    println!("MAE {:.6}", mae(&p, &g, mask)?);
    println!("IQR {:.6}", iqr_abs_error(&p, &g, mask)?);
    if let Some(seg) = seg {
        let mut s = io::read_mask(seg)?;
        if let Some(m) = mask {
            s = s.and(m)?;
        }
        println!("seg-MAE {:.6}", seg_mae(&p, &g, &s)?);
    }
    if let Some((f, b)) = depth {
        println!("depth-MAE-mm {:.6}", depth_mae_mm(&p, &g, f, b, mask)?);
    }
    Ok(())
}

fn uncert(dataset: &Path, frame: usize, noise: f64, seed: u64, bins: usize, ncc: bool, out: &Path) -> Result<()> {
    let (_, f) = load(dataset, frame)?;
    let cfg = MatchConfig {
        normalized: ncc,
        ..Default::default()
    };
    let study = pipeline::noise_study(
        &f.left_stack,
        &f.right_stack,
        &f.frame.gt_disparity,
        noise,
        &cfg,
        bins,
        seed,
    )?;
    create(out)?;
    let all = Grid::filled(f.frame.width(), f.frame.height(), true);
    let unc = DisparityMap::new(study.confidence.uncertainty.clone(), all.clone())?;
    io::write_pfm(out.join("uncertainty.pfm"), &unc)?;
    let style = HeatmapStyle::default();
    io::write_rgb(
        out.join("uncertainty.png"),
        &io::render_heatmap(&unc.values, &all, &style)?,
    )?;
    io::write_rgb(
        out.join("error.png"),
        &io::render_heatmap(&study.errors, &study.error_mask, &style)?,
    )?;
    io::write_pfm(out.join("disp.pfm"), &study.disparity)?;
    let counts = study.report.log_counts();
    let histogram = io::render_heatmap(&counts, &Grid::filled(counts.width(), counts.height(), true), &style)?;
    // row 0 holds the smallest errors; flip so error grows upwards
    let histogram = image_flip(&histogram);
    io::write_rgb(out.join("histogram.png"), &histogram)?;
    fs::write(out.join("correlation.csv"), study.report.histogram_csv())
        .with_context(|| format!("writing {}", out.join("correlation.csv").display()))?;
    let summary = study.report.summary();
    fs::write(out.join("summary.txt"), &summary)
        .with_context(|| format!("writing {}", out.join("summary.txt").display()))?;
    print!("{summary}");
    if study.report.spearman.is_none() || study.report.pearson.is_none() {
        return Err(Error::Empty("correlation undefined (constant uncertainty or error)".into()).into());
    }
    Ok(())
}

fn image_flip(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    RgbImage::from_fn(w, h, |x, y| *img.get_pixel(x, h - 1 - y))
}

fn mtl_sim(scheduler: SchedulerKind, epochs: usize, lr: f64, seed: u64, out: Option<&Path>) -> Result<()> {
    if epochs == 0 {
        bail!("epochs must be positive");
    }
    let cfg = ToyTaskConfig::random(8, 64, epochs, lr, scheduler, seed);
    let curves = toy_two_task_train(&cfg)?;
    let csv = curves.to_csv();
    match out {
        Some(p) => fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}
