use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cmfd::analysis::{
    assumption_ratio, contrast_maps, detection_keypoints, entropy_diff_cdf, original_positions, pseudo_color,
    recall_vs_bruteforce, step4_sweep,
};
use cmfd::evaluation::{load_combined, load_dataset, run_benchmark, Layout};
use cmfd::forge::{forge, synthetic_texture, ForgeSpec, Rect};
use cmfd::image_io::{load_image, to_grayscale};
use cmfd::matcher::{match_all, MatchMode};
use cmfd::pipeline::{
    detect, detection_json, extract_features, write_artifacts, write_entropy_png, write_keypoints_csv,
    write_matches_csv, Timings,
};
use cmfd::{Config, DefaultReal, DetectionSource, RgbImage};

#[derive(Parser)]
#[command(name = "cmfd", version, about = "Copy-move forgery detection")]
struct Cli {
    /// Configuration file (`key = value` lines); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "CMFD_THREADS")]
    threads: Option<usize>,

    /// Log progress to stderr (`-v` info, `-vv` debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect copy-move regions in one image. Exit code 0 = clean, 1 = tampered, 2 = error.
    Detect(DetectArgs),
    /// Score the detector over a dataset.
    Evaluate(EvaluateArgs),
    /// Diagnostic studies: entropy maps, keypoint density, match statistics, contrast maps.
    Analyze(AnalyzeArgs),
    /// Paste a transformed copy of a rectangle and write the ground-truth mask.
    Forge(ForgeArgs),
}

#[derive(Args, Default)]
struct ConfigFlags {
    #[arg(long)]
    resize_factor: Option<f64>,
    #[arg(long)]
    entropy_radius: Option<usize>,
    #[arg(long)]
    detection_source: Option<DetectionSource>,
    #[arg(long)]
    contrast_threshold: Option<f64>,
    #[arg(long)]
    sigma0: Option<f64>,
    #[arg(long)]
    scales_per_octave: Option<usize>,
    #[arg(long)]
    octaves: Option<usize>,
    #[arg(long)]
    edge_test: Option<bool>,
    #[arg(long)]
    edge_ratio: Option<f64>,
    #[arg(long)]
    step1: Option<u32>,
    #[arg(long)]
    step2: Option<u32>,
    #[arg(long)]
    step3: Option<f64>,
    #[arg(long)]
    step4: Option<f64>,
    #[arg(long, value_parser = parse_match_mode)]
    matching: Option<MatchMode>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    exhaustive_g2nn: Option<bool>,
    #[arg(long)]
    min_spatial_distance: Option<f64>,
    #[arg(long)]
    ransac_iters: Option<usize>,
    #[arg(long)]
    ransac_tol: Option<f64>,
    #[arg(long)]
    ransac_seed: Option<u64>,
    #[arg(long)]
    max_transforms: Option<usize>,
    #[arg(long)]
    seed_radius: Option<usize>,
    #[arg(long)]
    zncc_patch_radius: Option<usize>,
    #[arg(long)]
    zncc_threshold: Option<f64>,
    #[arg(long)]
    close_radius: Option<usize>,
    #[arg(long)]
    open_radius: Option<usize>,
    #[arg(long)]
    min_region_area_fraction: Option<f64>,
}

fn parse_match_mode(s: &str) -> std::result::Result<MatchMode, String> {
    match s {
        "clustered" => Ok(MatchMode::Clustered),
        "gray-only" => Ok(MatchMode::GrayOnly),
        "brute-force" => Ok(MatchMode::BruteForce),
        _ => Err(format!("expected clustered, gray-only or brute-force, got `{s}`")),
    }
}

macro_rules! apply {
    ($cfg:ident, $flags:ident, $($field:ident),*) => {
        $(if let Some(v) = $flags.$field { $cfg.$field = v; })*
    };
}

impl ConfigFlags {
    fn apply(&self, cfg: &mut Config) {
        let f = self;
        apply!(
            cfg, f, resize_factor, entropy_radius, detection_source, contrast_threshold, sigma0,
            scales_per_octave, octaves, edge_test, edge_ratio, step1, step2, step3, step4, matching,
            ratio, exhaustive_g2nn, min_spatial_distance, ransac_iters, ransac_tol, ransac_seed,
            max_transforms, seed_radius, zncc_patch_radius, zncc_threshold, close_radius,
            open_radius, min_region_area_fraction
        );
    }
}

#[derive(Args)]
struct DetectArgs {
    image: PathBuf,
    /// Output directory for the mask, overlay and JSON record.
    #[arg(long, short)]
    out: PathBuf,
    /// Also write the matched pairs as CSV.
    #[arg(long)]
    dump_matches: Option<PathBuf>,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct EvaluateArgs {
    root: PathBuf,
    #[arg(long, default_value = "generic-pairs")]
    layout: Layout,
    /// GRIP root whose originals are added to a CMH run.
    #[arg(long)]
    grip_originals: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    /// Images evaluated concurrently (defaults to the thread count).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// An image, or a directory whose images form the corpus.
    input: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    /// Block size of the keypoint-density study.
    #[arg(long, default_value_t = 16)]
    block: usize,
    /// Resize factors of the keypoint-density study.
    #[arg(long, value_delimiter = ',', default_value = "1,1.5,2,2.5,3")]
    scales: Vec<f64>,
    /// Skip the brute-force studies (entropy difference CDF and step4 recall).
    #[arg(long)]
    skip_matching: bool,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct ForgeArgs {
    /// Source image; omit with `--synthetic`.
    #[arg(required_unless_present = "synthetic")]
    image: Option<PathBuf>,
    /// Generate a square synthetic texture of this side instead of reading an image.
    #[arg(long, conflicts_with = "image")]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Source rectangle `x,y,width,height`.
    #[arg(long, value_delimiter = ',', required = true)]
    rect: Vec<usize>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    dx: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    dy: f64,
    /// Rotation in degrees about the patch centre.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    rotate: f64,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, short)]
    out: PathBuf,
    /// Output file stem; defaults to the input stem plus `_forged`.
    #[arg(long)]
    name: Option<String>,
}

fn load_config(cli: &Cli, flags: &ConfigFlags) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    flags.apply(&mut cfg);
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    if cfg.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    Ok(cfg)
}

fn stem_of(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string()
}

fn run_detect(cli: &Cli, args: &DetectArgs) -> Result<ExitCode> {
    let cfg = load_config(cli, &args.flags)?;
    let img = load_image(&args.image).context("load")?;
    let d = detect::<DefaultReal>(&img, &cfg)?;
    let stem = stem_of(&args.image);
    let paths = write_artifacts(&img, &d, &args.out, &stem).context("write artifacts")?;
    cfg.save(&args.out.join(format!("{stem}_config.toml")))?;
    if let Some(p) = &args.dump_matches {
        write_matches_csv(p, &d).context("write matches")?;
    }
    let json = detection_json(&d);
    println!(
        "{}: {} ({} matches, {} transforms, mask area {}) -> {}",
        args.image.display(),
        json["verdict"].as_str().unwrap_or_default(),
        d.result.stats.matches,
        d.result.transforms.len(),
        d.result.mask.area(),
        paths.json.display()
    );
    Ok(if d.tampered() { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn run_evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<ExitCode> {
    let cfg = load_config(cli, &args.flags)?;
    let entries = match &args.grip_originals {
        Some(grip) => load_combined(&args.root, grip)?,
        None => load_dataset(&args.root, args.layout)?,
    };
    if entries.is_empty() {
        bail!("dataset {} holds no images", args.root.display());
    }
    let report = run_benchmark::<DefaultReal>(&entries, &cfg, args.workers)?;
    report.write(&args.out)?;
    print!("{}", report.summary_table());
    Ok(ExitCode::SUCCESS)
}

fn corpus(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(input)
        .with_context(|| format!("read {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| ["png", "jpg", "jpeg", "bmp"].contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    out.sort();
    if out.is_empty() {
        bail!("no images under {}", input.display());
    }
    Ok(out)
}

fn run_analyze(cli: &Cli, args: &AnalyzeArgs) -> Result<ExitCode> {
    let cfg = load_config(cli, &args.flags)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("create {}", args.out.display()))?;
    let mut ratio_rows = vec!["image,s,source,ratio".to_string()];
    let mut cdf_rows = vec!["image,delta_entropy,cumulative".to_string()];
    let mut recall_rows = vec!["image,step4,recall".to_string()];
    let mut summary = Vec::new();
    for path in corpus(&args.input)? {
        let stem = stem_of(&path);
        let gray = to_grayscale(&load_image(&path)?);
        let feats = extract_features::<DefaultReal>(&gray, &cfg, &mut Timings::default())?;
        write_entropy_png(&args.out.join(format!("{stem}_entropy.png")), &feats.entropy)?;
        write_keypoints_csv(&args.out.join(format!("{stem}_keypoints.csv")), &feats.keypoints)?;

        let maps = contrast_maps(&gray, cfg.entropy_radius)?;
        pseudo_color(&maps.gray).save_png(&args.out.join(format!("{stem}_contrast_gray.png")))?;
        pseudo_color(&maps.entropy).save_png(&args.out.join(format!("{stem}_contrast_entropy.png")))?;
        let (cov_g, cov_e) = maps.coverage(0.5);

        for &s in &args.scales {
            let scaled = Config {
                resize_factor: s,
                ..cfg.clone()
            };
            for source in [DetectionSource::Entropy, DetectionSource::Gray] {
                let kps = detection_keypoints::<DefaultReal>(&gray, &scaled, source)?;
                let r = assumption_ratio(&original_positions(&kps, s), gray.width(), gray.height(), args.block)?;
                let name = if source == DetectionSource::Entropy { "entropy" } else { "gray" };
                ratio_rows.push(format!("{},{s},{name},{r}", path.display()));
            }
        }

        let mut record = serde_json::json!({
            "image": path.display().to_string(),
            "keypoints": feats.keypoints.len(),
            "contrast_coverage_gray": cov_g,
            "contrast_coverage_entropy": cov_e,
        });
        if !args.skip_matching {
            let brute = match_all(
                &feats.keypoints,
                &feats.descriptors,
                &cfg.cluster_params(),
                &cfg.match_params(),
                MatchMode::BruteForce,
            )?;
            record["brute_force_matches"] = brute.pairs.len().into();
            if brute.pairs.is_empty() {
                log::warn!("{}: no brute-force matches; skipping match studies", path.display());
            } else {
                let cdf = entropy_diff_cdf(&brute.pairs, &feats.keypoints)?;
                for (v, f) in cdf.values.iter().zip(&cdf.fractions) {
                    cdf_rows.push(format!("{},{v},{f}", path.display()));
                }
                record["cdf_at_1"] = cdf.at(1.0).into();
                let curve = recall_vs_bruteforce(&feats.keypoints, &feats.descriptors, &cfg, &step4_sweep(0.5, 0.01))?;
                record["recall_monotone"] = curve.is_monotone().into();
                for (s4, r) in &curve.points {
                    recall_rows.push(format!("{},{s4},{r}", path.display()));
                }
            }
        }
        println!("{}", record);
        summary.push(record);
    }
    let write = |name: &str, rows: &[String]| -> Result<()> {
        let p = args.out.join(name);
        std::fs::write(&p, rows.join("\n") + "\n").with_context(|| format!("write {}", p.display()))
    };
    write("assumption_ratio.csv", &ratio_rows)?;
    if !args.skip_matching {
        write("entropy_diff_cdf.csv", &cdf_rows)?;
        write("recall_step4.csv", &recall_rows)?;
    }
    write(
        "summary.json",
        &[serde_json::to_string_pretty(&summary).context("serialize summary")?],
    )?;
    Ok(ExitCode::SUCCESS)
}

fn run_forge(args: &ForgeArgs) -> Result<ExitCode> {
    let (img, default_stem) = match (&args.image, args.synthetic) {
        (Some(p), _) => (load_image(p)?, format!("{}_forged", stem_of(p))),
        (None, Some(n)) => (
            RgbImage::from_gray(&synthetic_texture(n, n, args.seed)),
            format!("synthetic_{}_forged", args.seed),
        ),
        (None, None) => bail!("an input image or --synthetic is required"),
    };
    if args.rect.len() != 4 {
        bail!("--rect takes x,y,width,height");
    }
    let spec = ForgeSpec {
        source: Rect::new(args.rect[0], args.rect[1], args.rect[2], args.rect[3]),
        offset: [args.dx, args.dy],
        rotation_deg: args.rotate,
        scale: args.scale,
    };
    let res = forge(&img, &spec)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("create {}", args.out.display()))?;
    let stem = args.name.clone().unwrap_or(default_stem);
    let image_path = args.out.join(format!("{stem}.png"));
    let mask_path = args.out.join(format!("{stem}_gt.png"));
    res.image.save_png(&image_path)?;
    res.mask.save_png(&mask_path)?;
    println!("{} ({} mask pixels) -> {}", image_path.display(), res.mask.area(), mask_path.display());
    Ok(ExitCode::SUCCESS)
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Detect(a) => run_detect(cli, a),
        Command::Evaluate(a) => run_evaluate(cli, a),
        Command::Analyze(a) => run_analyze(cli, a),
        Command::Forge(a) => run_forge(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
