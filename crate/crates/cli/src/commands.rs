use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use robustfield::fieldrender::Camera;
use robustfield::sampling::SamplingStrategy;
use robustfield::scenegen::{gen_scene, load_dataset, save_dataset, Dataset, SceneConfig};
use robustfield::trainer::{
    run_ablation, save_beta_heatmap, train_with_output, AblationSuite, EvalRow, LossVariant, OutputOptions, Trainer,
};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::config::{Layers, RunConfig, RESOLVED_FILE};
use crate::{
    AblateArgs, Cli, CliError, Command, Common, EvalArgs, FeaturesArg, GenArgs, ModeArg, Preset, RenderArgs, Split,
    SuiteArg, TrainArgs, TrainFlags, UsageError,
};

type Overrides = Vec<(&'static str, String)>;

pub fn run<I: IntoIterator<Item = (String, String)>>(cli: Cli, env: I) -> Result<(), CliError> {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let env: Vec<(String, String)> = env.into_iter().collect();
    match &cli.command {
        Command::Gen(a) => gen(&cli.common, env, a),
        Command::Train(a) => train(&cli.common, env, a),
        Command::Eval(a) => eval(&cli.common, env, a),
        Command::Render(a) => render(&cli.common, env, a),
        Command::Ablate(a) => ablate(&cli.common, env, a),
    }
}

/// Stacks defaults, the config file, the environment and the flags.
fn resolve(
    common: &Common,
    base: RunConfig,
    config_file: Option<&Path>,
    env: Vec<(String, String)>,
    shortcuts: Overrides,
) -> Result<RunConfig, UsageError> {
    let mut layers = Layers::new(&base);
    if let Some(path) = config_file {
        layers.file(path)?;
    }
    layers.env(env)?;
    for kv in &common.set {
        layers.assignment(kv)?;
    }
    for (k, v) in shortcuts {
        layers.set(k, &v)?;
    }
    layers.resolve()
}

fn train_shortcuts(f: &TrainFlags) -> Overrides {
    let mut o = Overrides::new();
    if let Some(v) = f.iters {
        o.push(("train.iterations", v.to_string()));
    }
    if let Some(v) = f.seed {
        o.push(("train.seed", v.to_string()));
    }
    if let Some(v) = f.eval_every {
        o.push(("train.eval_every", v.to_string()));
    }
    if f.deterministic {
        o.push(("train.deterministic", "true".into()));
    }
    o
}

fn write_resolved(dir: &Path, cfg: &RunConfig) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(RESOLVED_FILE);
    std::fs::write(&path, cfg.to_toml()).with_context(|| format!("writing {}", path.display()))
}

fn load(dir: &Path) -> anyhow::Result<Dataset> {
    load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

/// `--config` if given, else the resolved config saved beside the checkpoint.
fn checkpoint_config(common: &Common, checkpoint: &Path) -> Option<PathBuf> {
    common.config.clone().or_else(|| {
        let p = checkpoint.parent().unwrap_or(Path::new(".")).join(RESOLVED_FILE);
        p.is_file().then_some(p)
    })
}

fn resume<'a>(ds: &'a Dataset, cfg: &RunConfig, checkpoint: &Path) -> anyhow::Result<Trainer<'a>> {
    if !checkpoint.is_file() {
        anyhow::bail!("checkpoint {} not found", checkpoint.display());
    }
    Trainer::resume(ds, cfg.train.clone(), checkpoint).with_context(|| format!("restoring {}", checkpoint.display()))
}

fn gen(common: &Common, env: Vec<(String, String)>, a: &GenArgs) -> Result<(), CliError> {
    let base = RunConfig {
        scene: match a.preset {
            Preset::Default => SceneConfig::default(),
            Preset::CamouflageBenchmark => SceneConfig::camouflage_benchmark(),
        },
        ..RunConfig::default()
    };
    let mut o = Overrides::new();
    if let Some(m) = a.mode {
        o.push(("scene.mode", if m == ModeArg::Flat2d { "flat2d" } else { "voxel3d" }.into()));
    }
    if let Some(v) = a.seed {
        o.push(("scene.seed", v.to_string()));
    }
    if let Some(v) = a.occlusion {
        o.push(("scene.occlusion_ratio", format!("{v:?}")));
    }
    if let Some(v) = a.views {
        o.push(("scene.n_views", v.to_string()));
    }
    if let Some(v) = a.test_views {
        o.push(("scene.n_test", v.to_string()));
    }
    if let Some(v) = a.width {
        o.push(("scene.width", v.to_string()));
    }
    if let Some(v) = a.height {
        o.push(("scene.height", v.to_string()));
    }
    if a.camouflage {
        o.push(("scene.camouflage", "true".into()));
    }
    if let Some(f) = a.features {
        o.push((
            "scene.feature_provider",
            if f == FeaturesArg::Builtin { "builtin_descriptor" } else { "oracle" }.into(),
        ));
    }
    let cfg = resolve(common, base, common.config.as_deref(), env, o)?;
    let ds = gen_scene(&cfg.scene).context("generating scene")?;
    save_dataset(&ds, &a.out).with_context(|| format!("writing dataset {}", a.out.display()))?;
    write_resolved(&a.out, &cfg)?;
    println!(
        "wrote {} training and {} test views ({}x{}, mean distractor coverage {:.3}) to {}",
        ds.train.len(),
        ds.test.len(),
        cfg.scene.width,
        cfg.scene.height,
        ds.mean_coverage(),
        a.out.display()
    );
    Ok(())
}

fn print_row(label: &str, r: &EvalRow) {
    println!(
        "{label}: iter {} test_psnr {:.3} test_ssim {:.4} beta_auroc {:.4} beta_distractor {:.4} beta_static {:.4}",
        r.iter, r.test_psnr, r.test_ssim, r.beta_auroc, r.beta_distractor, r.beta_static
    );
}

fn train(common: &Common, env: Vec<(String, String)>, a: &TrainArgs) -> Result<(), CliError> {
    let mut o = train_shortcuts(&a.train);
    if a.baseline {
        o.push(("train.uncertainty", "false".into()));
    }
    let cfg = resolve(common, RunConfig::default(), common.config.as_deref(), env, o)?;
    let ds = load(&a.dataset)?;
    write_resolved(&a.out, &cfg)?;
    let out = OutputOptions {
        heatmap_views: a.heatmap_views,
        plot: !a.no_plot,
        ..OutputOptions::new(&a.out)
    };
    let report = train_with_output(&ds, &cfg.train, &out).context("training")?;
    if let Some(r) = report.final_row() {
        print_row("final", r);
    }
    println!("outputs in {}", a.out.display());
    Ok(())
}

fn eval(common: &Common, env: Vec<(String, String)>, a: &EvalArgs) -> Result<(), CliError> {
    let file = checkpoint_config(common, &a.checkpoint);
    let cfg = resolve(common, RunConfig::default(), file.as_deref(), env, Overrides::new())?;
    let ds = load(&a.dataset)?;
    let tr = resume(&ds, &cfg, &a.checkpoint)?;
    let row = tr.evaluate().context("evaluating")?;
    let mut table = String::from("metric,value\n");
    for (k, v) in [
        ("test_psnr", row.test_psnr),
        ("test_ssim", row.test_ssim),
        ("beta_auroc", row.beta_auroc),
        ("beta_distractor", row.beta_distractor),
        ("beta_static", row.beta_static),
    ] {
        writeln!(table, "{k},{v:?}").expect("string write");
    }
    print!("iter,{}\n{table}", row.iter);
    if let Some(dir) = &a.out {
        write_resolved(dir, &cfg)?;
        let path = dir.join("metrics.csv");
        std::fs::write(&path, format!("iter,{}\n{table}", row.iter)).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraFile {
    cameras: Vec<Camera>,
}

fn read_cameras(path: &Path) -> Result<Vec<Camera>, CliError> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading cameras {}", path.display()))?;
    let file: CameraFile = toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    for (i, c) in file.cameras.iter().enumerate() {
        c.validate().map_err(|e| UsageError(format!("{} camera {i}: {e}", path.display())))?;
    }
    Ok(file.cameras)
}

fn render(common: &Common, env: Vec<(String, String)>, a: &RenderArgs) -> Result<(), CliError> {
    let file = checkpoint_config(common, &a.checkpoint);
    let cfg = resolve(common, RunConfig::default(), file.as_deref(), env, Overrides::new())?;
    let ds = load(&a.dataset)?;
    let cameras = match &a.cameras {
        Some(p) => read_cameras(p)?,
        None => match a.split {
            Split::Test => ds.test.iter().map(|t| t.camera.clone()).collect(),
            Split::Train => ds.train.iter().map(|v| v.camera.clone()).collect(),
        },
    };
    let tr = resume(&ds, &cfg, &a.checkpoint)?;
    write_resolved(&a.out, &cfg)?;
    for (i, cam) in cameras.iter().enumerate() {
        let img = tr.render_image(cam).with_context(|| format!("rendering camera {i}"))?;
        let path = a.out.join(format!("view_{i:03}.png"));
        img.save(&path).with_context(|| format!("writing {}", path.display()))?;
    }
    if a.beta {
        let range = [cfg.train.beta_min, cfg.train.heatmap_beta_max];
        for (i, v) in ds.train.iter().enumerate() {
            let beta = tr.beta_map(i).context("predicting beta")?;
            let path = a.out.join(format!("beta_{i:03}.png"));
            save_beta_heatmap(&path, v.image.width, v.image.height, &beta, range)
                .with_context(|| format!("writing {}", path.display()))?;
        }
    }
    println!("rendered {} views to {}", cameras.len(), a.out.display());
    Ok(())
}

fn parse_enum<T: DeserializeOwned>(s: &str, what: &str) -> Result<T, UsageError> {
    T::deserialize(toml::Value::String(s.to_string())).map_err(|_| UsageError(format!("unknown {what} `{s}`")))
}

fn suite(a: &AblateArgs) -> Result<AblationSuite, UsageError> {
    let v = &a.variants;
    Ok(match a.suite {
        SuiteArg::Dilation if v.is_empty() => AblationSuite::dilation_default(),
        SuiteArg::Loss if v.is_empty() => AblationSuite::loss_default(),
        SuiteArg::Sampler if v.is_empty() => AblationSuite::sampler_default(),
        SuiteArg::Dilation => AblationSuite::Dilation(
            v.iter()
                .map(|s| match s.trim().parse::<usize>() {
                    Ok(d) if d >= 1 => Ok(d),
                    _ => Err(UsageError(format!("dilation `{s}` is not a positive integer"))),
                })
                .collect::<Result<_, _>>()?,
        ),
        SuiteArg::Loss => AblationSuite::Loss(
            v.iter()
                .map(|s| parse_enum::<LossVariant>(s.trim(), "loss variant"))
                .collect::<Result<_, _>>()?,
        ),
        SuiteArg::Sampler => AblationSuite::Sampler(
            v.iter()
                .map(|s| parse_enum::<SamplingStrategy>(s.trim(), "sampler"))
                .collect::<Result<_, _>>()?,
        ),
    })
}

fn ablate(common: &Common, env: Vec<(String, String)>, a: &AblateArgs) -> Result<(), CliError> {
    let suite = suite(a)?;
    let cfg = resolve(common, RunConfig::default(), common.config.as_deref(), env, train_shortcuts(&a.train))?;
    let ds = load(&a.dataset)?;
    write_resolved(&a.out, &cfg)?;
    let table = run_ablation(&ds, &cfg.train, &suite).context("running ablation")?;
    for row in &table.rows {
        let dir = a.out.join(&row.variant);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        row.report.write_csv(&dir.join("report.csv")).context("writing variant report")?;
    }
    let csv = table.to_csv();
    let path = a.out.join("ablation.csv");
    std::fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
    print!("{csv}");
    Ok(())
}
