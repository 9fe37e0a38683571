use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::config::{env_overrides, read_config_file, resolve, Override};
use super::render::{matches_svg, MatchLine};
use super::{
    parallel_map, partial_path, write_atomic, BenchmarkMode, Cli, DataMode, EvalArgs, GenDataArgs,
    MatchArgs, TrainArgs,
};
use crate::geometry::{
    compose_fundamental, sampson_distance, Correspondence, Homography, Intrinsics, Point,
    RelativePose,
};
use crate::hsidata::{
    generate_planar_pair, load_cube, save_cube, synthetic_cube, DatasetManifest, FrameRecord,
    PairMode, PoseRecord, SyntheticPairSpec, TripletRecord,
};
use crate::matching::{mnn_match, similarity};
use crate::metrics::{
    curves_svg, evaluate_planar_sample, evaluate_pose_sample, reprojection_error, EvalMode,
    EvalOptions, EvalReport, ThresholdCurve,
};
use crate::model::{Checkpoint, HyKeyNetwork};
use crate::training::{
    synthetic_triplet, ManifestDataset, TrainConfig, TrainError, Trainer, TrainingTriplet,
    TripletSource,
};

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Common header of every artifact: command, crate version, resolved
/// settings.
fn provenance(command: &str, config: &impl Serialize) -> Result<Value> {
    Ok(json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": serde_json::to_value(config)?,
    }))
}

fn base_config(cli: &Cli) -> Result<Option<Value>> {
    cli.config.as_deref().map(read_config_file).transpose()
}

/// Environment first, then the global flags.
fn layers(
    cli: &Cli,
    env: &dyn Fn(&str) -> Option<String>,
    seed_path: &str,
) -> Result<Vec<Override>> {
    let mut out = env_overrides(env, Some(seed_path), "threads")?;
    if let Some(s) = cli.seed {
        out.push(Override::flag(seed_path, s));
    }
    if let Some(t) = cli.threads {
        out.push(Override::flag("threads", t));
    }
    Ok(out)
}

fn check_threads(threads: usize) -> Result<()> {
    if threads == 0 {
        bail!("invalid config at `threads`: must be at least 1");
    }
    Ok(())
}

fn is_nonempty_dir(path: &Path) -> Result<bool> {
    if !path.exists() {
        return Ok(false);
    }
    if !path.is_dir() {
        bail!("{} exists and is not a directory", path.display());
    }
    Ok(std::fs::read_dir(path)?.next().is_some())
}

// ---------------------------------------------------------------- gen-data

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    pub mode: PairMode,
    pub count: usize,
    pub seed: u64,
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    /// Identity warps, no photometric jitter.
    pub identity: bool,
    pub threads: usize,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            mode: PairMode::Planar,
            count: 10,
            seed: 0,
            bands: 16,
            height: 64,
            width: 64,
            identity: false,
            threads: 1,
        }
    }
}

fn make_triplet(cfg: &GenDataConfig, seed: u64) -> Result<TrainingTriplet> {
    if !cfg.identity {
        return Ok(synthetic_triplet(
            cfg.mode, seed, cfg.bands, cfg.height, cfg.width,
        )?);
    }
    if cfg.mode != PairMode::Planar {
        bail!("invalid config at `identity`: only planar data has identity pairs");
    }
    let base = synthetic_cube(cfg.bands, cfg.height, cfg.width, seed);
    let spec =
        SyntheticPairSpec::identity(PairMode::Planar, seed, cfg.bands, cfg.height, cfg.width);
    let pair = generate_planar_pair(&base, &spec)?;
    Ok(TrainingTriplet {
        base,
        warped: pair.image,
        h01: pair.h01,
        valid: pair.valid,
        second: None,
    })
}

/// Planar data has no camera; frames get a nominal pinhole with the focal
/// length equal to the width.
fn nominal_intrinsics(height: usize, width: usize) -> Result<Intrinsics> {
    let (h, w) = (height as f64, width as f64);
    Ok(Intrinsics::new(w, w, (w - 1.0) / 2.0, (h - 1.0) / 2.0)?)
}

pub(crate) fn gen_data(
    cli: &Cli,
    args: &GenDataArgs,
    env: &dyn Fn(&str) -> Option<String>,
) -> Result<()> {
    let mut layers = layers(cli, env, "seed")?;
    if let Some(m) = args.mode {
        layers.push(Override::flag(
            "mode",
            if m == DataMode::Planar {
                "planar"
            } else {
                "epipolar"
            },
        ));
    }
    for (path, v) in [
        ("count", args.count),
        ("bands", args.bands),
        ("height", args.height),
        ("width", args.width),
    ] {
        if let Some(v) = v {
            layers.push(Override::flag(path, v));
        }
    }
    if args.identity {
        layers.push(Override::flag("identity", true));
    }
    let cfg: GenDataConfig = resolve(base_config(cli)?, &layers)?;
    check_threads(cfg.threads)?;
    if cfg.count == 0 {
        bail!("invalid config at `count`: must be at least 1");
    }
    let out = &args.out;
    if is_nonempty_dir(out)? && !args.force {
        bail!(
            "{} exists and is not empty; pass --force to write into it",
            out.display()
        );
    }
    std::fs::create_dir_all(out.join("cubes"))
        .with_context(|| format!("creating {}", out.display()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: Vec<u64> = (0..cfg.count).map(|_| rng.random()).collect();
    let items = parallel_map(&seeds, cfg.threads, |i, &seed| {
        let t = make_triplet(&cfg, seed).with_context(|| format!("generating triplet {i}"))?;
        let names = ["base", "warped", "second"].map(|n| format!("cubes/{i:05}_{n}.cube"));
        save_cube(&t.base, out.join(&names[0]))?;
        save_cube(&t.warped, out.join(&names[1]))?;
        if let Some(s) = &t.second {
            save_cube(&s.image, out.join(&names[2]))?;
        }
        Ok((t, names))
    })?;

    let mut manifest = DatasetManifest {
        config: provenance("gen-data", &cfg)?,
        ..Default::default()
    };
    for (i, (t, names)) in items.into_iter().enumerate() {
        let sequence = format!("synthetic-{i:05}");
        let frame = |path: &str, intrinsics, pose, frame_index| FrameRecord {
            cube_path: path.to_string(),
            intrinsics,
            pose,
            sequence: sequence.clone(),
            frame_index,
        };
        let base = manifest.frames.len();
        let (k0, base_pose) = match &t.second {
            Some(s) => (s.k0, Some(PoseRecord::from_pose(&RelativePose::identity()))),
            None => (nominal_intrinsics(cfg.height, cfg.width)?, None),
        };
        manifest.frames.push(frame(&names[0], k0, base_pose, 0));
        manifest.frames.push(frame(&names[1], k0, None, 1));
        let second = t.second.as_ref().map(|s| {
            manifest.frames.push(frame(
                &names[2],
                s.k2,
                Some(PoseRecord::from_pose(&s.pose)),
                2,
            ));
            base + 2
        });
        manifest.triplets.push(TripletRecord {
            base,
            warped: base + 1,
            h01: t.h01,
            second,
        });
    }
    manifest.validate()?;
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_atomic(&out.join("manifest.json"), text.as_bytes())?;
    println!(
        "wrote {} triplets to {}",
        manifest.triplets.len(),
        out.display()
    );
    Ok(())
}

// ------------------------------------------------------------------- train

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    /// Dataset directories holding a `manifest.json`.
    pub datasets: Vec<PathBuf>,
    /// Recorded for completeness; a training step runs on one thread.
    pub threads: usize,
    pub training: TrainConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            datasets: vec![],
            threads: 1,
            training: TrainConfig::default(),
        }
    }
}

fn training_error(e: TrainError) -> anyhow::Error {
    match e {
        TrainError::Config(msg) => match msg.split_once(": ") {
            Some((field, why)) if !field.contains(' ') => {
                anyhow!("invalid config at `training.{field}`: {why}")
            }
            _ => anyhow!("invalid training config: {msg}"),
        },
        other => other.into(),
    }
}

fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = partial_path(path);
    ck.save(&tmp)
        .with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))
}

pub(crate) fn train(
    cli: &Cli,
    args: &TrainArgs,
    env: &dyn Fn(&str) -> Option<String>,
) -> Result<()> {
    let mut layers = layers(cli, env, "training.seed")?;
    if !args.data.is_empty() {
        let dirs: Vec<Value> = args
            .data
            .iter()
            .map(|p| p.display().to_string().into())
            .collect();
        layers.push(Override::flag("datasets", dirs));
    }
    if let Some(m) = args.max_steps {
        layers.push(Override::flag("training.max_steps", m));
    }
    if args.no_pe {
        layers.push(Override::flag("training.no_pe", true));
    }
    let cfg: TrainRunConfig = resolve(base_config(cli)?, &layers)?;
    check_threads(cfg.threads)?;
    cfg.training.validate().map_err(training_error)?;
    if cfg.datasets.is_empty() {
        bail!("invalid config at `datasets`: at least one dataset directory is needed (config file or --data)");
    }
    let sources = cfg
        .datasets
        .iter()
        .map(|d| {
            ManifestDataset::open(d).with_context(|| format!("opening dataset {}", d.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&dyn TripletSource> = sources.iter().map(|s| s as &dyn TripletSource).collect();

    let out = &args.out;
    std::fs::create_dir_all(out.join("checkpoints"))
        .with_context(|| format!("creating {}", out.display()))?;
    let header = provenance("train", &cfg)?;
    let log_path = out.join("log.jsonl");
    let mut log = BufWriter::new(
        File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?,
    );
    writeln!(log, "{}", json!({"event": "config", "run": header}))?;

    let mut trainer = Trainer::new(cfg.training.clone()).map_err(training_error)?;
    let embed = |ck: &mut Checkpoint| {
        if let Some(extra) = ck.meta.extra.as_object_mut() {
            extra.insert("run".into(), header.clone());
        }
    };
    while !trainer.done() {
        let summary = trainer
            .run_epoch(&refs, &mut |s| {
                let mut line = serde_json::to_value(s).map_err(std::io::Error::other)?;
                line["event"] = "step".into();
                writeln!(log, "{line}")?;
                Ok(())
            })
            .map_err(training_error)?;
        let mut line = serde_json::to_value(&summary)?;
        line["event"] = "epoch".into();
        writeln!(log, "{line}")?;
        log.flush()?;
        if summary.steps > 0 {
            let mut ck = trainer.checkpoint();
            embed(&mut ck);
            save_checkpoint(
                &ck,
                &out.join(format!("checkpoints/epoch_{:03}.ckpt", summary.epoch)),
            )?;
        }
        log::info!(
            "epoch {} done: {} steps, mean loss {:.4}",
            summary.epoch,
            summary.steps,
            summary.mean_total
        );
    }
    log.flush()?;
    let mut ck = trainer.checkpoint();
    embed(&mut ck);
    let final_path = out.join("final.ckpt");
    save_checkpoint(&ck, &final_path)?;
    println!(
        "trained {} steps; final checkpoint {}",
        trainer.step_count(),
        final_path.display()
    );
    Ok(())
}

// -------------------------------------------------------------------- eval

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalRunConfig {
    pub mode: Option<EvalMode>,
    pub ckpt: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub threads: usize,
    pub options: EvalOptions,
}

impl Default for EvalRunConfig {
    fn default() -> Self {
        Self {
            mode: None,
            ckpt: None,
            data: None,
            threads: 1,
            options: EvalOptions::default(),
        }
    }
}

fn required<'a, T>(v: &'a Option<T>, field: &str, flag: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| {
        anyhow!("invalid config at `{field}`: missing; pass {flag} or set it in the config file")
    })
}

fn load_network(path: &Path) -> Result<(Checkpoint, HyKeyNetwork)> {
    let ck =
        Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let net = ck.to_network()?;
    Ok((ck, net))
}

pub(crate) fn eval(cli: &Cli, args: &EvalArgs, env: &dyn Fn(&str) -> Option<String>) -> Result<()> {
    let mut layers = layers(cli, env, "options.pose.seed")?;
    if let Some(m) = args.mode {
        layers.push(Override::flag(
            "mode",
            if m == BenchmarkMode::Homography {
                "homography"
            } else {
                "pose"
            },
        ));
    }
    if let Some(p) = &args.ckpt {
        layers.push(Override::flag("ckpt", p.display().to_string()));
    }
    if let Some(p) = &args.data {
        layers.push(Override::flag("data", p.display().to_string()));
    }
    if let Some(k) = args.max_kpts {
        layers.push(Override::flag("options.max_keypoints", k));
    }
    let cfg: EvalRunConfig = resolve(base_config(cli)?, &layers)?;
    check_threads(cfg.threads)?;
    let mode = *required(&cfg.mode, "mode", "--mode")?;
    let ckpt = required(&cfg.ckpt, "ckpt", "--ckpt")?;
    let data = required(&cfg.data, "data", "--data")?;

    let (_, net) = load_network(ckpt)?;
    let ds = ManifestDataset::open(data)
        .with_context(|| format!("opening dataset {}", data.display()))?;
    if mode == EvalMode::Pose && !ds.manifest.has_poses() {
        bail!(
            "pose evaluation needs posed two-view triplets but {} has none (generate it with --mode epipolar)",
            data.display()
        );
    }
    if ds.is_empty() {
        bail!("{} lists no triplets", data.display());
    }
    let indices: Vec<usize> = (0..ds.len())
        .filter(|&i| mode == EvalMode::Homography || ds.manifest.triplets[i].second.is_some())
        .collect();
    let options = &cfg.options;
    let pairs = parallel_map(&indices, cfg.threads, |_, &i| {
        let t = ds.get(i)?;
        let id = format!("{i:05}");
        Ok(match mode {
            EvalMode::Homography => evaluate_planar_sample(&net, &t.planar_sample(id), options)?,
            EvalMode::Pose => {
                let s = t
                    .pose_sample(id)
                    .ok_or_else(|| anyhow!("triplet {i} has no second view"))?;
                evaluate_pose_sample(&net, &s, options)?
            }
        })
    })?;
    let mut header = provenance("eval", &cfg)?;
    header["checkpoint_sha256"] = sha256_file(ckpt)?.into();
    header["manifest_sha256"] = sha256_file(&data.join("manifest.json"))?.into();
    let report = EvalReport::aggregate(mode, pairs, header);

    let out = &args.out;
    write_atomic(out, (report.to_json()? + "\n").as_bytes())?;
    write_atomic(&out.with_extension("csv"), report.to_csv().as_bytes())?;
    let svg = match mode {
        EvalMode::Homography => {
            let c = &report.curves;
            let named = [
                ("Rep", "repeatability"),
                ("MS", "matching_score"),
                ("MMA", "mma"),
                ("MHA", "mha"),
            ];
            let curves: Vec<(&str, &ThresholdCurve)> =
                named.iter().map(|&(n, k)| (n, &c[k])).collect();
            curves_svg("Homography benchmark", "threshold (px)", &curves)
        }
        EvalMode::Pose => {
            let m = report.maa.as_ref().expect("pose reports carry mAA");
            let curve = ThresholdCurve::new(m.thresholds_deg.clone(), m.values.clone());
            curves_svg("Relative pose", "threshold (deg)", &[("mAA", &curve)])
        }
    };
    write_atomic(&out.with_extension("svg"), svg.as_bytes())?;
    match mode {
        EvalMode::Homography => {
            for (k, c) in &report.curves {
                println!("{k}: AUC {:.4} values {:?}", c.auc, c.values);
            }
        }
        EvalMode::Pose => {
            let m = report.maa.as_ref().expect("pose reports carry mAA");
            println!(
                "mAA at {:?} deg: {:?} ({} failures)",
                m.thresholds_deg, m.values, m.failures
            );
        }
    }
    Ok(())
}

// ------------------------------------------------------------------- match

/// Ground truth for colouring matches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GroundTruth {
    /// Image `a` maps to image `b` by `h01` (row-major 3x3).
    Planar { h01: Homography },
    /// Camera `a` to camera `b`: `X_b = R X_a + t`.
    Epipolar {
        k0: Intrinsics,
        k2: Intrinsics,
        pose: PoseRecord,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchRunConfig {
    pub ckpt: Option<PathBuf>,
    pub a: Option<PathBuf>,
    pub b: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub max_keypoints: usize,
    pub min_similarity: Option<f32>,
    /// A planar match is correct below this reprojection error.
    pub planar_threshold_px: f64,
    /// An epipolar match is correct below this Sampson error.
    pub epipolar_threshold_px: f64,
    pub threads: usize,
}

impl Default for MatchRunConfig {
    fn default() -> Self {
        Self {
            ckpt: None,
            a: None,
            b: None,
            gt: None,
            max_keypoints: 1024,
            min_similarity: None,
            planar_threshold_px: 3.0,
            epipolar_threshold_px: 5.0,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub i: usize,
    pub j: usize,
    pub p0: [f32; 2],
    pub p1: [f32; 2],
    pub similarity: f32,
    /// Reprojection (planar) or Sampson (epipolar) error in pixels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_px: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchOutput {
    pub run: Value,
    pub keypoints: [usize; 2],
    pub matches: Vec<MatchRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<usize>,
}

/// Per-match error and threshold under the ground truth.
type ErrorFn = Box<dyn Fn(&Point, &Point) -> Option<f64>>;

fn error_model(gt: &GroundTruth, cfg: &MatchRunConfig) -> Result<(ErrorFn, f64)> {
    Ok(match gt {
        GroundTruth::Planar { h01 } => {
            let h = *h01;
            let f = move |a: &Point, b: &Point| {
                Some(reprojection_error(&Correspondence::from_points(*a, *b), &h))
            };
            (Box::new(f), cfg.planar_threshold_px)
        }
        GroundTruth::Epipolar { k0, k2, pose } => {
            let f = compose_fundamental(k0, k2, &pose.to_pose()?)?;
            let e = move |a: &Point, b: &Point| sampson_distance(&f, a, b).ok().map(f64::sqrt);
            (Box::new(e), cfg.epipolar_threshold_px)
        }
    })
}

pub(crate) fn match_pair(
    cli: &Cli,
    args: &MatchArgs,
    env: &dyn Fn(&str) -> Option<String>,
) -> Result<()> {
    let mut layers = env_overrides(env, None, "threads")?;
    if let Some(t) = cli.threads {
        layers.push(Override::flag("threads", t));
    }
    for (path, v) in [
        ("ckpt", &args.ckpt),
        ("a", &args.a),
        ("b", &args.b),
        ("gt", &args.gt),
    ] {
        if let Some(p) = v {
            layers.push(Override::flag(path, p.display().to_string()));
        }
    }
    if let Some(k) = args.max_kpts {
        layers.push(Override::flag("max_keypoints", k));
    }
    let cfg: MatchRunConfig = resolve(base_config(cli)?, &layers)?;
    check_threads(cfg.threads)?;
    let (ckpt, pa, pb) = (
        required(&cfg.ckpt, "ckpt", "--ckpt")?,
        required(&cfg.a, "a", "--a")?,
        required(&cfg.b, "b", "--b")?,
    );
    if args.out.extension().is_some_and(|e| e == "json") {
        bail!("--out names the SVG; the JSON match list is written next to it");
    }
    let gt: Option<GroundTruth> = match &cfg.gt {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let v: Value =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            Some(
                serde_path_to_error::deserialize(v)
                    .map_err(|e| anyhow!("{}: at `{}`: {}", p.display(), e.path(), e.inner()))?,
            )
        }
        None => None,
    };
    let (_, net) = load_network(ckpt)?;
    let a = load_cube(pa).with_context(|| format!("reading cube {}", pa.display()))?;
    let b = load_cube(pb).with_context(|| format!("reading cube {}", pb.display()))?;
    let oa = net.infer(&a, cfg.max_keypoints)?;
    let ob = net.infer(&b, cfg.max_keypoints)?;
    let matches = if oa.keypoints.is_empty() || ob.keypoints.is_empty() {
        vec![]
    } else {
        mnn_match(
            &similarity(&oa.descriptors, &ob.descriptors)?,
            cfg.min_similarity,
        )
    };
    let model = gt.as_ref().map(|g| error_model(g, &cfg)).transpose()?;
    let records: Vec<MatchRecord> = matches
        .iter()
        .map(|m| {
            let (p0, p1) = (oa.keypoints[m.i], ob.keypoints[m.j]);
            let (error_px, correct) = match &model {
                Some((err, thr)) => {
                    let pt = |p: [f32; 2]| Point::new(p[0] as f64, p[1] as f64);
                    let e = err(&pt(p0), &pt(p1));
                    (e, Some(e.is_some_and(|e| e < *thr)))
                }
                None => (None, None),
            };
            MatchRecord {
                i: m.i,
                j: m.j,
                p0,
                p1,
                similarity: m.similarity,
                error_px,
                correct,
            }
        })
        .collect();
    let mut run = provenance("match", &cfg)?;
    run["checkpoint_sha256"] = sha256_file(ckpt)?.into();
    let output = MatchOutput {
        run,
        keypoints: [oa.keypoints.len(), ob.keypoints.len()],
        correct: model
            .as_ref()
            .map(|_| records.iter().filter(|r| r.correct == Some(true)).count()),
        matches: records,
    };
    let lines: Vec<MatchLine> = output
        .matches
        .iter()
        .map(|r| MatchLine {
            p0: r.p0,
            p1: r.p1,
            correct: r.correct,
        })
        .collect();
    let caption = match output.correct {
        Some(c) => format!("{} matches, {c} correct", lines.len()),
        None => format!("{} matches", lines.len()),
    };
    let svg = matches_svg(&a, &b, &lines, &caption)?;
    write_atomic(
        &args.out.with_extension("json"),
        (serde_json::to_string_pretty(&output)? + "\n").as_bytes(),
    )?;
    write_atomic(&args.out, svg.as_bytes())?;
    println!("{caption}; wrote {}", args.out.display());
    Ok(())
}
