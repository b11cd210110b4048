//! Command-line front end. Results go to stdout (JSON with `--json`),
//! diagnostics to stderr.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::model::{count_params, forward_macs, CmNext, ModelConfig};
use crate::sensors::io::{
    format_evt, format_xyz, parse_evt, parse_xyz, read_depth_pgm, read_frame_tsr1, read_ppm, read_text,
    write_frame_tsr1, write_ppm, write_text,
};
use crate::sensors::{
    corrupt_event_lowres, corrupt_exposure, corrupt_lidar_jitter, corrupt_motion_blur, depth_to_frame, depth_to_hha,
    events_to_frame, lidar_to_frame, CameraIntrinsics, FrameKind, JitterConfig, ModalityFrame,
};
use crate::synth::{make_split, Dataset, DatasetSpec, CLEAN};
use crate::tensor::Tensor;
use crate::train::{evaluate, thread_pool, train, TrainConfig};
use crate::verify::{gradcheck_all, selftest, Check, GRAD_BLOCKS};

#[derive(Parser, Debug)]
#[command(name = "amfuse", version, about = "Arbitrary-modal segmentation toolkit")]
struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Turn a raw sensor file into a 3-channel frame (.ppm or .tsr).
    Convert(ConvertArgs),
    /// Apply a sensor failure simulator.
    Corrupt(CorruptArgs),
    /// Generate a synthetic dataset from a JSON spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes metrics.jsonl, model.nnz and model.json.
    Train {
        /// JSON with `model` and `train` sections.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate weights on a dataset split.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Model config; defaults to model.json next to the weights.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long, value_enum, default_value_t = GroupBy::Corruption)]
        group_by: GroupBy,
    },
    /// Parameter count and per-modality increment of a model config.
    Params {
        #[arg(long)]
        config: PathBuf,
        /// Also report multiply-accumulates at this square input size.
        #[arg(long)]
        size: Option<usize>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// Check every block.
        #[arg(long, conflicts_with = "block")]
        all: bool,
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(GRAD_BLOCKS))]
        block: Option<String>,
        /// Number of consecutive seeds, starting at `--seed`.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Run the brute-force oracle suites.
    Selftest,
}

#[derive(Args, Debug)]
struct ConvertArgs {
    #[arg(long, value_enum)]
    kind: ConvertKind,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Square frame side for event and lidar inputs.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, default_value_t = 90.0)]
    fov: f64,
    #[arg(long, default_value_t = 100.0)]
    depth_max: f64,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ConvertKind {
    Depth,
    Event,
    Lidar,
    Hha,
}

#[derive(Args, Debug)]
struct CorruptArgs {
    #[arg(long, value_enum)]
    mode: CorruptMode,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Blur kernel length in pixels.
    #[arg(long, default_value_t = 7)]
    length: usize,
    /// Blur direction in degrees.
    #[arg(long, default_value_t = 0.0)]
    angle: f64,
    /// Exposure gain; defaults to 3.0 for oe and 0.3 for ue.
    #[arg(long)]
    gain: Option<f64>,
    /// Event downscaling factor.
    #[arg(long, default_value_t = 0.25)]
    factor: f64,
    /// Sensor frame side, needed by el.
    #[arg(long)]
    size: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum CorruptMode {
    Mb,
    Oe,
    Ue,
    Lj,
    El,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum GroupBy {
    Corruption,
    None,
}

/// Contents of `train --config`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Accepts a bare model config or a run config with a `model` section.
fn load_model_config(path: &Path) -> Result<ModelConfig> {
    let text = read_text(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let model = value.get("model").cloned().unwrap_or(value);
    let cfg: ModelConfig =
        serde_json::from_value(model).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn need_size(size: Option<usize>, what: &str) -> Result<usize> {
    size.filter(|&s| s > 0)
        .ok_or_else(|| Error::Usage(format!("{what} needs --size")))
}

fn is_tsr(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "tsr")
}

fn write_frame(path: &Path, frame: &ModalityFrame) -> Result<()> {
    if is_tsr(path) {
        write_frame_tsr1(path, frame)
    } else {
        write_ppm(path, frame)
    }
}

fn read_depth(path: &Path) -> Result<Tensor> {
    if is_tsr(path) {
        Tensor::from_tsr1_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    } else {
        read_depth_pgm(path)
    }
}

fn read_rgb(path: &Path) -> Result<ModalityFrame> {
    if is_tsr(path) {
        read_frame_tsr1(path, FrameKind::Rgb)
    } else {
        read_ppm(path, FrameKind::Rgb)
    }
}

fn convert(a: &ConvertArgs) -> Result<serde_json::Value> {
    let frame = match a.kind {
        ConvertKind::Depth => depth_to_frame(&read_depth(&a.input)?, a.depth_max)?,
        ConvertKind::Hha => {
            let depth = read_depth(&a.input)?;
            let [h, w] = *depth.shape() else {
                return Err(Error::dim("depth", "expected an H x W map"));
            };
            depth_to_hha(&depth, &CameraIntrinsics::new(a.fov, w, h)?)?
        }
        ConvertKind::Event => {
            let s = need_size(a.size, "event conversion")?;
            events_to_frame(&parse_evt(&read_text(&a.input)?)?, s, s)?
        }
        ConvertKind::Lidar => {
            let s = need_size(a.size, "lidar conversion")?;
            let cam = CameraIntrinsics::new(a.fov, s, s)?;
            let ident = crate::sensors::convert::IDENTITY;
            lidar_to_frame(&parse_xyz(&read_text(&a.input)?)?, &cam, &ident, &[0.0; 3])?.frame
        }
    };
    write_frame(&a.out, &frame)?;
    Ok(json!({
        "kind": frame.kind.name(),
        "height": frame.height(),
        "width": frame.width(),
        "out": a.out.display().to_string(),
    }))
}

fn corrupt(a: &CorruptArgs, seed: u64) -> Result<serde_json::Value> {
    match a.mode {
        CorruptMode::Mb => {
            let f = corrupt_motion_blur(&read_rgb(&a.input)?, a.length, a.angle)?;
            write_frame(&a.out, &f)?;
            Ok(json!({ "mode": "MB", "length": a.length, "angle_deg": a.angle }))
        }
        CorruptMode::Oe | CorruptMode::Ue => {
            let over = matches!(a.mode, CorruptMode::Oe);
            let gain = a.gain.unwrap_or(if over { 3.0 } else { 0.3 });
            if over != (gain >= 1.0) {
                return Err(Error::Usage(format!("gain {gain} contradicts the requested mode")));
            }
            let f = corrupt_exposure(&read_rgb(&a.input)?, gain)?;
            write_frame(&a.out, &f)?;
            Ok(json!({ "mode": if over { "OE" } else { "UE" }, "gain": gain }))
        }
        CorruptMode::Lj => {
            let (cloud, s) = corrupt_lidar_jitter(&parse_xyz(&read_text(&a.input)?)?, seed, &JitterConfig::default())?;
            write_text(&a.out, &format_xyz(&cloud))?;
            Ok(json!({
                "mode": "LJ",
                "seed": seed,
                "angles_deg": s.angles_deg,
                "translation_m": s.translation_m,
            }))
        }
        CorruptMode::El => {
            let s = need_size(a.size, "el")?;
            let (low, lw, lh) = corrupt_event_lowres(&parse_evt(&read_text(&a.input)?)?, s, s, a.factor)?;
            write_text(&a.out, &format_evt(&low))?;
            Ok(json!({ "mode": "EL", "factor": a.factor, "width": lw, "height": lh, "events": low.events.len() }))
        }
    }
}

fn synth(spec_path: &Path, out: &Path, seed: Option<u64>) -> Result<serde_json::Value> {
    let mut spec: DatasetSpec = parse_json(spec_path)?;
    if let Some(s) = seed {
        spec.scene.seed = s;
    }
    let m = make_split(&spec, out)?;
    let splits: serde_json::Map<String, serde_json::Value> =
        m.splits.iter().map(|(k, v)| (k.clone(), json!(v.len()))).collect();
    Ok(json!({ "out": out.display().to_string(), "splits": splits, "corruptions": m.corruptions }))
}

fn run_train(config: &Path, data: &Path, out: &Path, seed: Option<u64>, quiet: bool) -> Result<serde_json::Value> {
    let mut rc: RunConfig = parse_json(config)?;
    rc.model.validate()?;
    if let Some(s) = seed {
        rc.train.seed = s;
    }
    rc.train.validate()?;
    let ds = Dataset::open(data)?;
    let train_set = ds.load_training("train", &rc.model.modalities)?;
    let val_set = match ds.entries("val") {
        Ok(e) if !e.is_empty() => ds.load("val", CLEAN, &rc.model.modalities)?,
        _ => Vec::new(),
    };
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let metrics_path = out.join("metrics.jsonl");
    let mut metrics = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let model = CmNext::new(rc.model.clone(), rc.train.seed)?;
    let (model, logs) = train(model, &train_set, &val_set, &rc.train, |log| {
        let line = serde_json::to_string(log).expect("log serialises");
        writeln!(metrics, "{line}").map_err(|e| Error::io(&metrics_path, e))?;
        if !quiet {
            eprintln!(
                "epoch {:>3}  loss {:.4}  lr {:.2e}  acc {:.4}{}",
                log.epoch,
                log.loss,
                log.lr,
                log.pixel_accuracy,
                log.val_miou.map_or(String::new(), |m| format!("  val mIoU {m:.4}"))
            );
        }
        Ok(())
    })?;
    let weights = out.join("model.nnz");
    fs::write(&weights, model.to_nnz()).map_err(|e| Error::io(&weights, e))?;
    write_text(&out.join("model.json"), &(rc.model.to_json() + "\n"))?;
    Ok(json!({
        "weights": weights.display().to_string(),
        "epochs": logs.len(),
        "final": logs.last(),
    }))
}

fn run_eval(
    weights: &Path,
    data: &Path,
    config: Option<&Path>,
    split: &str,
    group_by: GroupBy,
) -> Result<crate::train::EvalReport> {
    let cfg_path = config.map_or_else(|| weights.with_file_name("model.json"), Path::to_path_buf);
    let cfg = load_model_config(&cfg_path)?;
    let bytes = fs::read(weights).map_err(|e| Error::io(weights, e))?;
    let model = CmNext::from_nnz(&bytes, cfg)?;
    let ds = Dataset::open(data)?;
    let conditions = match group_by {
        GroupBy::Corruption => ds.conditions(),
        GroupBy::None => vec![CLEAN.to_string()],
    };
    let groups = conditions
        .into_iter()
        .map(|c| {
            let ex = ds.load(split, &c, &model.config().modalities)?;
            Ok((c, ex))
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate(&model, &groups)
}

fn params(config: &Path, size: Option<usize>) -> Result<serde_json::Value> {
    let cfg = load_model_config(config)?;
    let pc = count_params(&cfg)?;
    let mut v = json!({
        "total": pc.total,
        "per_modality_increment": pc.per_modality_increment,
        "modalities": cfg.modalities,
    });
    if let Some(s) = size {
        let rgb = forward_macs(&cfg.with_modalities(vec![cfg.modalities[0].clone()]), s, s)?;
        v["macs"] = json!(forward_macs(&cfg, s, s)?);
        v["macs_rgb_only"] = json!(rgb);
        v["macs_per_modality_increment"] = json!(forward_macs(&cfg.with_extra_modality(), s, s)? - forward_macs(&cfg, s, s)?);
    }
    Ok(v)
}

fn checks_output(checks: &[Check], json_out: bool) -> Result<()> {
    if json_out {
        println!("{}", serde_json::to_string_pretty(checks).expect("checks serialise"));
    } else {
        for c in checks {
            println!(
                "{:<22} {:>5} cases  max error {:.3e}  tol {:.0e}  {}",
                c.name,
                c.cases,
                c.max_error,
                c.tolerance,
                if c.passed { "ok" } else { "FAILED" }
            );
        }
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Error::Data(format!("{failed} check(s) failed")));
    }
    Ok(())
}

fn print_value(v: &serde_json::Value, json_out: bool) {
    if json_out {
        println!("{}", serde_json::to_string_pretty(v).expect("value serialises"));
    } else if let Some(obj) = v.as_object() {
        for (k, val) in obj {
            println!("{k}: {val}");
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Convert(a) => print_value(&convert(&a)?, cli.json),
        Command::Corrupt(a) => print_value(&corrupt(&a, seed)?, cli.json),
        Command::Synth { spec, out } => print_value(&synth(&spec, &out, cli.seed)?, cli.json),
        Command::Train { config, data, out } => {
            let v = thread_pool()?.install(|| run_train(&config, &data, &out, cli.seed, cli.json))?;
            print_value(&v, cli.json);
        }
        Command::Eval {
            weights,
            data,
            config,
            split,
            group_by,
        } => {
            let r = thread_pool()?.install(|| run_eval(&weights, &data, config.as_deref(), &split, group_by))?;
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&r).expect("report serialises"));
            } else {
                print!("{}", r.table());
            }
        }
        Command::Params { config, size } => print_value(&params(&config, size)?, cli.json),
        Command::Gradcheck { all, block, seeds } => {
            let blocks: Vec<&str> = match (all, block.as_deref()) {
                (_, Some(b)) => vec![b],
                (true, None) => GRAD_BLOCKS.to_vec(),
                (false, None) => return Err(Error::Usage("gradcheck needs --all or --block".into())),
            };
            let list: Vec<u64> = (seed..seed + seeds.max(1)).collect();
            let checks = thread_pool()?.install(|| gradcheck_all(&blocks, &list))?;
            checks_output(&checks, cli.json)?;
        }
        Command::Selftest => checks_output(&selftest(seed)?, cli.json)?,
    }
    Ok(())
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    1
                }
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(run(["amfuse", "selftest", "--bogus"]), 1);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(["amfuse", "params", "--help"]), 0);
    }

    #[test]
    fn gradcheck_requires_a_target() {
        assert_eq!(run(["amfuse", "gradcheck"]), 1);
    }

    #[test]
    fn command_tree_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
