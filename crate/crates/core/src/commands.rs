//! Implementations behind the CLI subcommands. Each function does the file
//! work and returns the text the binary prints, so outputs stay
//! deterministic and testable (no timestamps, no machine state).

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Write as _};
use std::path::Path;

use serde::Serialize;

use crate::checks::{self, all_pass, CheckResult};
use crate::error::{Error, Result};
use crate::formats::{
    load_checkpoint, load_dataset, read_tangent, save_checkpoint, write_dataset, write_tangent,
    TangentFile, TEST_TENSOR_FILE, TRAIN_TENSOR_FILE,
};
use crate::model::{
    build_model, default_reference, evaluate, preprocess_sequences, run_ablation, run_projections,
    run_variants, train, GridRow, KShapeNetConfig, Metrics,
};
use crate::synth::{synth_generate, SyntheticSpec};

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Resolve the synthetic spec: a config file if given, otherwise the desk
/// benchmark defaults (3 classes, 20+10 sequences each, 8 joints, noise
/// 0.02); `seed`/`frames` flags override either source.
pub fn resolve_synth_spec(
    config: Option<&Path>,
    seed: Option<u64>,
    frames: Option<usize>,
) -> Result<SyntheticSpec> {
    let mut spec: SyntheticSpec = match config {
        Some(path) => read_json(path)?,
        None => SyntheticSpec::with_random_classes(3, 8, 20, 10, 55, 0.02, seed.unwrap_or(0))?,
    };
    if let Some(s) = seed {
        if config.is_some() {
            spec.seed = s;
        }
    }
    if let Some(f) = frames {
        spec.frames = f;
    }
    spec.validate()?;
    Ok(spec)
}

/// `synth`: generate a dataset directory (manifest + sequence file).
pub fn cmd_synth(
    out_dir: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    frames: Option<usize>,
) -> Result<String> {
    let spec = resolve_synth_spec(config, seed, frames)?;
    let ds = synth_generate(&spec)?;
    write_dataset(out_dir, &ds)?;
    Ok(format!(
        "wrote {} train + {} test sequences ({} classes, {} joints, {} frames, noise {}) to {}\n",
        ds.train.len(),
        ds.test.len(),
        spec.classes.len(),
        spec.joints,
        spec.frames,
        spec.noise,
        out_dir.display()
    ))
}

/// Resolve the model config for a dataset: a config file if given, else
/// desk-scale defaults; joint and class counts always come from the
/// manifest; `seed`/`frames`/`epochs` flags override.
pub fn resolve_model_config(
    config: Option<&Path>,
    joints: usize,
    classes: usize,
    seed: Option<u64>,
    frames: Option<usize>,
    epochs: Option<usize>,
) -> Result<KShapeNetConfig> {
    let mut cfg: KShapeNetConfig = match config {
        Some(path) => read_json(path)?,
        None => KShapeNetConfig::desk_scale(),
    };
    cfg.joints = joints;
    cfg.classes = classes;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(f) = frames {
        cfg.frames = f;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `preprocess`: raw dataset directory to train/test tangent-tensor files.
pub fn cmd_preprocess(
    data: &Path,
    out_dir: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    frames: Option<usize>,
) -> Result<String> {
    let ds = load_dataset(data)?;
    let cfg = resolve_model_config(config, ds.joints, ds.classes.len(), seed, frames, None)?;
    let reference = default_reference(&ds.train)?;
    let train_set = preprocess_sequences(&ds.train, &cfg, &reference)?;
    let test_set = preprocess_sequences(&ds.test, &cfg, &reference)?;
    std::fs::create_dir_all(out_dir)?;
    write_tangent(
        &out_dir.join(TRAIN_TENSOR_FILE),
        &TangentFile {
            config: cfg.clone(),
            reference: reference.clone(),
            dataset: train_set,
        },
    )?;
    write_tangent(
        &out_dir.join(TEST_TENSOR_FILE),
        &TangentFile {
            config: cfg.clone(),
            reference,
            dataset: test_set,
        },
    )?;
    Ok(format!(
        "encoded {} + {} sequences as {} x {} rows (projection {}, align {}) into {}\n",
        ds.train.len(),
        ds.test.len(),
        cfg.frames,
        cfg.features(),
        cfg.projection,
        cfg.align,
        out_dir.display()
    ))
}

fn format_metrics(m: &Metrics) -> String {
    let mut out = String::new();
    let first = m.epoch_loss.first().copied().unwrap_or(f64::NAN);
    let last = m.epoch_loss.last().copied().unwrap_or(f64::NAN);
    let _ = writeln!(
        out,
        "epochs {}  loss {:.6} -> {:.6}",
        m.epoch_loss.len(),
        first,
        last
    );
    let _ = writeln!(
        out,
        "train accuracy {:.4}  test accuracy {:.4}",
        m.train.accuracy, m.test.accuracy
    );
    let _ = writeln!(out, "test confusion (rows = true class):");
    for row in m.test.confusion.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>5}")).collect();
        let _ = writeln!(out, "  {}", cells.join(" "));
    }
    out
}

/// `train`: tangent tensors to a trained checkpoint. The configuration is
/// the one stored in the tangent header, with optional flag overrides.
pub fn cmd_train(
    data: &Path,
    out: &Path,
    epochs: Option<usize>,
    seed: Option<u64>,
) -> Result<String> {
    let train_file = read_tangent(&data.join(TRAIN_TENSOR_FILE))?;
    let test_file = read_tangent(&data.join(TEST_TENSOR_FILE))?;
    let mut cfg = train_file.config.clone();
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let mut model = build_model(&cfg, &train_file.reference)?;
    let metrics = train(&mut model, &train_file.dataset, &test_file.dataset)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_checkpoint(out, &model)?;
    Ok(format!(
        "{}checkpoint written to {}\n",
        format_metrics(&metrics),
        out.display()
    ))
}

#[derive(Serialize)]
struct EvalReport {
    accuracy: f64,
    confusion: Vec<Vec<u64>>,
}

/// `eval`: classify the test split of a preprocessed directory (or a single
/// tangent file) with a checkpoint.
pub fn cmd_eval(model_path: &Path, data: &Path, out: Option<&Path>) -> Result<String> {
    let model = load_checkpoint(model_path)?;
    let tangent_path = if data.is_dir() {
        data.join(TEST_TENSOR_FILE)
    } else {
        data.to_path_buf()
    };
    let file = read_tangent(&tangent_path)?;
    if file.config.frames != model.config().frames
        || file.config.features() != model.config().features()
    {
        return Err(Error::InvalidDimension(format!(
            "tangent file is {} x {}, checkpoint expects {} x {}",
            file.config.frames,
            file.config.features(),
            model.config().frames,
            model.config().features()
        )));
    }
    let eval = evaluate(&model, &file.dataset)?;
    let mut text = format!("accuracy {:.4}\nconfusion (rows = true class):\n", eval.accuracy);
    for row in eval.confusion.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>5}")).collect();
        let _ = writeln!(text, "  {}", cells.join(" "));
    }
    if let Some(path) = out {
        let report = EvalReport {
            accuracy: eval.accuracy,
            confusion: eval
                .confusion
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
        };
        let mut f = std::io::BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut f, &report)?;
        f.write_all(b"\n")?;
        f.flush()?;
    }
    Ok(text)
}

fn format_grid(title: &str, rows: &[GridRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let _ = writeln!(
        out,
        "{:<20} {:>10} {:>10} {:>12}",
        "configuration", "train_acc", "test_acc", "final_loss"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<20} {:>10.4} {:>10.4} {:>12.6}",
            r.name,
            r.metrics.train.accuracy,
            r.metrics.test.accuracy,
            r.metrics.epoch_loss.last().copied().unwrap_or(f64::NAN)
        );
    }
    out
}

fn run_grid(
    kind: &str,
    data: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    frames: Option<usize>,
    epochs: Option<usize>,
    out: Option<&Path>,
) -> Result<String> {
    let ds = load_dataset(data)?;
    let cfg = resolve_model_config(config, ds.joints, ds.classes.len(), seed, frames, epochs)?;
    let (title, rows) = match kind {
        "ablate" => ("ablation grid", run_ablation(&cfg, &ds.train, &ds.test)?),
        "variants" => (
            "transformation layer variants",
            run_variants(&cfg, &ds.train, &ds.test)?,
        ),
        "projections" => (
            "tangent projection variants",
            run_projections(&cfg, &ds.train, &ds.test)?,
        ),
        other => return Err(Error::Format(format!("unknown grid '{other}'"))),
    };
    let table = format_grid(title, &rows);
    if let Some(path) = out {
        let mut f = std::io::BufWriter::new(File::create(path)?);
        f.write_all(table.as_bytes())?;
        f.flush()?;
    }
    Ok(table)
}

/// `ablate`: baseline / transform-only / projection-only / full.
pub fn cmd_ablate(
    data: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    frames: Option<usize>,
    epochs: Option<usize>,
    out: Option<&Path>,
) -> Result<String> {
    run_grid("ablate", data, config, seed, frames, epochs, out)
}

/// `variants`: the four transformation-layer variants.
pub fn cmd_variants(
    data: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    frames: Option<usize>,
    epochs: Option<usize>,
    out: Option<&Path>,
) -> Result<String> {
    run_grid("variants", data, config, seed, frames, epochs, out)
}

/// `projections`: common-reference, first-frame and shooting-vector
/// encodings.
pub fn cmd_projections(
    data: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    frames: Option<usize>,
    epochs: Option<usize>,
    out: Option<&Path>,
) -> Result<String> {
    run_grid("projections", data, config, seed, frames, epochs, out)
}

/// `check`: run property suites; the bool is "all passed".
pub fn cmd_check(suite: &str, seed: u64) -> Result<(String, bool)> {
    let results: Vec<CheckResult> = match suite {
        "geometry" => checks::geometry_suite(seed),
        "gradients" => checks::gradient_suite(seed),
        "all" => {
            let mut r = checks::geometry_suite(seed);
            r.extend(checks::gradient_suite(seed));
            r.extend(checks::pipeline_suite(seed));
            r
        }
        other => {
            return Err(Error::Format(format!(
                "unknown check suite '{other}' (expected geometry, gradients or all)"
            )))
        }
    };
    let mut text = String::new();
    for r in &results {
        let _ = writeln!(text, "{r}");
    }
    let ok = all_pass(&results);
    let _ = writeln!(
        text,
        "{}: {}/{} checks passed",
        if ok { "OK" } else { "FAILED" },
        results.iter().filter(|r| r.pass).count(),
        results.len()
    );
    Ok((text, ok))
}
