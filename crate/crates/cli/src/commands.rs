use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use kat_core::anchor_masks::{build_mask_stack, plot_points, write_mask_text};
use kat_core::bag_io::{read_bag, split_manifest, synth_dataset, write_bag, DatasetManifest, Split};
use kat_core::bench::scaling_report;
use kat_core::model::{load_model, save_model, ModelFile};
use kat_core::train::{evaluate, prepare_bags, train_with_observer, Metrics};

use crate::config::RunConfig;
use crate::CliError;

/// Kernel attention transformer runs: data synthesis, masks, training,
/// evaluation and cost reports.
#[derive(Debug, Parser)]
#[command(name = "kat", version)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic bags, a split manifest and the resolved config.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override a config key, `key=value`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Build the anchors and mask stack of one bag.
    Maskgen {
        #[arg(long)]
        bag: PathBuf,
        /// Desired patches per kernel.
        #[arg(long)]
        nk: Option<usize>,
        /// Number of mask scales; defaults to the block count.
        #[arg(long)]
        scales: Option<usize>,
        /// Anchor clustering seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write `scale m n value is_anchor` heatmap rows here.
        #[arg(long)]
        plot: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train on the manifest's train split with early stopping on val.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch history, one JSON object per line.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Evaluate a saved model on one split of a manifest.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Analytic FLOP and activation scaling report.
    Bench {
        /// Comma-separated patch counts.
        #[arg(long = "np", value_delimiter = ',', required = true)]
        n_p: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long, default_value_t = 256)]
        de: usize,
        #[arg(long, default_value_t = 8)]
        heads: usize,
        #[arg(long, default_value_t = 4)]
        blocks: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write `n_p ka_flops sa_flops` rows here.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { config, out, set } => synth(config.as_deref(), &out, &set),
        Command::Maskgen {
            bag,
            nk,
            scales,
            seed,
            out,
            plot,
            config,
            set,
        } => {
            let mut c = RunConfig::load(config.as_deref(), &set)?;
            if let Some(nk) = nk {
                c.set("nk", &nk.to_string())?;
            }
            if let Some(s) = scales {
                if !c.explicit.contains("blocks") {
                    c.set("blocks", &s.to_string())?;
                }
                c.set("scales", &s.to_string())?;
            }
            if let Some(seed) = seed {
                c.set("anchor_seed", &seed.to_string())?;
            }
            maskgen(&c, &bag, &out, plot.as_deref())
        }
        Command::Train {
            manifest,
            config,
            out,
            log,
            set,
        } => {
            let c = RunConfig::load(config.as_deref(), &set)?;
            train(c, &manifest, &out, log.as_deref())
        }
        Command::Eval { manifest, model, split } => eval(&manifest, &model, &split),
        Command::Bench {
            n_p,
            k,
            de,
            heads,
            blocks,
            out,
            plot,
        } => bench(&n_p, k, de, heads, blocks, out.as_deref(), plot.as_deref()),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::data(format!("{}: {e}", path.display()))
}

/// Prefixes file errors with the path they concern.
fn at<T>(path: &Path, r: kat_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| {
        let mut err = CliError::from(e);
        err.message = format!("{}: {}", path.display(), err.message);
        err
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Path of the resolved config written next to `out`.
fn beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".run.ini");
    out.with_file_name(name)
}

fn synth(config: Option<&Path>, out: &Path, set: &[String]) -> Result<(), CliError> {
    let c = RunConfig::load(config, set)?;
    let bags = synth_dataset(&c.synth())?;
    let bag_dir = out.join("bags");
    fs::create_dir_all(&bag_dir).map_err(|e| io_err(&bag_dir, e))?;
    for b in &bags {
        write_bag(b, bag_dir.join(format!("{}.katb", b.id)))?;
    }
    let (manifest, warnings) = split_manifest(&bags, c.n_classes, c.split, c.split_seed, |b| {
        PathBuf::from("bags").join(format!("{}.katb", b.id))
    })?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let mpath = out.join("manifest.txt");
    at(&mpath, manifest.write(&mpath))?;
    write_file(&out.join("run.ini"), &c.to_text())?;
    println!(
        "wrote {} bags to {} (train {}, val {}, test {})",
        bags.len(),
        out.display(),
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        manifest.count(Split::Test)
    );
    Ok(())
}

fn maskgen(c: &RunConfig, bag_path: &Path, out: &Path, plot: Option<&Path>) -> Result<(), CliError> {
    let scales = c.scales()?;
    let bag = at(bag_path, read_bag(bag_path))?;
    let (anchors, stack) = build_mask_stack(&bag.grid, c.nk, scales, c.anchor_seed)?;
    let file = fs::File::create(out).map_err(|e| io_err(out, e))?;
    let mut w = BufWriter::new(file);
    write_mask_text(&mut w, &anchors, &stack)?;
    w.flush().map_err(|e| io_err(out, e))?;
    if let Some(p) = plot {
        let mut s = String::from("# scale m n value is_anchor\n");
        for pt in plot_points(&bag.grid, &anchors, &stack) {
            let _ = writeln!(
                s,
                "{} {} {} {:e} {}",
                pt.scale,
                pt.m,
                pt.n,
                pt.value,
                u8::from(pt.is_anchor)
            );
        }
        write_file(p, &s)?;
    }
    write_file(&beside(out), &c.to_text())?;
    println!(
        "{}: {} patches, {} kernels, {} scales -> {}",
        bag.id,
        bag.n_patches(),
        anchors.len(),
        stack.n_scales(),
        out.display()
    );
    Ok(())
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn train(mut c: RunConfig, manifest_path: &Path, out: &Path, log: Option<&Path>) -> Result<(), CliError> {
    let manifest = at(manifest_path, DatasetManifest::read(manifest_path))?;
    for (key, ours, theirs) in [
        ("d_f", c.d_f, manifest.d_f),
        ("n_classes", c.n_classes, manifest.n_classes),
    ] {
        if c.explicit.contains(key) && ours != theirs {
            return Err(CliError::usage(format!(
                "{key} = {ours} contradicts the manifest's {theirs}"
            )));
        }
    }
    c.d_f = manifest.d_f;
    c.n_classes = manifest.n_classes;
    let model = c.model()?;
    let settings = c.masks()?;
    let tc = c.train()?;

    let base = manifest_dir(manifest_path);
    let train_bags = prepare_bags(&manifest.load_split(&base, Split::Train)?, &settings)?;
    let val_bags = prepare_bags(&manifest.load_split(&base, Split::Val)?, &settings)?;

    let mut log_file = match log {
        Some(p) => Some(BufWriter::new(fs::File::create(p).map_err(|e| io_err(p, e))?)),
        None => None,
    };
    let mut log_error = None;
    let (params, history) = train_with_observer(&train_bags, &val_bags, &model, &tc, |r| {
        eprintln!(
            "epoch {:>4}  train loss {:.5}  val loss {:.5}  val acc {:.3}",
            r.epoch, r.train_loss, r.val_loss, r.val_accuracy
        );
        if let (Some(f), None) = (log_file.as_mut(), log_error.as_ref()) {
            let line = serde_json::to_string(r).expect("plain record");
            if let Err(e) = writeln!(f, "{line}") {
                log_error = Some(e);
            }
        }
    })?;
    if let (Some(p), Some(e)) = (log, log_error) {
        return Err(io_err(p, e));
    }
    if let (Some(p), Some(mut f)) = (log, log_file) {
        f.flush().map_err(|e| io_err(p, e))?;
    }

    let file = ModelFile {
        config: model,
        masks: settings,
        params,
    };
    at(out, save_model(&file, out))?;
    write_file(&beside(out), &c.to_text())?;
    let best = history.best().expect("history has the best epoch");
    println!(
        "best epoch {} of {}{}: val loss {:.5}, val acc {:.3} -> {}",
        history.best_epoch,
        history.epochs.len(),
        if history.stopped_early { " (early stop)" } else { "" },
        best.val_loss,
        best.val_accuracy,
        out.display()
    );
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"))
}

pub fn metrics_table(split: Split, m: &Metrics) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<6} {:>5} {:>6} {:>6} {:>6} {:>8}",
        "split", "bags", "Acc.", "mAUC", "wAUC", "loss"
    );
    let _ = writeln!(
        s,
        "{:<6} {:>5} {:>6.3} {:>6} {:>6} {:>8.4}",
        split.as_str(),
        m.n_bags,
        m.accuracy,
        fmt_opt(m.macro_auc),
        fmt_opt(m.weighted_auc),
        m.loss
    );
    for (c, auc) in m.per_class_auc.iter().enumerate() {
        let note = if m.absent_classes.contains(&c) { " (absent)" } else { "" };
        let _ = writeln!(s, "class {c} AUC {}{note}", fmt_opt(*auc));
    }
    s
}

fn eval(manifest_path: &Path, model_path: &Path, split: &str) -> Result<(), CliError> {
    let split: Split = split
        .parse()
        .map_err(|e: kat_core::KatError| CliError::usage(e.to_string()))?;
    let manifest = at(manifest_path, DatasetManifest::read(manifest_path))?;
    let model = at(model_path, load_model(model_path))?;
    if manifest.d_f != model.config.d_f || manifest.n_classes != model.config.n_classes {
        return Err(CliError::data(format!(
            "manifest has {} classes of width {}, model expects {} of width {}",
            manifest.n_classes, manifest.d_f, model.config.n_classes, model.config.d_f
        )));
    }
    let bags = manifest.load_split(manifest_dir(manifest_path), split)?;
    if bags.is_empty() {
        return Err(CliError::data(format!("split '{split}' is empty")));
    }
    let prepared = prepare_bags(&bags, &model.masks)?;
    let m = evaluate(&model.params, &prepared, &model.config)?;
    print!("{}", metrics_table(split, &m));
    Ok(())
}

fn bench(
    n_p: &[usize],
    k: usize,
    de: usize,
    heads: usize,
    blocks: usize,
    out: Option<&Path>,
    plot: Option<&Path>,
) -> Result<(), CliError> {
    let report = scaling_report(n_p, k, de, heads, blocks)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(p) = out {
        write_file(p, &text)?;
    }
    if let Some(p) = plot {
        write_file(p, &report.to_plot())?;
    }
    Ok(())
}
