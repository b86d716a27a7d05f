use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use urbanmap::config::Config;
use urbanmap::error::{Error, Result};
use urbanmap::fixtures::{synth_timeseries, write_scene, SceneSpec};
use urbanmap::io::{self, Layout, Quarter, RasterFormat};
use urbanmap::labels;
use urbanmap::orchestrator::{
    read_log, resume_pending, run_pipeline, shard_manifest, Manifest, WorkItem, WorkerLog,
    MANIFEST_VERSION,
};
use urbanmap::report::{change_geojson, static_report, stability_rows};
use urbanmap_core::changedet::{growth_mask_p95, vectorize_8conn, volume_delta};
use urbanmap_core::grid::parse_quad_id;
use urbanmap_core::labelgen::{split_quads, HeightUnits, LabelConfig, LabelResampling, MAX_HEIGHT_M};
use urbanmap_core::{QuadId, QuadRaster};

#[derive(Parser)]
#[command(name = "urbanmap", version, about = "Quarterly building density and height products")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Global {
    /// JSON file overriding the default thresholds.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Flat rank, `node * gpus_per_node + gpu` on multi-GPU nodes.
    #[arg(long, global = true, default_value_t = 0)]
    rank: usize,
    #[arg(long, global = true, default_value_t = 1)]
    world_size: usize,
    /// NDJSON progress log to append to.
    #[arg(long, global = true)]
    log: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Tif,
    Tgrd,
}

impl From<Format> for RasterFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Tif => RasterFormat::GeoTiff,
            Format::Tgrd => RasterFormat::Tgrd,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Units {
    Meters,
    Normalized,
}

#[derive(Clone, Copy, ValueEnum)]
enum Resampling {
    Bilinear,
    Nearest,
}

#[derive(Subcommand)]
enum Command {
    /// Build 512x512 label quads from gridded footprint/height sources.
    Labelgen {
        /// 2-band source rasters (density, height).
        #[arg(long = "source", required = true, num_args = 1..)]
        sources: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "meters")]
        height_units: Units,
        #[arg(long, value_enum, default_value = "bilinear")]
        resampling: Resampling,
        /// Quads to label; defaults to every quad the sources overlap.
        #[arg(long = "quad", num_args = 1..)]
        quads: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "tif")]
        format: Format,
        /// Also write splits.json with train/val/test fractions, e.g. 0.8,0.1,0.1.
        #[arg(long, value_delimiter = ',')]
        split: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run aggregation, masking and agreement over this rank's manifest shard.
    Postprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "tif")]
        format: Format,
    },
    /// Static metrics of a product against a reference raster.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Reference binarization threshold; defaults to pred_thr.
        #[arg(long)]
        ref_thr: Option<f32>,
        /// Write the JSON report here as well.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Temporal stability of annual density snapshots.
    Stability {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value = io::PRODUCT)]
        product: String,
        /// Chronological quarters, one per year, e.g. 2019q4,2020q4,2021q4.
        #[arg(long, value_delimiter = ',', required = true)]
        quarters: Vec<String>,
        /// Defaults to every quad present in the first quarter.
        #[arg(long = "quad", num_args = 1..)]
        quads: Vec<String>,
        #[arg(long, value_enum, default_value = "tif")]
        format: Format,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Growth polygons between two 2-band products of the same quad.
    Change {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write this rank's share of a manifest.
    Shard {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the manifest items that no log marks as successful.
    Resume {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long = "logs", required = true, num_args = 1..)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic scene and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        quads: u32,
        #[arg(long, default_value_t = 8)]
        quarters: usize,
        /// Add prediction noise and clouds.
        #[arg(long)]
        noisy: bool,
        #[arg(long, value_enum, default_value = "tif")]
        format: Format,
    },
}

fn parse_quads(names: &[String]) -> Result<Vec<QuadId>> {
    names.iter().map(|n| Ok(parse_quad_id(n)?)).collect()
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    io::write_atomic(path, s.as_bytes())
}

/// Quad ids named by the files in `dir`.
fn discover_quads(dir: &Path, format: RasterFormat) -> Result<Vec<QuadId>> {
    let mut quads = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().and_then(|e| e.to_str()) != Some(format.extension()) {
            continue;
        }
        if let Some(q) = p.file_stem().and_then(|s| s.to_str()).and_then(|s| parse_quad_id(s).ok()) {
            quads.push(q);
        }
    }
    quads.sort();
    Ok(quads)
}

fn meters(r: &QuadRaster, band: usize) -> QuadRaster {
    r.extract_band(band).map_valid(|v| v * MAX_HEIGHT_M)
}

/// Returns whether every work item succeeded.
fn run(cli: Cli) -> Result<bool> {
    let g = cli.global;
    let cfg = match &g.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match cli.cmd {
        Command::Labelgen {
            sources,
            height_units,
            resampling,
            quads,
            out,
            format,
            split,
            seed,
        } => {
            let units = match height_units {
                Units::Meters => HeightUnits::Meters,
                Units::Normalized => HeightUnits::Normalized,
            };
            let loaded = labels::load_sources(&sources, units)?;
            let all = if quads.is_empty() {
                labels::covered_quads(&loaded)
            } else {
                parse_quads(&quads)?
            };
            if g.rank >= g.world_size {
                return Err(Error::Config(format!("rank {} is not in 0..{}", g.rank, g.world_size)));
            }
            let mine: Vec<QuadId> = all.iter().skip(g.rank).step_by(g.world_size).copied().collect();
            let lcfg = LabelConfig {
                resampling: match resampling {
                    Resampling::Bilinear => LabelResampling::Bilinear,
                    Resampling::Nearest => LabelResampling::Nearest,
                },
            };
            let layout = Layout {
                root: out.clone(),
                format: format.into(),
            };
            let n = labels::write_labels(&mine, &loaded, &lcfg, &layout, g.workers)?;
            log::info!("wrote {n} label quads");
            if let Some(f) = split {
                if f.len() != 3 {
                    return Err(Error::Config("--split takes train,val,test fractions".into()));
                }
                let s = split_quads(&all, [f[0], f[1], f[2]], seed)?;
                let names = |v: &[QuadId]| v.iter().map(|q| q.name()).collect::<Vec<_>>();
                write_json(
                    &out.join("splits.json"),
                    &serde_json::json!({
                        "seed": seed,
                        "train": names(&s.train),
                        "val": names(&s.val),
                        "test": names(&s.test),
                    }),
                )?;
            }
            println!("{n}");
            Ok(true)
        }
        Command::Postprocess {
            manifest,
            input,
            output,
            format,
        } => {
            let m = Manifest::load(&manifest)?;
            let shard = shard_manifest(&m, g.world_size, g.rank)?;
            let layout = |root: PathBuf| Layout {
                root,
                format: format.into(),
            };
            let log = g.log.as_ref().map(WorkerLog::open).transpose()?;
            let s = run_pipeline(&shard.items, &layout(input), &layout(output), &cfg, g.workers, log.as_ref())?;
            for (item, msg) in &s.failures {
                eprintln!("failed {item}: {msg}");
            }
            println!(
                "{}",
                serde_json::json!({"rank": g.rank, "items": shard.items.len(), "succeeded": s.succeeded, "failed": s.failed})
            );
            Ok(s.failed == 0)
        }
        Command::Evaluate {
            pred,
            reference,
            ref_thr,
            json,
        } => {
            let p = io::read_raster(&pred)?;
            let r = io::read_raster(&reference)?;
            let rep = static_report(&p, &r, cfg.pred_thr, ref_thr.unwrap_or(cfg.pred_thr))?;
            print!("{}", rep.to_text());
            if let Some(j) = json {
                write_json(&j, &rep)?;
            }
            Ok(true)
        }
        Command::Stability {
            root,
            product,
            quarters,
            quads,
            format,
            json,
        } => {
            let quarters = quarters.iter().map(|q| q.parse()).collect::<Result<Vec<Quarter>>>()?;
            let layout = Layout {
                root,
                format: format.into(),
            };
            let quads = if quads.is_empty() {
                discover_quads(&layout.root.join(&product).join(quarters[0].to_string()), layout.format)?
            } else {
                parse_quads(&quads)?
            };
            let series = quads
                .iter()
                .map(|&q| {
                    quarters
                        .iter()
                        .map(|&t| io::read_raster(layout.quarterly(&product, t, q)))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let rows = stability_rows(&series, &cfg)?;
            for row in &rows {
                println!("k={} windows={} skipped_pairs={}", row.k, row.windows, row.skipped_pairs);
                for line in row.metrics.to_text().lines().filter(|l| !l.ends_with("=na")) {
                    println!("  {line}");
                }
            }
            if let Some(j) = json {
                write_json(&j, &rows)?;
            }
            Ok(true)
        }
        Command::Change { before, after, out } => {
            let (b, a) = (io::read_raster(&before)?, io::read_raster(&after)?);
            if b.bands() < 2 || a.bands() < 2 {
                return Err(Error::Config("change needs 2-band (density, height) rasters".into()));
            }
            let field = volume_delta(&b.extract_band(0), &meters(&b, 1), &a.extract_band(0), &meters(&a, 1))?;
            let mask = growth_mask_p95(&field);
            if mask.threshold.is_none() {
                log::warn!("no positive growth; writing an empty collection");
            }
            let polys = vectorize_8conn(&mask.mask, &field.spec)?;
            write_json(&out, &change_geojson(&polys, &field))?;
            println!("{} polygons, threshold {:?}", polys.len(), mask.threshold);
            Ok(true)
        }
        Command::Shard { manifest, out } => {
            let m = Manifest::load(&manifest)?;
            let s = shard_manifest(&m, g.world_size, g.rank)?;
            Manifest::new(m.version.clone(), s.items)?.save(&out)?;
            Ok(true)
        }
        Command::Resume { manifest, logs, out } => {
            let m = Manifest::load(&manifest)?;
            let logs = logs.iter().map(|p| read_log(p)).collect::<Result<Vec<_>>>()?;
            let pending = resume_pending(&m, &logs);
            pending.save(&out)?;
            println!("{} of {} items pending", pending.len(), m.len());
            Ok(true)
        }
        Command::Synth {
            out,
            seed,
            quads,
            quarters,
            noisy,
            format,
        } => {
            let mut spec = if noisy {
                SceneSpec::noisy(seed, quarters)
            } else {
                SceneSpec {
                    seed,
                    ..SceneSpec::default()
                }
            };
            spec.quads = quads;
            let scene = synth_timeseries(&spec, quarters)?;
            let layout = Layout {
                root: out.clone(),
                format: format.into(),
            };
            write_scene(&scene, &layout)?;
            let items: Vec<WorkItem> = scene.work_items();
            Manifest::new(MANIFEST_VERSION, items)?.save(&out.join("manifest.json"))?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut logger = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    logger.init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
