//! Sharded, resumable batch execution of the per-quad post-processing.
//!
//! A manifest lists `(quad, quarter)` work items. Each rank takes the items
//! whose index is congruent to its rank modulo the world size; with several
//! nodes and GPUs per node the flat rank is `node * gpus_per_node + gpu`.
//! Workers append NDJSON records to a per-rank log, and `resume_pending`
//! replays logs to find the items that still lack a success record.
//! Outputs are written atomically, so an interrupted run leaves either a
//! complete file or none, and results do not depend on worker count.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use urbanmap_core::grid::parse_quad_id;
use urbanmap_core::postproc::{postprocess_quad, MaskLayers, UdmQuad};
use urbanmap_core::{QuadId, QuadRaster};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::io::{self, Layout, Quarter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "ItemRepr", into = "ItemRepr")]
pub struct WorkItem {
    pub quad: QuadId,
    pub quarter: Quarter,
}

#[derive(Serialize, Deserialize)]
struct ItemRepr {
    quad: String,
    quarter: String,
}

impl TryFrom<ItemRepr> for WorkItem {
    type Error = Error;

    fn try_from(r: ItemRepr) -> Result<Self> {
        Ok(WorkItem {
            quad: parse_quad_id(&r.quad)?,
            quarter: r.quarter.parse()?,
        })
    }
}

impl From<WorkItem> for ItemRepr {
    fn from(w: WorkItem) -> Self {
        ItemRepr {
            quad: w.quad.name(),
            quarter: w.quarter.to_string(),
        }
    }
}

impl fmt::Display for WorkItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.quad, self.quarter)
    }
}

impl FromStr for WorkItem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (q, t) = s
            .split_once('@')
            .ok_or_else(|| Error::Config(format!("work item {s:?} is not QUAD@QUARTER")))?;
        Ok(WorkItem {
            quad: parse_quad_id(q)?,
            quarter: t.parse()?,
        })
    }
}

/// Ordered, duplicate-free list of work items.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ManifestRepr")]
pub struct Manifest {
    pub version: String,
    items: Vec<WorkItem>,
}

#[derive(Deserialize)]
struct ManifestRepr {
    version: String,
    items: Vec<WorkItem>,
}

impl TryFrom<ManifestRepr> for Manifest {
    type Error = Error;

    fn try_from(r: ManifestRepr) -> Result<Self> {
        Manifest::new(r.version, r.items)
    }
}

pub const MANIFEST_VERSION: &str = "1";

impl Manifest {
    pub fn new(version: impl Into<String>, items: Vec<WorkItem>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for it in &items {
            if !seen.insert(*it) {
                return Err(Error::Config(format!("duplicate manifest item {it}")));
            }
        }
        Ok(Self {
            version: version.into(),
            items,
        })
    }

    pub fn items(&self) -> &[WorkItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            context: path.display().to_string(),
            source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        io::write_atomic(path, text.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardAssignment {
    pub rank: usize,
    pub world_size: usize,
    pub items: Vec<WorkItem>,
}

/// Item `i` goes to rank `i mod world_size`.
pub fn shard_manifest(m: &Manifest, world_size: usize, rank: usize) -> Result<ShardAssignment> {
    if world_size == 0 || rank >= world_size {
        return Err(Error::Config(format!(
            "rank {rank} is not in 0..{world_size}"
        )));
    }
    Ok(ShardAssignment {
        rank,
        world_size,
        items: m.items.iter().skip(rank).step_by(world_size).copied().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Allocated,
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub item: WorkItem,
    pub status: Status,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Append-only NDJSON log shared by the workers of one process.
pub struct WorkerLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl WorkerLog {
    /// Opens for appending. A torn last line (from a crash mid-write) is
    /// terminated first so new records start on their own line.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        if len > 0 {
            let mut last = [0u8];
            file.seek(SeekFrom::Start(len - 1))
                .and_then(|_| file.read_exact(&mut last))
                .map_err(|e| Error::io(&path, e))?;
            if last[0] != b'\n' {
                file.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn record(&self, item: WorkItem, status: Status, error: Option<String>) -> Result<()> {
        let rec = LogRecord {
            item,
            status,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0),
            error,
        };
        let mut line = serde_json::to_vec(&rec).expect("log record serializes");
        line.push(b'\n');
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        // one write per record keeps lines whole between threads
        f.write_all(&line)
            .and_then(|_| f.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Parses NDJSON text, skipping (and counting) lines that are not records.
pub fn parse_log(text: &str) -> (Vec<LogRecord>, usize) {
    let mut out = Vec::new();
    let mut bad = 0;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogRecord>(line) {
            Ok(r) => out.push(r),
            Err(e) => {
                log::warn!("skipping corrupt log record on line {}: {e}", n + 1);
                bad += 1;
            }
        }
    }
    (out, bad)
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (recs, bad) = parse_log(&String::from_utf8_lossy(&bytes));
    if bad > 0 {
        log::warn!("{}: skipped {bad} corrupt record(s)", path.display());
    }
    Ok(recs)
}

/// Items of `m` that no log marks as successful, in manifest order.
pub fn resume_pending(m: &Manifest, logs: &[Vec<LogRecord>]) -> Manifest {
    let done: BTreeSet<WorkItem> = logs
        .iter()
        .flatten()
        .filter(|r| r.status == Status::Success)
        .map(|r| r.item)
        .collect();
    Manifest {
        version: m.version.clone(),
        items: m.items.iter().filter(|i| !done.contains(i)).copied().collect(),
    }
}

/// Runs `f` over `items` on up to `workers` threads and returns the results
/// in item order. Workers pull the next index from a shared counter.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.clamp(1, items.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot is filled"))
        .collect()
}

/// Read-only layers reused by many items (elevation, water).
#[derive(Default)]
struct StaticCache {
    map: Mutex<HashMap<PathBuf, Arc<QuadRaster>>>,
}

impl StaticCache {
    fn get(&self, path: &Path) -> Result<Arc<QuadRaster>> {
        if let Some(r) = self.map.lock().unwrap().get(path) {
            return Ok(Arc::clone(r));
        }
        // loaded outside the lock; a racing duplicate load is harmless
        let r = Arc::new(io::read_raster(path)?);
        Ok(Arc::clone(
            self.map.lock().unwrap().entry(path.to_path_buf()).or_insert(r),
        ))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub succeeded: usize,
    pub failed: usize,
    /// In item order.
    pub failures: Vec<(WorkItem, String)>,
}

/// Post-processes one item: four quarters of predictions ending at the
/// item's quarter, the UDM of that quarter when present, and the static
/// masks, written to the product tree.
fn process_item(
    item: WorkItem,
    input: &Layout,
    output: &Layout,
    cfg: &Config,
    cache: &StaticCache,
) -> Result<()> {
    let mut quarters = Vec::with_capacity(4);
    for back in (0..4).rev() {
        let t = item
            .quarter
            .offset(-back)
            .ok_or_else(|| Error::Config(format!("no quarter {back} before {}", item.quarter)))?;
        quarters.push(io::read_raster(input.quarterly(io::PREDICTIONS, t, item.quad))?);
    }
    let udm_path = input.quarterly(io::UDM, item.quarter, item.quad);
    let udm = match io::read_raster(&udm_path) {
        Ok(r) => Some(UdmQuad::from_raster(&r)?),
        Err(e) if e.is_not_found() => None,
        Err(e) => return Err(e),
    };
    let gsw = cache.get(&input.fixed(io::GSW, item.quad))?;
    let dem = cache.get(&input.fixed(io::DEM, item.quad))?;
    let masks = MaskLayers::from_rasters(&gsw, &dem)?;
    let product = postprocess_quad(&quarters, udm.as_ref(), &masks, &cfg.postproc())?;
    io::write_raster(&product, output.quarterly(io::PRODUCT, item.quarter, item.quad))
}

/// Processes `items` with `workers` threads. Item errors are logged and
/// counted; only a failure to write the log aborts the run.
pub fn run_pipeline(
    items: &[WorkItem],
    input: &Layout,
    output: &Layout,
    cfg: &Config,
    workers: usize,
    log: Option<&WorkerLog>,
) -> Result<Summary> {
    cfg.validate()?;
    let cache = StaticCache::default();
    let results = parallel_map(items, workers, |&item| -> Result<Option<String>> {
        if let Some(l) = log {
            l.record(item, Status::Allocated, None)?;
        }
        match process_item(item, input, output, cfg, &cache) {
            Ok(()) => {
                if let Some(l) = log {
                    l.record(item, Status::Success, None)?;
                }
                Ok(None)
            }
            Err(e) => {
                let msg = e.to_string();
                log::warn!("{item}: {msg}");
                if let Some(l) = log {
                    l.record(item, Status::Failure, Some(msg.clone()))?;
                }
                Ok(Some(msg))
            }
        }
    });
    let mut summary = Summary::default();
    for (item, r) in items.iter().zip(results) {
        match r? {
            None => summary.succeeded += 1,
            Some(msg) => {
                summary.failed += 1;
                summary.failures.push((*item, msg));
            }
        }
    }
    Ok(summary)
}

/// Terminal status per item across several logs: the last record wins,
/// and any success sticks.
pub fn terminal_status(logs: &[Vec<LogRecord>]) -> BTreeMap<WorkItem, Status> {
    let mut out = BTreeMap::new();
    for r in logs.iter().flatten() {
        if r.status == Status::Allocated {
            continue;
        }
        let e = out.entry(r.item).or_insert(r.status);
        if *e != Status::Success {
            *e = r.status;
        }
    }
    out
}
